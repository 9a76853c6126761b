#include "fkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fkd/rng.hpp"

namespace fkd {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

double parse_double(const std::string& s, int line_no) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("annotations: bad number '" + s + "' on line " +
                             std::to_string(line_no));
  }
}

struct Vec3 {
  double x, y, z;
};

Vec3 mat_apply(const std::array<double, 9>& m, const Vec3& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
          m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Vec3 mat_apply_transposed(const std::array<double, 9>& m, const Vec3& v) {
  return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
          m[1] * v.x + m[4] * v.y + m[7] * v.z,
          m[2] * v.x + m[5] * v.y + m[8] * v.z};
}

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  return {v.x / n, v.y / n, v.z / n};
}

constexpr double kCameraDistance = 4.0;
// surface points this close to the silhouette count as facing away
constexpr double kVisibilityMargin = 0.05;

}  // namespace

std::vector<Annotation> load_annotations(const std::string& path,
                                         int num_keypoints) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("annotations: cannot open " + path);
  std::vector<Annotation> out;
  std::string line;
  int line_no = 0;
  const size_t want = 8 + 3 * static_cast<size_t>(num_keypoints);
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != want) {
      throw std::runtime_error(
          "annotations: line " + std::to_string(line_no) + " has " +
          std::to_string(fields.size()) + " fields, expected " +
          std::to_string(want));
    }
    Annotation a;
    a.image_path = fields[0];
    a.box_x = parse_double(fields[1], line_no);
    a.box_y = parse_double(fields[2], line_no);
    a.box_w = parse_double(fields[3], line_no);
    a.box_h = parse_double(fields[4], line_no);
    a.yaw = parse_double(fields[5], line_no);
    a.pitch = parse_double(fields[6], line_no);
    a.roll = parse_double(fields[7], line_no);
    for (int k = 0; k < num_keypoints; ++k) {
      Keypoint p;
      const double x = parse_double(fields[8 + 3 * static_cast<size_t>(k)], line_no);
      const double y = parse_double(fields[9 + 3 * static_cast<size_t>(k)], line_no);
      const double v = parse_double(fields[10 + 3 * static_cast<size_t>(k)], line_no);
      if (v != 0.0 && v != 1.0) {
        throw std::runtime_error("annotations: visibility must be 0/1 on line " +
                                 std::to_string(line_no));
      }
      p.visible = v == 1.0;
      if (p.visible) {
        if (!std::isfinite(x) || !std::isfinite(y)) {
          throw std::runtime_error(
              "annotations: visible keypoint without coordinates on line " +
              std::to_string(line_no));
        }
        p.x = x;
        p.y = y;
      }
      a.points.push_back(p);
    }
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations(const std::string& path,
                      const std::vector<Annotation>& annotations) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("annotations: cannot write " + path);
  f.precision(17);
  for (const auto& a : annotations) {
    f << a.image_path << '\t' << a.box_x << '\t' << a.box_y << '\t' << a.box_w
      << '\t' << a.box_h << '\t' << a.yaw << '\t' << a.pitch << '\t' << a.roll;
    for (const auto& p : a.points) {
      if (p.visible) {
        f << '\t' << p.x << '\t' << p.y << "\t1";
      } else {
        f << "\tnan\tnan\t0";
      }
    }
    f << '\n';
  }
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("ppm: " + path + " is not an 8-bit P6 file");
  }
  f.get();  // single whitespace after the header
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("ppm: truncated pixel data in " + path);
  std::vector<double> data(raw.size());
  const std::int64_t plane = static_cast<std::int64_t>(w) * h;
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      data[static_cast<size_t>(c * plane + p)] = raw[static_cast<size_t>(3 * p + c)] / 255.0;
    }
  }
  return Tensor::from({3, h, w}, std::move(data));
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("ppm: expected [3,H,W] tensor, got " +
                                shape_str(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  const std::int64_t plane = static_cast<std::int64_t>(w) * h;
  std::vector<unsigned char> raw(static_cast<size_t>(plane) * 3);
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data()[static_cast<size_t>(c * plane + p)], 0.0, 1.0);
      raw[static_cast<size_t>(3 * p + c)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  f.write(reinterpret_cast<const char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
}

Tensor image_tensor(const Sample& sample) {
  std::vector<double> data(sample.image.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = sample.image[i] / 255.0;
  return Tensor::from({3, sample.size, sample.size}, std::move(data));
}

Tensor label_map(const Sample& sample, int num_keypoints) {
  const int s = sample.size;
  Tensor map = Tensor::zeros({num_keypoints + 1, s, s});
  const std::int64_t plane = static_cast<std::int64_t>(s) * s;
  // background everywhere, then punch in the keypoint pixels
  for (std::int64_t p = 0; p < plane; ++p) {
    map.data()[static_cast<size_t>(num_keypoints * plane + p)] = 1.0;
  }
  for (int k = 0; k < num_keypoints; ++k) {
    if (sample.visibility[static_cast<size_t>(k)] != 1.0) continue;
    const int px = static_cast<int>(std::floor(sample.coords_px[static_cast<size_t>(2 * k)]));
    const int py = static_cast<int>(std::floor(sample.coords_px[static_cast<size_t>(2 * k + 1)]));
    if (px < 0 || px >= s || py < 0 || py >= s) continue;
    const std::int64_t p = static_cast<std::int64_t>(py) * s + px;
    map.data()[static_cast<size_t>(num_keypoints * plane + p)] = 0.0;
    map.data()[static_cast<size_t>(k * plane + p)] = 1.0;
  }
  return map;
}

Sample prepare_sample(const Tensor& image, const Annotation& annotation,
                      const ModelConfig& config, int* warnings) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("prepare_sample: expected [3,H,W] image");
  }
  if (static_cast<int>(annotation.points.size()) != config.num_keypoints) {
    throw std::invalid_argument("prepare_sample: annotation has " +
                                std::to_string(annotation.points.size()) +
                                " points, config wants " +
                                std::to_string(config.num_keypoints));
  }
  if (annotation.box_w <= 0 || annotation.box_h <= 0) {
    throw std::invalid_argument("prepare_sample: non-positive face box");
  }
  const int s = config.input_size;
  const int ih = image.dim(1), iw = image.dim(2);
  const double margin = 0.1;
  const double cx0 = annotation.box_x - margin * annotation.box_w;
  const double cy0 = annotation.box_y - margin * annotation.box_h;
  const double cw = (1.0 + 2.0 * margin) * annotation.box_w;
  const double ch = (1.0 + 2.0 * margin) * annotation.box_h;

  Sample out;
  out.size = s;
  out.pose = {annotation.yaw, annotation.pitch, annotation.roll};
  out.face_size = std::sqrt(annotation.box_w * s / cw * annotation.box_h * s / ch);
  out.box_w = annotation.box_w;
  out.box_h = annotation.box_h;

  // bilinear resample; reads outside the source image are black
  out.image.resize(static_cast<size_t>(3) * s * s);
  const std::int64_t plane = static_cast<std::int64_t>(ih) * iw;
  auto src = [&](int c, int y, int x) -> double {
    if (y < 0 || y >= ih || x < 0 || x >= iw) return 0.0;
    return image.data()[static_cast<size_t>(c * plane + static_cast<std::int64_t>(y) * iw + x)];
  };
  for (int ty = 0; ty < s; ++ty) {
    for (int tx = 0; tx < s; ++tx) {
      const double sx = cx0 + (tx + 0.5) * cw / s - 0.5;
      const double sy = cy0 + (ty + 0.5) * ch / s - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * src(c, y0, x0) + fx * src(c, y0, x0 + 1)) +
                         fy * ((1 - fx) * src(c, y0 + 1, x0) + fx * src(c, y0 + 1, x0 + 1));
        out.image[static_cast<size_t>((c * s + ty)) * s + tx] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }

  out.coords_px.assign(static_cast<size_t>(2 * config.num_keypoints), 0.0);
  out.visibility.assign(static_cast<size_t>(config.num_keypoints), 0.0);
  for (int k = 0; k < config.num_keypoints; ++k) {
    const Keypoint& p = annotation.points[static_cast<size_t>(k)];
    if (!p.visible) continue;
    const double px = (p.x - cx0) * s / cw;
    const double py = (p.y - cy0) * s / ch;
    if (px < 0.0 || px >= s || py < 0.0 || py >= s) {
      if (warnings) ++*warnings;
      continue;  // resized outside the crop: demoted to invisible
    }
    out.coords_px[static_cast<size_t>(2 * k)] = px;
    out.coords_px[static_cast<size_t>(2 * k + 1)] = py;
    out.visibility[static_cast<size_t>(k)] = 1.0;
  }
  return out;
}

std::string MeanShape::serialize() const {
  std::ostringstream os;
  os.precision(17);
  for (double v : coords) os << v << "\n";
  return os.str();
}

MeanShape MeanShape::parse(const std::string& text) {
  MeanShape m;
  std::istringstream is(text);
  double v;
  while (is >> v) m.coords.push_back(v);
  return m;
}

MeanShape compute_mean_shape(const std::vector<Sample>& samples,
                             int num_keypoints) {
  MeanShape mean;
  mean.coords.assign(static_cast<size_t>(2 * num_keypoints), 0.5);
  for (int k = 0; k < num_keypoints; ++k) {
    double sx = 0.0, sy = 0.0;
    int count = 0;
    for (const auto& s : samples) {
      if (s.visibility[static_cast<size_t>(k)] != 1.0) continue;
      sx += s.coords_px[static_cast<size_t>(2 * k)] / s.size;
      sy += s.coords_px[static_cast<size_t>(2 * k + 1)] / s.size;
      ++count;
    }
    if (count > 0) {
      mean.coords[static_cast<size_t>(2 * k)] = sx / count;
      mean.coords[static_cast<size_t>(2 * k + 1)] = sy / count;
    }
  }
  return mean;
}

std::vector<double> normalize_shape(const std::vector<double>& coords_frac,
                                    const MeanShape& mean) {
  if (coords_frac.size() != mean.coords.size()) {
    throw std::invalid_argument("normalize_shape: length mismatch");
  }
  std::vector<double> out(coords_frac.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = coords_frac[i] - mean.coords[i];
  return out;
}

std::vector<double> denormalize_shape(const std::vector<double>& offsets,
                                      const MeanShape& mean) {
  if (offsets.size() != mean.coords.size()) {
    throw std::invalid_argument("denormalize_shape: length mismatch");
  }
  std::vector<double> out(offsets.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = offsets[i] + mean.coords[i];
  return out;
}

std::array<double, 9> rotation_matrix(double yaw_deg, double pitch_deg,
                                      double roll_deg) {
  const double d2r = std::acos(-1.0) / 180.0;
  const double cy = std::cos(yaw_deg * d2r), sy = std::sin(yaw_deg * d2r);
  const double cp = std::cos(pitch_deg * d2r), sp = std::sin(pitch_deg * d2r);
  const double cr = std::cos(roll_deg * d2r), sr = std::sin(roll_deg * d2r);
  // R = Rz(roll) * Rx(pitch) * Ry(yaw); x right, y down, z toward camera
  const std::array<double, 9> ry = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const std::array<double, 9> rx = {1, 0, 0, 0, cp, -sp, 0, sp, cp};
  const std::array<double, 9> rz = {cr, -sr, 0, sr, cr, 0, 0, 0, 1};
  auto matmul = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) c[static_cast<size_t>(3 * i + j)] +=
            a[static_cast<size_t>(3 * i + k)] * b[static_cast<size_t>(3 * k + j)];
    return c;
  };
  return matmul(rz, matmul(rx, ry));
}

std::vector<std::array<double, 3>> synth_template(int num_keypoints) {
  std::vector<Vec3> pts;
  if (num_keypoints == 5) {
    pts = {normalized({0.0, 0.05, 1.0}),     // nose (root)
           normalized({-0.45, -0.35, 0.82}),  // left eye
           normalized({0.45, -0.35, 0.82}),   // right eye
           normalized({-0.35, 0.55, 0.76}),   // mouth left
           normalized({0.35, 0.55, 0.76})};   // mouth right
  } else {
    // spiral over the front cap so all points face the camera frontally
    const double golden = std::acos(-1.0) * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < num_keypoints; ++k) {
      const double z = 0.45 + 0.5 * (k + 0.5) / num_keypoints;
      const double r = std::sqrt(1.0 - z * z);
      pts.push_back({r * std::cos(golden * k), r * std::sin(golden * k), z});
    }
  }
  std::vector<std::array<double, 3>> out;
  for (const auto& p : pts) out.push_back({p.x, p.y, p.z});
  return out;
}

SynthResult synthesize_sample(std::uint64_t seed, const ModelConfig& config) {
  const int s = config.input_size;
  const int l = config.num_keypoints;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> yaw_d(-90.0, 90.0);
  std::uniform_real_distribution<double> tilt_d(-30.0, 30.0);
  std::uniform_real_distribution<double> off_d(-0.05, 0.05);
  std::uniform_real_distribution<double> scale_d(0.9, 1.1);
  std::normal_distribution<double> noise(0.0, 0.02);

  const double yaw = yaw_d(rng), pitch = tilt_d(rng), roll = tilt_d(rng);
  const double ox = off_d(rng) * s, oy = off_d(rng) * s;
  const double f = 1.16 * s * scale_d(rng);
  // half the samples hide one keypoint's local pattern behind a flat patch
  // (like hair or glasses); the point stays annotated and visible, so its
  // location must be inferred from the surrounding structure
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int occluded = -1;
  if (u01(rng) < 0.5) occluded = std::min(l - 1, static_cast<int>(u01(rng) * l));
  const double occluder_radius = 0.25;  // radians on the unit sphere
  const std::array<double, 9> rot = rotation_matrix(yaw, pitch, roll);
  const double d = kCameraDistance;

  const auto tmpl = synth_template(l);
  const Vec3 light = normalized({0.4, -0.6, 0.7});

  // fixed palette for the per-keypoint surface patterns
  static const double kPalette[6][3] = {{1.0, 0.2, 0.2}, {0.2, 1.0, 0.2},
                                        {0.2, 0.4, 1.0}, {1.0, 1.0, 0.2},
                                        {1.0, 0.3, 1.0}, {0.2, 1.0, 1.0}};
  const double pattern_radius = 0.35;  // radians on the unit sphere
  // mirrored landmark pairs share one pattern (like real faces, where left
  // and right landmarks look alike), so telling them apart needs context
  std::vector<int> pattern_id(static_cast<size_t>(l));
  if (l == 5) {
    pattern_id = {0, 1, 1, 2, 2};  // nose, eyes, mouth corners
  } else {
    for (int k = 0; k < l; ++k) pattern_id[static_cast<size_t>(k)] = k;
  }

  Tensor image = Tensor::zeros({3, s, s});
  const std::int64_t plane = static_cast<std::int64_t>(s) * s;
  for (int py = 0; py < s; ++py) {
    for (int px = 0; px < s; ++px) {
      const Vec3 dir = {(px + 0.5 - s / 2.0 - ox) / f,
                        (py + 0.5 - s / 2.0 - oy) / f, -1.0};
      const double a = dir.x * dir.x + dir.y * dir.y + dir.z * dir.z;
      const double b = 2.0 * d * dir.z;
      const double c = d * d - 1.0;
      const double disc = b * b - 4.0 * a * c;
      double rgb[3];
      if (disc < 0.0) {
        rgb[0] = 0.10;
        rgb[1] = 0.12 + 0.10 * (py + 0.5) / s;
        rgb[2] = 0.20;
      } else {
        const double t = (-b - std::sqrt(disc)) / (2.0 * a);
        const Vec3 n = {t * dir.x, t * dir.y, d + t * dir.z};  // unit normal
        const Vec3 m = mat_apply_transposed(rot, n);
        // canonical-coordinate ramp: color encodes the head orientation
        rgb[0] = 0.5 + 0.35 * m.x;
        rgb[1] = 0.5 + 0.35 * m.y;
        rgb[2] = 0.5 + 0.35 * m.z;
        for (int k = 0; k < l; ++k) {
          const auto& tk = tmpl[static_cast<size_t>(k)];
          const double dot = std::clamp(
              m.x * tk[0] + m.y * tk[1] + m.z * tk[2], -1.0, 1.0);
          const double ang = std::acos(dot);
          if (ang >= pattern_radius) continue;
          const double rel = ang / pattern_radius;
          // concentric rings with a per-pattern frequency and color; the
          // pattern nearly masks the orientation ramp so the rings carry no
          // positional cue of their own
          const int pid = pattern_id[static_cast<size_t>(k)];
          const double osc =
              0.5 + 0.5 * std::cos((pid + 3) * std::acos(-1.0) * rel);
          const double blend = 0.95 * (1.0 - rel * rel * rel * rel);
          for (int ch = 0; ch < 3; ++ch) {
            rgb[ch] = (1.0 - blend) * rgb[ch] + blend * kPalette[pid % 6][ch] * osc;
          }
        }
        if (occluded >= 0) {
          const auto& to = tmpl[static_cast<size_t>(occluded)];
          const double dot = std::clamp(
              m.x * to[0] + m.y * to[1] + m.z * to[2], -1.0, 1.0);
          if (std::acos(dot) < occluder_radius) {
            rgb[0] = 0.45;
            rgb[1] = 0.42;
            rgb[2] = 0.40;
          }
        }
        const double shade = 0.35 + 0.65 * std::max(0.0, n.x * light.x +
                                                             n.y * light.y +
                                                             n.z * light.z);
        for (double& v : rgb) v *= shade;
      }
      for (int ch = 0; ch < 3; ++ch) {
        image.data()[static_cast<size_t>(ch * plane + py * s + px)] =
            std::clamp(rgb[ch] + noise(rng), 0.0, 1.0);
      }
    }
  }

  Annotation ann;
  ann.yaw = yaw;
  ann.pitch = pitch;
  ann.roll = roll;
  const double radius = f / std::sqrt(d * d - 1.0);
  ann.box_x = s / 2.0 + ox - radius;
  ann.box_y = s / 2.0 + oy - radius;
  ann.box_w = 2.0 * radius;
  ann.box_h = 2.0 * radius;
  for (int k = 0; k < l; ++k) {
    const auto& tk = tmpl[static_cast<size_t>(k)];
    const Vec3 p = mat_apply(rot, {tk[0], tk[1], tk[2]});
    Keypoint kp;
    // back-face test against the camera at (0,0,d): (cam - p) . normal > margin
    kp.visible = d * p.z - 1.0 > kVisibilityMargin;
    if (kp.visible) {
      kp.x = f * p.x / (d - p.z) + s / 2.0 + ox;
      kp.y = f * p.y / (d - p.z) + s / 2.0 + oy;
    }
    ann.points.push_back(kp);
  }
  return {image, ann};
}

void write_synth_dataset(const std::string& dir, int count,
                         std::uint64_t base_seed, const ModelConfig& config) {
  fs::create_directories(fs::path(dir) / "images");
  std::vector<Annotation> annotations;
  for (int i = 0; i < count; ++i) {
    SynthResult r = synthesize_sample(
        derive_seed(base_seed, RngStream::kSynth, static_cast<std::uint64_t>(i)),
        config);
    std::ostringstream name;
    name << "images/" << std::setw(5) << std::setfill('0') << i << ".ppm";
    r.annotation.image_path = name.str();
    write_ppm((fs::path(dir) / name.str()).string(), r.image);
    annotations.push_back(std::move(r.annotation));
  }
  save_annotations((fs::path(dir) / "annotations.tsv").string(), annotations);
}

std::vector<Sample> load_dataset(const std::string& annotation_file,
                                 const ModelConfig& config, int* warnings) {
  const auto annotations = load_annotations(annotation_file, config.num_keypoints);
  const fs::path base = fs::path(annotation_file).parent_path();
  std::vector<Sample> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) {
    fs::path img = a.image_path;
    if (img.is_relative()) img = base / img;
    out.push_back(prepare_sample(read_ppm(img.string()), a, config, warnings));
  }
  return out;
}

}  // namespace fkd
