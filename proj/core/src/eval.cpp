#include "fkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fkd/rng.hpp"

namespace fkd {

std::string to_string(DecodeMode m) {
  return m == DecodeMode::kRegression ? "regression" : "heatmap";
}

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "regression") return DecodeMode::kRegression;
  if (s == "heatmap") return DecodeMode::kHeatmap;
  throw std::invalid_argument("eval: unknown decode mode " + s);
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kPifa: return "pifa";
    case Protocol::kFull: return "full";
    case Protocol::kAfw: return "afw";
  }
  throw std::logic_error("eval: bad protocol enum");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "pifa") return Protocol::kPifa;
  if (s == "full") return Protocol::kFull;
  if (s == "afw") return Protocol::kAfw;
  throw std::invalid_argument("eval: unknown protocol " + s);
}

Prediction decode_keypoints(const ModelOutput& out, const MeanShape& mean,
                            DecodeMode mode, int input_size) {
  Prediction p;
  p.visibility = out.visibility.data();
  for (int i = 0; i < 3; ++i) p.pose[static_cast<size_t>(i)] = out.pose.data()[static_cast<size_t>(i)];

  if (mode == DecodeMode::kRegression) {
    if (out.coords.ndim() != 1) {
      throw std::invalid_argument("decode_keypoints: expected unbatched coords");
    }
    const auto frac = denormalize_shape(out.coords.data(), mean);
    p.coords_px.resize(frac.size());
    for (size_t i = 0; i < frac.size(); ++i) p.coords_px[i] = frac[i] * input_size;
    return p;
  }

  const Tensor& maps = out.maps;
  if (maps.ndim() != 3) {
    throw std::invalid_argument("decode_keypoints: expected unbatched maps");
  }
  const int l = maps.dim(0) - 1;
  const int h = maps.dim(1), w = maps.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  p.coords_px.resize(static_cast<size_t>(2 * l));
  for (int k = 0; k < l; ++k) {
    const double* m = maps.data().data() + k * plane;
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < plane; ++i)
      if (m[i] > m[best]) best = i;
    p.coords_px[static_cast<size_t>(2 * k)] = static_cast<double>(best % w);
    p.coords_px[static_cast<size_t>(2 * k + 1)] = static_cast<double>(best / w);
  }
  return p;
}

double nme(const std::vector<double>& pred_px, const std::vector<double>& gt_px,
           const std::vector<double>& visibility, double face_size) {
  if (!(face_size > 0.0)) {
    throw std::invalid_argument("nme: face_size must be positive");
  }
  if (pred_px.size() != gt_px.size() ||
      pred_px.size() != 2 * visibility.size()) {
    throw std::invalid_argument("nme: length mismatch");
  }
  double total = 0.0;
  int count = 0;
  for (size_t k = 0; k < visibility.size(); ++k) {
    if (visibility[k] != 1.0) continue;
    const double dx = pred_px[2 * k] - gt_px[2 * k];
    const double dy = pred_px[2 * k + 1] - gt_px[2 * k + 1];
    total += std::sqrt(dx * dx + dy * dy) / face_size;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("nme: no visible landmarks");
  return total / count;
}

std::vector<std::pair<double, double>> ced_curve(
    const std::vector<double>& errors, const std::vector<double>& thresholds) {
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    std::int64_t below = 0;
    for (double e : errors)
      if (e <= t) ++below;
    out.emplace_back(t, errors.empty()
                            ? 0.0
                            : static_cast<double>(below) / static_cast<double>(errors.size()));
  }
  return out;
}

PoseMetrics pose_metrics(const std::vector<std::array<double, 3>>& pred,
                         const std::vector<std::array<double, 3>>& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("pose_metrics: need equal nonempty pose lists");
  }
  PoseMetrics m;
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t a = 0; a < 3; ++a) {
      m.mae[a] += std::abs(pred[i][a] - gt[i][a]);
      const double rounded = std::round(pred[i][a] / 15.0) * 15.0;
      if (std::abs(rounded - gt[i][a]) <= 15.0 + 1e-9) m.accuracy[a] += 1.0;
    }
  }
  for (size_t a = 0; a < 3; ++a) {
    m.mae[a] /= static_cast<double>(pred.size());
    m.accuracy[a] /= static_cast<double>(pred.size());
  }
  return m;
}

std::string EvalReport::text() const {
  std::ostringstream os;
  os.precision(6);
  os << "protocol=" << protocol << "\n";
  os << "evaluated=" << evaluated << "\n";
  os << "skipped=" << skipped << "\n";
  os << "mean_nme_percent=" << 100.0 * mean_nme << "\n";
  if (protocol == "pifa") {
    static const char* kBins[] = {"0_30", "30_60", "60_90"};
    for (int b = 0; b < 3; ++b) {
      os << "nme_percent_yaw_" << kBins[b] << "="
         << (bin_count[static_cast<size_t>(b)] > 0
                 ? 100.0 * bin_nme[static_cast<size_t>(b)]
                 : 0.0)
         << "\n";
      os << "count_yaw_" << kBins[b] << "=" << bin_count[static_cast<size_t>(b)] << "\n";
    }
  }
  static const char* kAngles[] = {"yaw", "pitch", "roll"};
  for (int a = 0; a < 3; ++a) {
    os << "pose_mae_" << kAngles[a] << "=" << pose.mae[static_cast<size_t>(a)] << "\n";
    os << "pose_acc15_" << kAngles[a] << "=" << pose.accuracy[static_cast<size_t>(a)] << "\n";
  }
  return os.str();
}

void EvalReport::write_ced_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << "threshold,fraction\n";
  for (const auto& [t, frac] : ced) f << t << ',' << frac << '\n';
}

EvalReport run_protocol(Model& model, const std::vector<Sample>& samples,
                        Protocol protocol, DecodeMode mode,
                        const MeanShape& mean) {
  EvalReport report;
  report.protocol = to_string(protocol);
  std::vector<std::array<double, 3>> pose_pred, pose_gt;
  std::array<double, 3> bin_total = {0, 0, 0};

  for (const auto& s : samples) {
    if (protocol == Protocol::kPifa &&
        (!std::isfinite(s.pose[0]) || !std::isfinite(s.pose[1]) ||
         !std::isfinite(s.pose[2]))) {
      throw std::invalid_argument(
          "run_protocol: pifa needs pose annotations on every sample");
    }
    if (protocol == Protocol::kAfw && !(s.box_h > 150.0 && s.box_w > 150.0)) {
      continue;
    }
    const bool any_visible =
        std::any_of(s.visibility.begin(), s.visibility.end(),
                    [](double v) { return v == 1.0; });
    if (!any_visible) {
      ++report.skipped;
      continue;
    }
    ModelOutput out = forward(model, image_tensor(s), BatchNormMode::kInfer);
    Prediction pred = decode_keypoints(out, mean, mode, s.size);
    const double err = nme(pred.coords_px, s.coords_px, s.visibility, s.face_size);
    report.per_sample_nme.push_back(err);
    pose_pred.push_back(pred.pose);
    pose_gt.push_back(s.pose);
    if (protocol == Protocol::kPifa) {
      const double ay = std::abs(s.pose[0]);
      const int bin = ay <= 30.0 ? 0 : (ay <= 60.0 ? 1 : 2);
      bin_total[static_cast<size_t>(bin)] += err;
      ++report.bin_count[static_cast<size_t>(bin)];
    }
    ++report.evaluated;
  }

  if (report.evaluated > 0) {
    report.mean_nme =
        std::accumulate(report.per_sample_nme.begin(),
                        report.per_sample_nme.end(), 0.0) /
        static_cast<double>(report.evaluated);
    report.pose = pose_metrics(pose_pred, pose_gt);
  }
  for (size_t b = 0; b < 3; ++b) {
    if (report.bin_count[b] > 0) report.bin_nme[b] = bin_total[b] / report.bin_count[b];
  }
  std::vector<double> thresholds;
  for (int i = 0; i <= 50; ++i) thresholds.push_back(0.002 * i);
  report.ced = ced_curve(report.per_sample_nme, thresholds);
  return report;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(
    int n, double test_fraction, std::uint64_t seed) {
  if (n < 0 || test_fraction < 0.0 || test_fraction > 1.0) {
    throw std::invalid_argument("split_indices: bad arguments");
  }
  std::vector<int> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  auto rng = make_rng(seed, RngStream::kSplit);
  std::shuffle(all.begin(), all.end(), rng);
  const int test_n = static_cast<int>(std::lround(n * test_fraction));
  std::vector<int> test(all.begin(), all.begin() + test_n);
  std::vector<int> train(all.begin() + test_n, all.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

}  // namespace fkd
