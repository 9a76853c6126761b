#include "fkd/train.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fkd/losses.hpp"
#include "fkd/rng.hpp"

namespace fkd {

namespace {

struct Batch {
  Tensor images;    // [N,3,S,S]
  Tensor labels;    // [N,L+1,S,S]
  Tensor coords;    // [N,2L] mean-shape offsets
  Tensor vis;       // [N,L]
  Tensor pose;      // [N,3]
};

Batch assemble_batch(const std::vector<Sample>& data, const MeanShape& mean,
                     const ModelConfig& cfg, std::uint64_t batch_seed) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const int n = cfg.batch_size;
  const int s = cfg.input_size;
  const int l = cfg.num_keypoints;
  auto rng = std::mt19937_64(batch_seed);
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);

  Batch b;
  b.images = Tensor::zeros({n, 3, s, s});
  b.labels = Tensor::zeros({n, l + 1, s, s});
  b.coords = Tensor::zeros({n, 2 * l});
  b.vis = Tensor::zeros({n, l});
  b.pose = Tensor::zeros({n, 3});
  const std::int64_t image_sz = static_cast<std::int64_t>(3) * s * s;
  const std::int64_t label_sz = static_cast<std::int64_t>(l + 1) * s * s;
  for (int i = 0; i < n; ++i) {
    const Sample& sm = data[pick(rng)];
    if (sm.size != s) throw std::invalid_argument("train: sample size mismatch");
    for (std::int64_t j = 0; j < image_sz; ++j) {
      b.images.data()[static_cast<size_t>(i * image_sz + j)] =
          sm.image[static_cast<size_t>(j)] / 255.0;
    }
    Tensor lm = label_map(sm, l);
    std::copy(lm.data().begin(), lm.data().end(),
              b.labels.data().begin() + i * label_sz);
    for (int k = 0; k < 2 * l; ++k) {
      b.coords.data()[static_cast<size_t>(i * 2 * l + k)] =
          sm.coords_px[static_cast<size_t>(k)] / s -
          mean.coords[static_cast<size_t>(k)];
    }
    for (int k = 0; k < l; ++k) {
      b.vis.data()[static_cast<size_t>(i * l + k)] = sm.visibility[static_cast<size_t>(k)];
    }
    for (int k = 0; k < 3; ++k) {
      b.pose.data()[static_cast<size_t>(i * 3 + k)] = sm.pose[static_cast<size_t>(k)];
    }
  }
  return b;
}

void mark_trainable(Model& model, const std::vector<std::string>& names) {
  const std::set<std::string> wanted(names.begin(), names.end());
  for (auto& [name, t] : model.store.params()) {
    t.set_requires_grad(wanted.count(name) > 0);
  }
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, const std::vector<double>& data) {
  std::vector<float> f(data.size());
  for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(f.data()),
           static_cast<std::streamsize>(4 * f.size()));
}

std::vector<double> read_f32(std::istream& is, std::int64_t count) {
  std::vector<float> f(static_cast<size_t>(count));
  is.read(reinterpret_cast<char*>(f.data()),
          static_cast<std::streamsize>(4 * count));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  return std::vector<double>(f.begin(), f.end());
}

void write_named(std::ostream& os, const std::string& name, const Shape& shape,
                 const std::vector<double>& data) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
  write_f32(os, data);
}

}  // namespace

double scheduled_lr(double base_lr, int iteration, int total_iters) {
  double lr = base_lr;
  if (iteration >= static_cast<int>(0.6 * total_iters)) lr *= 0.1;
  if (iteration >= static_cast<int>(0.85 * total_iters)) lr *= 0.1;
  return lr;
}

void sgd_step(ParamStore& store, const std::vector<std::string>& names,
              SgdState& state, double lr, double momentum) {
  for (const auto& name : names) {
    Tensor p = store.at(name);
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(p.data().size(), 0.0);
    if (v.size() != p.data().size()) {
      throw std::invalid_argument("sgd_step: velocity shape mismatch for " + name);
    }
    const bool has_grad = p.has_grad();
    for (size_t i = 0; i < v.size(); ++i) {
      const double g = has_grad ? p.grad()[i] : 0.0;
      v[i] = momentum * v[i] - lr * g;
      p.data()[i] += v[i];
    }
  }
}

LossRecord train_step(Model& model, const std::vector<Sample>& data,
                      SgdState& opt, const MeanShape& mean, int iteration,
                      int total_iters, std::uint64_t base_seed,
                      bool classification_only) {
  const ModelConfig& cfg = model.config;
  const auto trainable = trainable_parameters(model, classification_only);
  mark_trainable(model, trainable);

  Batch batch = assemble_batch(
      data, mean, cfg,
      derive_seed(base_seed, RngStream::kBatch, static_cast<std::uint64_t>(iteration)));
  NegativeMask mask = build_negative_mask(
      batch.labels, cfg.negative_keep_rate,
      derive_seed(base_seed, RngStream::kMask, static_cast<std::uint64_t>(iteration)));

  model.store.zero_grads();
  LossRecord rec;
  Tensor loss;
  if (classification_only) {
    Tensor maps = forward_classification(model, batch.images, BatchNormMode::kTrain);
    loss = classification_loss(maps, batch.labels, mask, cfg.classification_mean);
    rec.l0 = loss.item();
    rec.total = rec.l0 * cfg.loss_weights[0];
    loss = scale(loss, cfg.loss_weights[0]);
  } else {
    ModelOutput out = forward(model, batch.images, BatchNormMode::kTrain);
    Tensor l0 = classification_loss(out.maps, batch.labels, mask,
                                    cfg.classification_mean);
    Tensor l1 = coordinate_loss(out.coords, batch.coords, batch.vis);
    Tensor l2 = pose_loss(out.pose, batch.pose);
    Tensor l3 = visibility_loss(out.visibility, batch.vis);
    LossBreakdown b = total_loss(l0, l1, l2, l3, cfg.loss_weights);
    rec.l0 = b.L0();
    rec.l1 = b.L1();
    rec.l2 = b.L2();
    rec.l3 = b.L3();
    rec.total = b.total_value();
    loss = b.total;
  }
  loss.backward();
  sgd_step(model.store, trainable,
           opt, scheduled_lr(cfg.learning_rate, iteration, total_iters),
           cfg.momentum);
  return rec;
}

void run_training(Model& model, const std::vector<Sample>& data, SgdState& opt,
                  const MeanShape& mean, bool classification_only,
                  int start_iter, int iters, int total_iters,
                  std::uint64_t base_seed, std::ostream* csv) {
  for (int it = start_iter; it < start_iter + iters; ++it) {
    LossRecord rec = train_step(model, data, opt, mean, it, total_iters,
                                base_seed, classification_only);
    if (csv) {
      (*csv) << it << ',' << rec.l0 << ',' << rec.l1 << ',' << rec.l2 << ','
             << rec.l3 << ',' << rec.total << '\n';
    }
  }
}

void train_full(Model& model, const std::vector<Sample>& data, SgdState& opt,
                const MeanShape& mean, std::uint64_t base_seed,
                std::ostream* pretrain_csv, std::ostream* multitask_csv) {
  run_training(model, data, opt, mean, true, 0, model.config.pretrain_iters,
               model.config.pretrain_iters, base_seed, pretrain_csv);
  run_training(model, data, opt, mean, false, 0, model.config.multitask_iters,
               model.config.multitask_iters, base_seed, multitask_csv);
}

void save_checkpoint(const std::string& path, const Model& model,
                     const SgdState& opt, const MeanShape& mean,
                     int iteration, std::uint64_t base_seed) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f << "FKDCKPT 1\n";
  f << "iteration=" << iteration << "\n";
  f << "seed=" << base_seed << "\n";
  f << "config_begin\n" << model.config.serialize() << "config_end\n";
  f << "tree_begin\n" << model.tree.serialize() << "tree_end\n";
  f << "binary\n";

  // sorted name -> (shape, data) view over everything worth persisting
  std::map<std::string, std::pair<Shape, const std::vector<double>*>> entries;
  for (const auto& [name, t] : model.store.params()) {
    entries.emplace("param." + name, std::make_pair(t.shape(), &t.data()));
  }
  for (const auto& [name, stats] : model.store.bn()) {
    if (stats.running_mean.empty()) continue;
    const Shape shape{static_cast<int>(stats.running_mean.size())};
    entries.emplace("bn." + name + ".running_mean",
                    std::make_pair(shape, &stats.running_mean));
    entries.emplace("bn." + name + ".running_var",
                    std::make_pair(shape, &stats.running_var));
  }
  for (const auto& [name, v] : opt.velocity) {
    entries.emplace("opt." + name,
                    std::make_pair(Shape{static_cast<int>(v.size())}, &v));
  }
  if (!mean.coords.empty()) {
    entries.emplace("data.mean_shape",
                    std::make_pair(Shape{static_cast<int>(mean.coords.size())},
                                   &mean.coords));
  }

  write_u32(f, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) write_named(f, name, e.first, *e.second);
  if (!f) throw std::runtime_error("checkpoint: write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "FKDCKPT 1") {
    throw std::runtime_error("checkpoint: " + path + " has unknown format tag");
  }
  int iteration = 0;
  std::uint64_t seed = 0;
  std::string config_text, tree_text;
  while (std::getline(f, line)) {
    if (line == "binary") break;
    if (line.rfind("iteration=", 0) == 0) {
      iteration = std::stoi(line.substr(10));
    } else if (line.rfind("seed=", 0) == 0) {
      seed = std::stoull(line.substr(5));
    } else if (line == "config_begin") {
      while (std::getline(f, line) && line != "config_end") config_text += line + "\n";
    } else if (line == "tree_begin") {
      while (std::getline(f, line) && line != "tree_end") tree_text += line + "\n";
    } else {
      throw std::runtime_error("checkpoint: unexpected header line: " + line);
    }
  }
  if (line != "binary") throw std::runtime_error("checkpoint: missing binary section");

  const ModelConfig cfg = ModelConfig::parse(config_text);
  LoadedCheckpoint out{build_model(cfg, KeypointTree::parse(tree_text), 0),
                       SgdState{}, MeanShape{}, iteration, seed};

  std::set<std::string> loaded_params;
  const std::uint32_t count = read_u32(f);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(f);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(read_u32(f)));
      numel *= shape.back();
    }
    std::vector<double> data = read_f32(f, numel);

    if (name.rfind("param.", 0) == 0) {
      const std::string pname = name.substr(6);
      if (!out.model.store.contains(pname)) {
        throw std::runtime_error("checkpoint: unknown parameter " + pname);
      }
      Tensor t = out.model.store.at(pname);
      if (t.shape() != shape) {
        throw std::runtime_error("checkpoint: shape mismatch for " + pname +
                                 ": file " + shape_str(shape) + " vs model " +
                                 shape_str(t.shape()));
      }
      t.data() = std::move(data);
      loaded_params.insert(pname);
    } else if (name.rfind("bn.", 0) == 0) {
      const bool is_mean = name.size() > 13 &&
                           name.substr(name.size() - 13) == ".running_mean";
      const bool is_var = name.size() > 12 &&
                          name.substr(name.size() - 12) == ".running_var";
      if (!is_mean && !is_var) {
        throw std::runtime_error("checkpoint: bad batchnorm entry " + name);
      }
      const std::string bn_name =
          name.substr(3, name.size() - 3 - (is_mean ? 13 : 12));
      auto& stats = out.model.store.bn_stats(bn_name);
      (is_mean ? stats.running_mean : stats.running_var) = std::move(data);
    } else if (name.rfind("opt.", 0) == 0) {
      out.opt.velocity[name.substr(4)] = std::move(data);
    } else if (name == "data.mean_shape") {
      out.mean_shape.coords = std::move(data);
    } else {
      throw std::runtime_error("checkpoint: unknown tensor group for " + name);
    }
  }
  for (const auto& [pname, t] : out.model.store.params()) {
    if (!loaded_params.count(pname)) {
      throw std::runtime_error("checkpoint: missing parameter " + pname);
    }
  }
  return out;
}

}  // namespace fkd
