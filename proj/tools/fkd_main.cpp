#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fkd/config.hpp"
#include "fkd/data.hpp"
#include "fkd/eval.hpp"
#include "fkd/gradcheck_suite.hpp"
#include "fkd/model.hpp"
#include "fkd/train.hpp"
#include "fkd/tree.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Every command with outputs records what produced them.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const fkd::ModelConfig* config, std::uint64_t seed,
                    const json& inputs, const json& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config ? json(config->serialize()) : json(nullptr);
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["timestamp"] = timestamp_utc();
  std::ofstream f(fs::path(out_dir) / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest under " + out_dir);
  f << m.dump(2) << '\n';
}

/// --data accepts either an annotation TSV or a dataset directory that
/// contains annotations.tsv.
std::string resolve_annotations(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "annotations.tsv").string();
  return data;
}

struct ConfigFlags {
  std::string config_path;
  std::string routing;   // on|off
  std::string schedule;  // root|bidir
  std::string messages;  // on|off
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--routing", f.routing, "pose-conditioned routing (on|off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--schedule", f.schedule, "message schedule (root|bidir)")
      ->check(CLI::IsMember({"root", "bidir"}));
  cmd->add_option("--message-passing", f.messages,
                  "tree message passing (on|off); off freezes zero kernels")
      ->check(CLI::IsMember({"on", "off"}));
}

/// File values first, then explicit flags override.
fkd::ModelConfig make_config(const ConfigFlags& f) {
  fkd::ModelConfig cfg = f.config_path.empty()
                             ? fkd::ModelConfig::desk_preset()
                             : fkd::ModelConfig::load(f.config_path);
  if (!f.routing.empty()) cfg.routing_enabled = f.routing == "on";
  if (!f.schedule.empty()) cfg.message_schedule = fkd::schedule_from_string(f.schedule);
  if (!f.messages.empty()) cfg.message_passing = f.messages == "on";
  cfg.validate();
  return cfg;
}

fkd::KeypointTree make_tree(const std::string& tree_path, int num_keypoints) {
  if (tree_path.empty()) return fkd::default_tree(num_keypoints);
  fkd::KeypointTree tree = fkd::KeypointTree::load(tree_path);
  if (tree.num_keypoints() != num_keypoints) {
    throw std::invalid_argument("tree has " + std::to_string(tree.num_keypoints()) +
                                " keypoints, config wants " +
                                std::to_string(num_keypoints));
  }
  return tree;
}

int cmd_train(const ConfigFlags& flags, const std::string& data,
              const std::string& out, const std::string& tree_path,
              std::uint64_t seed) {
  fkd::ModelConfig cfg = make_config(flags);
  fkd::KeypointTree tree = make_tree(tree_path, cfg.num_keypoints);
  fs::create_directories(out);

  const std::string annotations = resolve_annotations(data);
  int warnings = 0;
  std::vector<fkd::Sample> samples = fkd::load_dataset(annotations, cfg, &warnings);
  if (samples.empty()) throw std::runtime_error("no training samples in " + annotations);
  if (warnings > 0) {
    std::cerr << "note: " << warnings << " out-of-crop keypoints marked invisible\n";
  }
  fkd::MeanShape mean = fkd::compute_mean_shape(samples, cfg.num_keypoints);

  fkd::Model model = fkd::build_model(cfg, tree, seed);
  fkd::SgdState opt;
  const fs::path out_dir(out);
  std::ofstream pre_csv(out_dir / "pretrain_loss.csv");
  std::ofstream multi_csv(out_dir / "multitask_loss.csv");
  pre_csv << "iteration,L0,L1,L2,L3,total\n";
  multi_csv << "iteration,L0,L1,L2,L3,total\n";

  std::cout << "pretraining " << cfg.pretrain_iters << " iterations on "
            << samples.size() << " samples\n";
  fkd::run_training(model, samples, opt, mean, true, 0, cfg.pretrain_iters,
                    cfg.pretrain_iters, seed, &pre_csv);
  fkd::save_checkpoint((out_dir / "pretrain.ckpt").string(), model, opt, mean,
                       cfg.pretrain_iters, seed);

  std::cout << "multitask training " << cfg.multitask_iters << " iterations\n";
  fkd::run_training(model, samples, opt, mean, false, 0, cfg.multitask_iters,
                    cfg.multitask_iters, seed, &multi_csv);
  fkd::save_checkpoint((out_dir / "model.ckpt").string(), model, opt, mean,
                       cfg.multitask_iters, seed);

  write_manifest(out, "train", &cfg, seed,
                 {{"data", annotations}, {"tree", tree_path}},
                 {"pretrain.ckpt", "model.ckpt", "pretrain_loss.csv",
                  "multitask_loss.csv"});
  std::cout << "wrote " << (out_dir / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data,
             const std::string& out, const std::string& protocol,
             const std::string& mode, std::uint64_t seed) {
  fkd::LoadedCheckpoint ckpt = fkd::load_checkpoint(model_path);
  const fkd::Protocol proto = fkd::protocol_from_string(protocol);
  const fkd::DecodeMode decode = fkd::decode_mode_from_string(mode);
  const std::string annotations = resolve_annotations(data);
  std::vector<fkd::Sample> samples =
      fkd::load_dataset(annotations, ckpt.model.config);
  if (samples.empty()) throw std::runtime_error("no samples in " + annotations);

  fkd::EvalReport report = fkd::run_protocol(ckpt.model, samples, proto, decode,
                                             ckpt.mean_shape);
  fs::create_directories(out);
  const fs::path out_dir(out);
  std::ofstream rep(out_dir / "report.txt");
  rep << report.text();
  report.write_ced_csv((out_dir / "ced.csv").string());
  write_manifest(out, "eval", &ckpt.model.config, seed,
                 {{"model", model_path}, {"data", annotations},
                  {"protocol", protocol}, {"mode", mode}},
                 {"report.txt", "ced.csv"});
  std::cout << report.text();
  return 0;
}

/// Box list: `image_path x y w h` per line, tab or space separated, paths
/// relative to the list file. No face detection happens here.
std::vector<fkd::Annotation> load_box_list(const std::string& path, int l) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open box list " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<fkd::Annotation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    fkd::Annotation a;
    if (!(is >> a.image_path >> a.box_x >> a.box_y >> a.box_w >> a.box_h)) {
      throw std::runtime_error("box list line " + std::to_string(line_no) +
                               ": expected `image_path x y w h`");
    }
    a.image_path = (base / a.image_path).string();
    a.yaw = a.pitch = a.roll = std::nan("");
    a.points.resize(static_cast<size_t>(l));
    out.push_back(std::move(a));
  }
  return out;
}

int cmd_predict(const std::string& model_path, const std::string& data,
                const std::string& out, const std::string& mode,
                std::uint64_t seed) {
  fkd::LoadedCheckpoint ckpt = fkd::load_checkpoint(model_path);
  const fkd::DecodeMode decode = fkd::decode_mode_from_string(mode);
  const fkd::ModelConfig& cfg = ckpt.model.config;
  std::vector<fkd::Annotation> boxes = load_box_list(data, cfg.num_keypoints);
  if (boxes.empty()) throw std::runtime_error("empty box list " + data);

  fs::create_directories(out);
  const fs::path out_dir(out);
  std::ofstream pred(out_dir / "predictions.tsv");
  pred << "# image_path yaw pitch roll (x y visibility) * " << cfg.num_keypoints
       << ", source-image pixels\n";
  pred.precision(6);
  for (const auto& a : boxes) {
    fkd::Tensor image = fkd::read_ppm(a.image_path);
    fkd::Sample s = fkd::prepare_sample(image, a, cfg);
    fkd::ModelOutput net =
        fkd::forward(ckpt.model, fkd::image_tensor(s), fkd::BatchNormMode::kInfer);
    fkd::Prediction p =
        fkd::decode_keypoints(net, ckpt.mean_shape, decode, cfg.input_size);
    // invert the crop mapping back into source-image pixels
    const double cx0 = a.box_x - 0.1 * a.box_w;
    const double cy0 = a.box_y - 0.1 * a.box_h;
    const double sx = 1.2 * a.box_w / cfg.input_size;
    const double sy = 1.2 * a.box_h / cfg.input_size;
    pred << a.image_path << '\t' << p.pose[0] << '\t' << p.pose[1] << '\t'
         << p.pose[2];
    for (int k = 0; k < cfg.num_keypoints; ++k) {
      pred << '\t' << cx0 + p.coords_px[static_cast<size_t>(2 * k)] * sx << '\t'
           << cy0 + p.coords_px[static_cast<size_t>(2 * k + 1)] * sy << '\t'
           << p.visibility[static_cast<size_t>(k)];
    }
    pred << '\n';
  }
  write_manifest(out, "predict", &cfg, seed,
                 {{"model", model_path}, {"data", data}, {"mode", mode}},
                 {"predictions.tsv"});
  std::cout << "wrote " << (out_dir / "predictions.tsv").string() << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& out) {
  std::vector<fkd::OpCheckResult> results = fkd::run_op_gradchecks(seed);
  std::ostringstream table;
  bool all_passed = true;
  for (const auto& r : results) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-22s %12.4e  %s\n", r.op.c_str(),
                  r.max_relative_error, r.passed ? "pass" : "FAIL");
    table << line;
    all_passed &= r.passed;
  }
  table << (all_passed ? "all ops pass (threshold 1e-4)\n"
                       : "gradient check FAILED\n");
  std::cout << table.str();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream f(fs::path(out) / "gradcheck.txt");
    f << table.str();
    write_manifest(out, "gradcheck", nullptr, seed, json::object(),
                   {"gradcheck.txt"});
  }
  return all_passed ? 0 : 1;
}

int cmd_synth(const ConfigFlags& flags, const std::string& out, int count,
              std::uint64_t seed) {
  fkd::ModelConfig cfg = make_config(flags);
  fkd::write_synth_dataset(out, count, seed, cfg);
  write_manifest(out, "synth", &cfg, seed, {{"count", count}},
                 {"annotations.tsv", "images/"});
  std::cout << "wrote " << count << " samples under " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facial keypoint detector: tree-structured heatmap network "
               "with pose-conditioned routing"};
  app.require_subcommand(1);

  std::string data, out, model_path, tree_path;
  std::string protocol = "full", mode = "regression";
  std::uint64_t seed = 1;
  int count = 100;
  ConfigFlags flags;

  CLI::App* train = app.add_subcommand("train", "pretrain then multitask-train");
  add_config_flags(train, flags);
  train->add_option("--data", data, "annotation TSV or dataset directory")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--tree", tree_path, "keypoint tree file (parent child lines)")
      ->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "base seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--model", model_path, "checkpoint file")
      ->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "annotation TSV or dataset directory")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_option("--protocol", protocol, "pifa|full|afw")
      ->check(CLI::IsMember({"pifa", "full", "afw"}));
  eval->add_option("--mode", mode, "keypoint decoding (regression|heatmap)")
      ->check(CLI::IsMember({"regression", "heatmap"}));
  eval->add_option("--seed", seed, "recorded in the manifest");

  CLI::App* predict = app.add_subcommand(
      "predict", "keypoints/pose/visibility for images with given face boxes");
  predict->add_option("--model", model_path, "checkpoint file")
      ->required()->check(CLI::ExistingFile);
  predict->add_option("--data", data, "box list: image_path x y w h per line")
      ->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out, "output directory")->required();
  predict->add_option("--mode", mode, "keypoint decoding (regression|heatmap)")
      ->check(CLI::IsMember({"regression", "heatmap"}));
  predict->add_option("--seed", seed, "recorded in the manifest");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference checks for every differentiable block");
  gradcheck->add_option("--seed", seed, "base seed");
  gradcheck->add_option("--out", out, "optional output directory");

  CLI::App* synth = app.add_subcommand("synth", "render a synthetic dataset");
  add_config_flags(synth, flags);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--count", count, "number of samples")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "base seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(flags, data, out, tree_path, seed);
    if (eval->parsed()) return cmd_eval(model_path, data, out, protocol, mode, seed);
    if (predict->parsed()) return cmd_predict(model_path, data, out, mode, seed);
    if (gradcheck->parsed()) return cmd_gradcheck(seed, out);
    if (synth->parsed()) return cmd_synth(flags, out, count, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
