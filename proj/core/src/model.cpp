#include "fkd/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "fkd/rng.hpp"

namespace fkd {

namespace {

ConvBnLayer make_conv_bn(ParamStore& store, const std::string& prefix,
                         int in_channels, int out_channels, int stride,
                         std::mt19937_64& rng) {
  ConvBnLayer l;
  l.w = store.create(prefix + ".w", {out_channels, in_channels, 3, 3},
                     in_channels * 9, rng);
  l.b = store.create_const(prefix + ".b", {out_channels}, 0.0);
  l.gamma = store.create_const(prefix + ".bn.gamma", {out_channels}, 1.0);
  l.beta = store.create_const(prefix + ".bn.beta", {out_channels}, 0.0);
  l.bn_name = prefix + ".bn";
  l.stride = stride;
  return l;
}

Tensor conv_bn_relu(Model& model, const ConvBnLayer& l, const Tensor& x,
                    BatchNormMode mode) {
  Tensor y = conv2d(x, l.w, l.b, l.stride, l.padding);
  y = batchnorm2d(y, l.gamma, l.beta, mode, model.store.bn_stats(l.bn_name));
  return relu(y);
}

FireSpec stage_fire_spec(int channels, bool residual) {
  return FireSpec{std::max(4, channels / 4), channels / 2, channels / 2,
                  residual};
}

HeadParams make_head(ParamStore& store, const std::string& prefix,
                     const ModelConfig& cfg, int out_dim, double bias_init,
                     std::mt19937_64& rng) {
  HeadParams h;
  const int hc = cfg.branch_channels();
  int in_ch = cfg.num_keypoints + 1;
  for (int s = 0; s < cfg.branch_stages; ++s) {
    const std::string p = prefix + ".down" + std::to_string(s);
    Tensor w = store.create(p + ".w", {hc, in_ch, 3, 3}, in_ch * 9, rng);
    Tensor b = store.create_const(p + ".b", {hc}, 0.0);
    h.down.emplace_back(w, b);
    in_ch = hc;
  }
  const int cat_ch = hc + cfg.code_channels();
  h.fire1_spec = FireSpec{std::max(4, hc / 2), hc, hc, false};
  h.fire1 = make_fire_params(store, prefix + ".fire1", cat_ch, h.fire1_spec, rng);
  h.fire2_spec = FireSpec{std::max(4, hc / 2), hc, hc, true};
  h.fire2 = make_fire_params(store, prefix + ".fire2", 2 * hc, h.fire2_spec, rng);
  h.fc_w = store.create(prefix + ".fc.w", {out_dim, 2 * hc}, 2 * hc, rng);
  h.fc_b = store.create_const(prefix + ".fc.b", {out_dim}, bias_init);
  return h;
}

void check_image(const ModelConfig& cfg, const Tensor& x) {
  const bool batched = x.ndim() == 4;
  if (!batched && x.ndim() != 3) {
    throw std::invalid_argument("model: image must be 3-d or 4-d, got " +
                                shape_str(x.shape()));
  }
  const int c = x.dim(batched ? 1 : 0);
  const int h = x.dim(batched ? 2 : 1);
  const int w = x.dim(batched ? 3 : 2);
  if (c != 3 || h != cfg.input_size || w != cfg.input_size) {
    throw std::invalid_argument("model: expected 3x" +
                                std::to_string(cfg.input_size) + "x" +
                                std::to_string(cfg.input_size) + " image, got " +
                                shape_str(x.shape()));
  }
}

}  // namespace

Model build_model(const ModelConfig& config, const KeypointTree& tree,
                  std::uint64_t seed) {
  config.validate();
  if (tree.num_keypoints() != config.num_keypoints) {
    throw std::invalid_argument("build_model: tree has " +
                                std::to_string(tree.num_keypoints()) +
                                " nodes, config wants " +
                                std::to_string(config.num_keypoints));
  }
  Model m{config, tree};
  auto rng = make_rng(seed, RngStream::kInit);
  ParamStore& store = m.store;
  const int stages = config.branch_stages;
  const int L = config.num_keypoints;
  const int bc = config.branch_channels();

  int prev = 3;
  for (int s = 1; s <= stages; ++s) {
    const int ch = config.stage_channels(s);
    const std::string p = "enc." + std::to_string(s);
    m.encoder.push_back(make_conv_bn(store, p + ".conv", prev, ch, 2, rng));
    m.encoder_fire_specs.push_back(stage_fire_spec(ch, true));
    m.encoder_fires.push_back(
        make_fire_params(store, p + ".fire", ch, m.encoder_fire_specs.back(), rng));
    prev = ch;
  }

  prev = 3;
  for (int s = 1; s <= stages; ++s) {
    const int ch = config.stage_channels(s);
    // last stage convolves at stride 1 and pools, so "pool" output is the
    // pose code
    const int stride = s == stages ? 1 : 2;
    m.pose_convs.push_back(make_conv_bn(
        store, "pose." + std::to_string(s) + ".conv", prev, ch, stride, rng));
    prev = ch;
  }
  m.pose_fc_w = store.create("pose.fc.w", {3, config.pose_channels()},
                             config.pose_channels(), rng);
  m.pose_fc_b = store.create_const("pose.fc.b", {3}, 0.0);

  // zero init keeps routing an exact identity until training moves it
  m.route_w = store.create_const(
      "route.w", {config.code_channels(), config.pose_channels(), 3, 3}, 0.0);
  m.route_b = store.create_const("route.b", {config.code_channels()}, 0.0);

  for (int i = 0; i <= L; ++i) {
    const std::string p = "stem." + std::to_string(i);
    m.stem_w.push_back(
        store.create(p + ".w", {bc, config.code_channels(), 3, 3},
                     config.code_channels() * 9, rng));
    m.stem_b.push_back(store.create_const(p + ".b", {bc}, 0.0));
  }

  auto add_message = [&](int from, int to) {
    const std::string p =
        "msg." + std::to_string(from) + "_" + std::to_string(to);
    MessageParams e;
    e.from = from;
    e.to = to;
    e.w = store.create(p + ".w", {bc, bc, 3, 3}, bc * 9, rng);
    e.b = store.create_const(p + ".b", {bc}, 0.0);
    m.messages.push_back(e);
  };
  for (const auto& [parent, child] : tree.edges()) add_message(parent, child);
  if (config.message_schedule == MessageSchedule::kBidirectional) {
    const auto& edges = tree.edges();
    for (auto it = edges.rbegin(); it != edges.rend(); ++it) {
      add_message(it->second, it->first);
    }
  }
  if (!config.message_passing) {
    for (auto& e : m.messages) {
      std::fill(e.w.data().begin(), e.w.data().end(), 0.0);
    }
  }

  int ch = bc;
  for (int k = 0; k < stages; ++k) {
    const int up_ch = std::max(2, bc >> k);
    m.up_specs.push_back(DeconvBlockSpec{4, 2, 1, up_ch, up_ch});
    ch = up_ch;
  }
  for (int i = 0; i <= L; ++i) {
    std::vector<DeconvBlockParams> ladder;
    int in_ch = bc;
    for (int k = 0; k < stages; ++k) {
      ladder.push_back(make_deconv_block_params(
          store,
          "up." + std::to_string(i) + "." + std::to_string(k), in_ch,
          m.up_specs[static_cast<size_t>(k)], rng));
      in_ch = m.up_specs[static_cast<size_t>(k)].squeeze_channels;
    }
    m.up.push_back(std::move(ladder));
    const std::string p = "logit." + std::to_string(i);
    m.logit_w.push_back(store.create(p + ".w", {1, ch, 1, 1}, ch, rng));
    m.logit_b.push_back(store.create_const(p + ".b", {1}, 0.0));
  }

  m.fid = make_head(store, "fid", config, 2 * L, 0.0, rng);
  m.vis = make_head(store, "vis", config, L, 0.5, rng);
  return m;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  return build_model(config, default_tree(config.num_keypoints), seed);
}

Tensor encode_image(Model& model, const Tensor& image, BatchNormMode mode) {
  check_image(model.config, image);
  Tensor x = image;
  for (size_t s = 0; s < model.encoder.size(); ++s) {
    x = conv_bn_relu(model, model.encoder[s], x, mode);
    x = fire_forward(x, model.encoder_fire_specs[s], model.encoder_fires[s]);
  }
  return x;
}

PoseOutput pose_forward(Model& model, const Tensor& image, BatchNormMode mode) {
  check_image(model.config, image);
  Tensor x = image;
  for (size_t s = 0; s < model.pose_convs.size(); ++s) {
    x = conv_bn_relu(model, model.pose_convs[s], x, mode);
    if (s + 1 == model.pose_convs.size()) x = maxpool2d(x, 2, 2);
  }
  Tensor pooled = global_avg_pool(x);  // [N,C]
  Tensor angles = fully_connected(pooled, model.pose_fc_w, model.pose_fc_b);
  if (image.ndim() == 3) angles = reshape(angles, {3});
  return {angles, x};
}

Tensor apply_routing(const Model& model, const Tensor& code,
                     const Tensor& pose_code) {
  if (!model.config.routing_enabled) return code;
  if (code.shape() != pose_code.shape() &&
      (code.ndim() != pose_code.ndim() ||
       code.dim(code.ndim() - 1) != pose_code.dim(pose_code.ndim() - 1) ||
       code.dim(code.ndim() - 2) != pose_code.dim(pose_code.ndim() - 2))) {
    throw std::invalid_argument("apply_routing: spatial mismatch, code " +
                                shape_str(code.shape()) + " vs pose " +
                                shape_str(pose_code.shape()));
  }
  return add(code, relu(conv2d(pose_code, model.route_w, model.route_b, 1, 1)));
}

std::vector<Tensor> branch_stems(const Model& model, const Tensor& code) {
  std::vector<Tensor> stems;
  stems.reserve(model.stem_w.size());
  for (size_t i = 0; i < model.stem_w.size(); ++i) {
    stems.push_back(relu(conv2d(code, model.stem_w[i], model.stem_b[i], 1, 1)));
  }
  return stems;
}

std::vector<Tensor> pass_messages(const Model& model,
                                  const std::vector<Tensor>& stems) {
  const size_t want = static_cast<size_t>(model.config.num_keypoints) + 1;
  if (stems.size() != want) {
    throw std::invalid_argument("pass_messages: expected " +
                                std::to_string(want) + " stems, got " +
                                std::to_string(stems.size()));
  }
  std::vector<Tensor> out = stems;
  for (const auto& e : model.messages) {
    out[static_cast<size_t>(e.to)] =
        add(out[static_cast<size_t>(e.to)],
            relu(conv2d(out[static_cast<size_t>(e.from)], e.w, e.b, 1, 1)));
  }
  return out;
}

Tensor branch_upsample(const Model& model, const std::vector<Tensor>& features) {
  const size_t want = static_cast<size_t>(model.config.num_keypoints) + 1;
  if (features.size() != want) {
    throw std::invalid_argument("branch_upsample: expected " +
                                std::to_string(want) + " feature maps");
  }
  std::vector<Tensor> channels;
  channels.reserve(want);
  for (size_t i = 0; i < want; ++i) {
    Tensor x = features[i];
    for (size_t k = 0; k < model.up[i].size(); ++k) {
      x = deconv_block_forward(x, model.up_specs[k], model.up[i][k]);
    }
    channels.push_back(conv2d(x, model.logit_w[i], model.logit_b[i], 1, 0));
  }
  return concat_channels(channels);
}

Tensor head_forward(const Model& model, const HeadParams& head,
                    const Tensor& maps, const Tensor& code) {
  Tensor x = maps;
  for (const auto& [w, b] : head.down) x = relu(conv2d(x, w, b, 2, 1));
  x = concat_channels(x, code);
  x = fire_forward(x, head.fire1_spec, head.fire1);
  x = fire_forward(x, head.fire2_spec, head.fire2);
  Tensor y = fully_connected(global_avg_pool(x), head.fc_w, head.fc_b);
  if (maps.ndim() == 3) y = reshape(y, {y.dim(1)});
  return y;
}

Tensor forward_classification(Model& model, const Tensor& image,
                              BatchNormMode mode) {
  Tensor code = encode_image(model, image, mode);
  return branch_upsample(model, pass_messages(model, branch_stems(model, code)));
}

ModelOutput forward(Model& model, const Tensor& image, BatchNormMode mode) {
  Tensor code = encode_image(model, image, mode);
  PoseOutput pose = pose_forward(model, image, mode);
  Tensor routed = apply_routing(model, code, pose.code);
  Tensor maps =
      branch_upsample(model, pass_messages(model, branch_stems(model, routed)));
  ModelOutput out;
  out.maps = maps;
  out.coords = head_forward(model, model.fid, maps, routed);
  out.visibility = clamp(head_forward(model, model.vis, maps, routed), 0.0, 1.0);
  out.pose = pose.angles;
  return out;
}

std::vector<std::string> trainable_parameters(const Model& model,
                                              bool classification_only) {
  std::vector<std::string> names;
  for (const auto& [name, t] : model.store.params()) {
    const bool classification_group =
        name.rfind("enc.", 0) == 0 || name.rfind("stem.", 0) == 0 ||
        name.rfind("msg.", 0) == 0 || name.rfind("up.", 0) == 0 ||
        name.rfind("logit.", 0) == 0;
    if (classification_only && !classification_group) continue;
    if (!model.config.message_passing && name.rfind("msg.", 0) == 0) continue;
    names.push_back(name);
  }
  return names;
}

}  // namespace fkd
