#ifndef FKD_MODEL_HPP_
#define FKD_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fkd/blocks.hpp"
#include "fkd/config.hpp"
#include "fkd/ops.hpp"
#include "fkd/params.hpp"
#include "fkd/tensor.hpp"
#include "fkd/tree.hpp"

namespace fkd {

struct ConvBnLayer {
  Tensor w, b, gamma, beta;
  std::string bn_name;
  int stride = 2;
  int padding = 1;
};

/// Downsampling trunk shared in shape by the coordinate and visibility
/// heads (separate parameters): strided convs to code resolution, concat
/// with the image code, two fire modules, global pool, fully connected.
struct HeadParams {
  std::vector<std::pair<Tensor, Tensor>> down;  // conv3x3 stride-2 w/b
  FireSpec fire1_spec, fire2_spec;
  FireParams fire1, fire2;
  Tensor fc_w, fc_b;
};

struct MessageParams {
  int from, to;
  Tensor w, b;  // 3x3 conv, padding 1
};

/// All parameters plus the wiring they were built for. Tensors are handles
/// into `store`, so checkpoint loads that write through the store update
/// the model in place.
struct Model {
  ModelConfig config;
  KeypointTree tree;
  ParamStore store;

  std::vector<ConvBnLayer> encoder;
  std::vector<FireSpec> encoder_fire_specs;
  std::vector<FireParams> encoder_fires;

  std::vector<ConvBnLayer> pose_convs;  // last layer stride 1 + maxpool
  Tensor pose_fc_w, pose_fc_b;

  Tensor route_w, route_b;  // zero-initialized 3x3 conv

  // L keypoint branches plus one background branch (index L, no messages).
  std::vector<Tensor> stem_w, stem_b;
  std::vector<MessageParams> messages;  // execution order
  std::vector<DeconvBlockSpec> up_specs;
  std::vector<std::vector<DeconvBlockParams>> up;
  std::vector<Tensor> logit_w, logit_b;

  HeadParams fid, vis;
};

/// Deterministic for (config, tree, seed). The tree must have
/// config.num_keypoints nodes.
Model build_model(const ModelConfig& config, const KeypointTree& tree,
                  std::uint64_t seed);
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Shared encoder: per stage a strided 3x3 conv + batchnorm + relu and a
/// residual fire module. Input [3,S,S] or [N,3,S,S] with S = input_size;
/// output at code resolution.
Tensor encode_image(Model& model, const Tensor& image, BatchNormMode mode);

struct PoseOutput {
  Tensor angles;  // [3] or [N,3], degrees
  Tensor code;    // pooled feature map at code resolution
};

/// Parallel pose trunk; shares nothing with the encoder.
PoseOutput pose_forward(Model& model, const Tensor& image, BatchNormMode mode);

/// code + relu(conv3x3(pose_code)). Zero routing weights make this exact
/// identity. Honors config.routing_enabled (off returns code unchanged).
Tensor apply_routing(const Model& model, const Tensor& code,
                     const Tensor& pose_code);

/// Per-branch 3x3 conv + relu of the shared code; L+1 entries, background
/// last.
std::vector<Tensor> branch_stems(const Model& model, const Tensor& code);

/// Adds relu(conv3x3(sender)) into each receiver along tree edges in
/// schedule order; senders are already-updated. The background entry is
/// untouched. Zero message kernels are the exact identity.
std::vector<Tensor> pass_messages(const Model& model,
                                  const std::vector<Tensor>& stems);

/// Deconv ladder per branch up to input resolution, then a 1x1 conv to one
/// logit channel each; returns [L+1,S,S] (or [N,L+1,S,S]), background last.
Tensor branch_upsample(const Model& model, const std::vector<Tensor>& features);

/// Raw head output: [2L] for the coordinate head, [L] for visibility.
Tensor head_forward(const Model& model, const HeadParams& head,
                    const Tensor& maps, const Tensor& code);

struct ModelOutput {
  Tensor maps;        // [L+1,S,S] logits
  Tensor coords;      // [2L] mean-shape offsets, input-size fractions
  Tensor visibility;  // [L] clamped to [0,1]
  Tensor pose;        // [3] degrees
};

/// Classification-only path (no pose, no routing): response map logits.
Tensor forward_classification(Model& model, const Tensor& image,
                              BatchNormMode mode);

/// Full multitask path.
ModelOutput forward(Model& model, const Tensor& image, BatchNormMode mode);

/// Parameter names updated by the optimizer. Classification-only excludes
/// the pose/routing/head groups; disabled message passing freezes msg.*.
std::vector<std::string> trainable_parameters(const Model& model,
                                              bool classification_only);

}  // namespace fkd

#endif  // FKD_MODEL_HPP_
