#include "fkd/blocks.hpp"

#include <stdexcept>

#include "fkd/ops.hpp"

namespace fkd {

FireParams make_fire_params(ParamStore& store, const std::string& prefix,
                            int in_channels, const FireSpec& spec,
                            std::mt19937_64& rng) {
  FireParams p;
  p.squeeze_w = store.create(prefix + ".squeeze.w",
                             {spec.squeeze_1x1, in_channels, 1, 1}, in_channels,
                             rng);
  p.squeeze_b = store.create_const(prefix + ".squeeze.b", {spec.squeeze_1x1}, 0.0);
  p.expand1_w = store.create(prefix + ".expand1.w",
                             {spec.expand_1x1, spec.squeeze_1x1, 1, 1},
                             spec.squeeze_1x1, rng);
  p.expand1_b = store.create_const(prefix + ".expand1.b", {spec.expand_1x1}, 0.0);
  p.expand3_w = store.create(prefix + ".expand3.w",
                             {spec.expand_3x3, spec.squeeze_1x1, 3, 3},
                             spec.squeeze_1x1 * 9, rng);
  p.expand3_b = store.create_const(prefix + ".expand3.b", {spec.expand_3x3}, 0.0);
  return p;
}

Tensor fire_forward(const Tensor& input, const FireSpec& spec,
                    const FireParams& params) {
  const int in_channels = input.ndim() == 4 ? input.dim(1) : input.dim(0);
  if (spec.residual && in_channels != spec.out_channels()) {
    throw std::invalid_argument(
        "fire_forward: residual fire needs matching channels, got " +
        std::to_string(in_channels) + " in vs " +
        std::to_string(spec.out_channels()) + " out");
  }
  Tensor s = relu(conv2d(input, params.squeeze_w, params.squeeze_b, 1, 0));
  Tensor e1 = conv2d(s, params.expand1_w, params.expand1_b, 1, 0);
  Tensor e3 = conv2d(s, params.expand3_w, params.expand3_b, 1, 1);
  Tensor out = relu(concat_channels(e1, e3));
  if (spec.residual) out = add(out, input);
  return out;
}

DeconvBlockParams make_deconv_block_params(ParamStore& store,
                                           const std::string& prefix,
                                           int in_channels,
                                           const DeconvBlockSpec& spec,
                                           std::mt19937_64& rng) {
  DeconvBlockParams p;
  p.up_w = store.create(
      prefix + ".up.w",
      {in_channels, spec.up_channels, spec.up_kernel, spec.up_kernel},
      in_channels * spec.up_kernel * spec.up_kernel, rng);
  // slightly positive biases keep narrow blocks' relus alive at init; a
  // channel whose random weights all point negative would otherwise be
  // permanently dead (zero activation and zero gradient)
  p.up_b = store.create_const(prefix + ".up.b", {spec.up_channels}, 0.1);
  p.squeeze_w = store.create(prefix + ".squeeze.w",
                             {spec.squeeze_channels, spec.up_channels, 1, 1},
                             spec.up_channels, rng);
  p.squeeze_b =
      store.create_const(prefix + ".squeeze.b", {spec.squeeze_channels}, 0.1);
  return p;
}

Tensor deconv_block_forward(const Tensor& input, const DeconvBlockSpec& spec,
                            const DeconvBlockParams& params) {
  Tensor up = relu(transposed_conv2d(input, params.up_w, params.up_b,
                                     spec.up_stride, spec.up_padding));
  return relu(conv2d(up, params.squeeze_w, params.squeeze_b, 1, 0));
}

}  // namespace fkd
