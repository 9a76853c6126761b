#ifndef FKD_BLOCKS_HPP_
#define FKD_BLOCKS_HPP_

#include <random>
#include <string>

#include "fkd/params.hpp"
#include "fkd/tensor.hpp"

namespace fkd {

/// Squeeze (1x1) then parallel 1x1/3x3 expand, channel-concatenated.
struct FireSpec {
  int squeeze_1x1;
  int expand_1x1;
  int expand_3x3;
  bool residual = false;

  int out_channels() const { return expand_1x1 + expand_3x3; }
};

struct FireParams {
  Tensor squeeze_w, squeeze_b;
  Tensor expand1_w, expand1_b;
  Tensor expand3_w, expand3_b;
};

FireParams make_fire_params(ParamStore& store, const std::string& prefix,
                            int in_channels, const FireSpec& spec,
                            std::mt19937_64& rng);

/// relu(concat(expand1x1(s), expand3x3(s))) with s = relu(squeeze(input));
/// residual variant adds the input elementwise before returning.
Tensor fire_forward(const Tensor& input, const FireSpec& spec,
                    const FireParams& params);

/// Strided transposed conv (default 4/2/1: exact x2 upsample) followed by
/// a 1x1 squeeze; relu after both.
struct DeconvBlockSpec {
  int up_kernel = 4;
  int up_stride = 2;
  int up_padding = 1;
  int up_channels;
  int squeeze_channels;
};

struct DeconvBlockParams {
  Tensor up_w, up_b;
  Tensor squeeze_w, squeeze_b;
};

DeconvBlockParams make_deconv_block_params(ParamStore& store,
                                           const std::string& prefix,
                                           int in_channels,
                                           const DeconvBlockSpec& spec,
                                           std::mt19937_64& rng);

Tensor deconv_block_forward(const Tensor& input, const DeconvBlockSpec& spec,
                            const DeconvBlockParams& params);

}  // namespace fkd

#endif  // FKD_BLOCKS_HPP_
