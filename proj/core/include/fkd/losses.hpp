#ifndef FKD_LOSSES_HPP_
#define FKD_LOSSES_HPP_

#include <array>
#include <cstdint>

#include "fkd/tensor.hpp"

namespace fkd {

/// Pixel-selection mask for the classification loss: 1 at every keypoint
/// pixel, background pixels kept with probability keep_rate.
struct NegativeMask {
  Tensor m;  // [H,W] or [N,H,W], values in {0,1}
  std::int64_t kept_pixels = 0;
};

/// Deterministic for a fixed seed; every positive pixel is kept. The
/// background channel is the last channel of the one-hot label map.
NegativeMask build_negative_mask(const Tensor& labelmap, double keep_rate,
                                 std::uint64_t seed);

/// Masked per-pixel softmax cross-entropy over the channel axis.
/// logits/labelmap: [K,H,W] or [N,K,H,W], labelmap one-hot per pixel.
/// mean_over_kept divides by the number of kept pixels; false gives the
/// raw masked sum.
Tensor classification_loss(const Tensor& logits, const Tensor& labelmap,
                           const NegativeMask& mask, bool mean_over_kept = true);

/// Visibility-gated squared coordinate error. Coordinates are interleaved
/// (x0,y0,x1,y1,...): y/g are [2L] or [N,2L], visibility [L] or [N,L]
/// ground truth in {0,1}. Batched input averages over the batch.
Tensor coordinate_loss(const Tensor& predicted, const Tensor& target,
                       const Tensor& visibility);

/// Squared yaw/pitch/roll error; [3] or [N,3] (batch mean).
Tensor pose_loss(const Tensor& predicted, const Tensor& target);

/// Squared visibility-confidence error; [L] or [N,L] (batch mean).
Tensor visibility_loss(const Tensor& predicted, const Tensor& target);

struct LossBreakdown {
  Tensor l0, l1, l2, l3;
  Tensor total;

  double L0() const { return l0.item(); }
  double L1() const { return l1.item(); }
  double L2() const { return l2.item(); }
  double L3() const { return l3.item(); }
  double total_value() const { return total.item(); }
};

/// total = w0*L0 + w1*L1 + w2*L2 + w3*L3.
LossBreakdown total_loss(const Tensor& l0, const Tensor& l1, const Tensor& l2,
                         const Tensor& l3, const std::array<double, 4>& weights);

}  // namespace fkd

#endif  // FKD_LOSSES_HPP_
