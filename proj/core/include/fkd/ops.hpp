#ifndef FKD_OPS_HPP_
#define FKD_OPS_HPP_

#include <vector>

#include "fkd/tensor.hpp"

namespace fkd {

// Elementwise / structural ops. All accept graph tensors and register
// backward closures when any input is in a graph.

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor clamp(const Tensor& x, double lo, double hi);

/// Channel concatenation of [C,H,W] or [N,C,H,W] tensors with equal
/// spatial dims (and equal N).
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Cross-correlation. input [Cin,H,W] or [N,Cin,H,W]; kernel
/// [Cout,Cin,kh,kw]; bias [Cout]. Output spatial:
/// floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

/// Adjoint of conv2d. kernel [Cin,Cout,kh,kw]; output spatial:
/// (H - 1)*stride - 2*padding + kh.
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel,
                         const Tensor& bias, int stride, int padding);

/// Per-window max; backward routes to the first argmax in scan order.
Tensor maxpool2d(const Tensor& input, int window, int stride);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
};

enum class BatchNormMode { kTrain, kInfer };

/// Per-channel normalization over batch x H x W. Train mode updates
/// `stats` in place (running <- momentum*running + (1-momentum)*batch).
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormMode mode,
                   BatchNormStats& stats, double eps = 1e-5);

/// input [Din] or [N,Din]; weight [Dout,Din]; bias [Dout].
Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias);

/// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& input);

}  // namespace fkd

#endif  // FKD_OPS_HPP_
