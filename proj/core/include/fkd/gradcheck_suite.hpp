#ifndef FKD_GRADCHECK_SUITE_HPP_
#define FKD_GRADCHECK_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace fkd {

struct OpCheckResult {
  std::string op;
  double max_relative_error;
  bool passed;  // max relative error < 1e-4
};

/// Finite-difference checks for every differentiable building block:
/// conv2d, transposed_conv2d, maxpool2d, batchnorm2d, fully_connected,
/// fire module, deconv block, message layer, and the four task losses.
/// Instances use randomized biases so relu kinks stay off the probe points.
std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed);

}  // namespace fkd

#endif  // FKD_GRADCHECK_SUITE_HPP_
