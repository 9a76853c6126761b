#ifndef FKD_GRADCHECK_HPP_
#define FKD_GRADCHECK_HPP_

#include <functional>
#include <vector>

#include "fkd/tensor.hpp"

namespace fkd {

/// Scalar-valued graph under test: must rebuild the graph from the given
/// inputs on every call (finite differencing re-evaluates it).
using GraphFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Max over all elements of all requires_grad inputs of
/// |analytic - central difference| / max(1, |analytic|).
double gradient_check(const GraphFn& fn, std::vector<Tensor> inputs,
                      double delta = 1e-4);

}  // namespace fkd

#endif  // FKD_GRADCHECK_HPP_
