#include "fkd/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace fkd {

double gradient_check(const GraphFn& fn, std::vector<Tensor> inputs,
                      double delta) {
  for (auto& in : inputs) in.zero_grad();
  Tensor loss = fn(inputs);
  if (loss.numel() != 1) {
    throw std::invalid_argument("gradient_check: graph must produce a scalar");
  }
  loss.backward();

  double max_err = 0.0;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    std::vector<double> analytic =
        in.has_grad() ? in.grad() : std::vector<double>(in.data().size(), 0.0);
    for (size_t i = 0; i < in.data().size(); ++i) {
      const double saved = in.data()[i];
      in.data()[i] = saved + delta;
      const double up = fn(inputs).item();
      in.data()[i] = saved - delta;
      const double down = fn(inputs).item();
      in.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * delta);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace fkd
