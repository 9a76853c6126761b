#include "fkd/params.hpp"

#include <cmath>
#include <stdexcept>

namespace fkd {

Tensor ParamStore::create(const std::string& name, Shape shape, int fan_in,
                          std::mt19937_64& rng) {
  if (params_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  }
  const double limit = std::sqrt(3.0 / static_cast<double>(std::max(1, fan_in)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  Tensor t = Tensor::from(std::move(shape), std::move(data), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::create_const(const std::string& name, Shape shape,
                                double value) {
  if (params_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  }
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter " + name);
  }
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace fkd
