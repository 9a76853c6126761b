#ifndef FKD_PARAMS_HPP_
#define FKD_PARAMS_HPP_

#include <map>
#include <random>
#include <string>

#include "fkd/ops.hpp"
#include "fkd/tensor.hpp"

namespace fkd {

/// Named parameter registry. Iteration order is lexicographic by name,
/// which fixes the summation / update / serialization order.
class ParamStore {
 public:
  /// Fan-in-scaled uniform init: U(-sqrt(3/fan_in), +sqrt(3/fan_in)).
  Tensor create(const std::string& name, Shape shape, int fan_in,
                std::mt19937_64& rng);
  Tensor create_const(const std::string& name, Shape shape, double value);

  Tensor at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  BatchNormStats& bn_stats(const std::string& name) { return bn_[name]; }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, BatchNormStats>& bn() { return bn_; }
  const std::map<std::string, BatchNormStats>& bn() const { return bn_; }

  void zero_grads();

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, BatchNormStats> bn_;
};

}  // namespace fkd

#endif  // FKD_PARAMS_HPP_
