#include "fkd/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fkd {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->in_graph = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->in_graph = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  impl_->in_graph = impl_->in_graph || v;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("Tensor::item: tensor has " +
                                std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

ComputationRecord record_for(const Tensor& root) {
  ComputationRecord order;
  std::unordered_set<TensorImpl*> seen;
  // Iterative post-order DFS; deep graphs would overflow a recursive walk.
  struct Frame {
    TensorImpl* node;
    std::shared_ptr<TensorImpl> keep;
    size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl().get(), root.impl()});
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      auto& p = f.node->parents[f.next_parent++];
      if (p->in_graph && seen.insert(p.get()).second) {
        stack.push_back({p.get(), p});
      }
    } else {
      order.push_back(f.keep);
      stack.pop_back();
    }
  }
  return order;  // producers first, root last
}

void Tensor::backward() {
  if (numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(shape()));
  }
  ComputationRecord record = record_for(*this);
  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = record.rbegin(); it != record.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents, const char* op_name) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool in_graph = false;
  for (const auto& p : parents) in_graph = in_graph || p.in_graph();
  out.impl()->in_graph = in_graph;
  out.impl()->op_name = op_name;
  if (in_graph) {
    out.impl()->parents.reserve(parents.size());
    for (auto& p : parents) out.impl()->parents.push_back(p.impl());
  }
  return out;
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(where) +
                               ": non-finite value in tensor");
    }
  }
}

}  // namespace fkd
