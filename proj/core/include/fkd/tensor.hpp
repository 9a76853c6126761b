#ifndef FKD_TENSOR_HPP_
#define FKD_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fkd {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool in_graph = false;  // true if this node or any ancestor requires grad

  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;
  const char* op_name = "leaf";

  void ensure_grad();
};

/// Dense row-major N-d tensor with reverse-mode autodiff.
/// Copying a Tensor copies the handle; the buffer is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  std::int64_t numel() const { return shape_numel(impl_->shape); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad();
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v);
  bool in_graph() const { return impl_->in_graph; }

  /// Value of a rank-0 or single-element tensor.
  double item() const;

  /// Reverse-mode sweep from a scalar tensor. Throws on non-scalars.
  void backward();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Topologically ordered replay record for one backward sweep: every node
/// appears after all producers of its inputs.
using ComputationRecord = std::vector<std::shared_ptr<TensorImpl>>;

ComputationRecord record_for(const Tensor& root);

/// Builds a non-leaf node. `parents` that are in a graph keep it connected.
Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents, const char* op_name);

void check_finite(const Tensor& t, const char* where);

}  // namespace fkd

#endif  // FKD_TENSOR_HPP_
