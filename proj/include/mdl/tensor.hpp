#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mdl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// A recorded operation: the inputs it read and the rule that pushes the
// output gradient back into them.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::unique_ptr<Node> node;  // null for leaves

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage. Shape never
/// changes after construction; every op returns a fresh tensor. Values are
/// only mutated through mutable_data(), which the optimizer and the
/// initializers use on leaf parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Independent copy of the values, detached from any graph.
  Tensor clone() const;
  /// Same values as a new leaf (shares nothing with this tensor).
  Tensor detach() const { return clone(); }

  const detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

  // Used by op implementations to construct results.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, std::string op,
                            std::function<void(const detail::TensorImpl&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Topologically ordered view of the operations that produced a tensor.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  /// Operation names, inputs before consumers.
  std::vector<std::string> op_names() const;

 private:
  friend void backward(const Tensor& loss);
  std::vector<detail::TensorImpl*> order_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// requires_grad tensor reachable from the loss.
void backward(const Tensor& loss);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace mdl
