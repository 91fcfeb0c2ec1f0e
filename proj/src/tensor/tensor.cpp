#include "mdl/tensor.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mdl {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) throw std::out_of_range("tensor axis out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
  if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  return from_data(impl_->shape, impl_->data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                           std::string op,
                           std::function<void(const detail::TensorImpl&)> backward) {
  Tensor out = from_data(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_unique<detail::Node>();
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl_);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  // Iterative post-order DFS so deep networks do not exhaust the stack.
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  auto* r = root.impl_ptr().get();
  if (!r->node) return g;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (next < t->node->inputs.size()) {
      auto* child = t->node->inputs[next++].get();
      if (child->node && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      g.order_.push_back(t);
      stack.pop_back();
    }
  }
  return g;
}

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> names;
  names.reserve(order_.size());
  for (auto* t : order_) names.push_back(t->node->op);
  return names;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward() on a loss that does not depend on any parameter");
  }
  Graph g = Graph::trace(loss);
  auto* root = loss.impl_ptr().get();
  root->ensure_grad()[0] += 1.0;
  for (auto it = g.order_.rbegin(); it != g.order_.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->grad.empty()) continue;
    for (auto& in : t->node->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    t->node->backward(*t);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace mdl
