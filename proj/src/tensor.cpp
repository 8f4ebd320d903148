#include "pcqa/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace pcqa {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw std::invalid_argument("tensor values do not match shape " + shape_str(shape));
  node_->value = std::move(values);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::out_of_range("axis out of range for shape " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }

std::span<double> Tensor::data() { return node_->value; }
std::span<const double> Tensor::data() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::span<double> Tensor::grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }
Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  node_->grad.assign(1, 0.0);
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(n->grad);
  }
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::initializer_list<Tensor> inputs,
                           detail::BackwardFn backward) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs),
                     std::move(backward));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  for (const auto& t : inputs)
    if (t.requires_grad()) out.node_->inputs.push_back(t.node_);
  out.node_->backward = std::move(backward);
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace pcqa
