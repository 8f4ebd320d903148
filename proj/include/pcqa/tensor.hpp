#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcqa {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// A Tensor is a handle; copies share storage and graph position. Operations
/// in ops.hpp record a backward closure on their result whenever any input
/// requires a gradient and gradient recording is enabled (see NoGradGuard).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double at(std::int64_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// Gradient buffer; allocated (zero) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Reverse sweep from this scalar; seeds d(self)/d(self) = 1.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. The backward closure is only kept when some input
  /// requires grad and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::initializer_list<Tensor> inputs,
                            detail::BackwardFn backward);
  static Tensor make_result(Shape shape, std::vector<double> values,
                            const std::vector<Tensor>& inputs,
                            detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace pcqa
