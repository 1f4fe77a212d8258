#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace i2i {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient plumbing handed to an op's backward closure. `grad_in[i]` is null
/// when input `i` does not participate in differentiation; otherwise it points
/// at a zero-initialised accumulator of the input's length.
struct BackwardContext {
  std::span<const double> grad_out;
  std::span<double* const> grad_in;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

namespace detail {
struct Node;
}

class Tensor;
class Gradients;
struct Tape;

/// Dense row-major double tensor with value semantics over a shared graph node.
///
/// Copying a Tensor copies the handle, not the data: parameters shared between
/// the two training cycles are literally the same node. Ops never mutate their
/// inputs; only leaves expose mutable storage (for optimizers and test hooks).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Leaf-only mutable view. Throws for recorded op results.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  /// Leaf-only. Toggling is how a parameter set is frozen for one phase.
  void set_requires_grad(bool on);
  bool is_leaf() const;

  /// Position on the differentiation tape; strictly increasing in creation order.
  std::uint64_t tape_id() const;
  std::string_view op_name() const;
  const std::vector<Tensor>& inputs() const;

  /// Fresh leaf holding a copy of the values, cut off from the tape.
  Tensor detach() const;
  /// Leaf copy that keeps the requires_grad flag but not the identity.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend Tensor record(std::string_view, Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
  friend class Gradients;
  friend struct Tape;
  friend Tape collect_tape(const Tensor& root);
  friend Gradients backward(const Tensor& root);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. When no input requires a gradient, or gradient
/// recording is disabled on this thread, the result is a plain constant leaf.
Tensor record(std::string_view op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
              BackwardFn backward);

/// Thread-local switch; inside the guard no op is recorded.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

/// Recorded operations reachable from a root, ordered so that every
/// operation's inputs precede it.
struct Tape {
  std::vector<Tensor> nodes;
};

Tape collect_tape(const Tensor& root);

/// Gradients of every differentiable leaf reachable from the root.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const;
  std::span<const double> at(const Tensor& leaf) const;
  /// Zeros when the leaf was unreachable.
  std::vector<double> of(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }

 private:
  friend Gradients backward(const Tensor& root);
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a scalar root. Non-scalar roots are rejected.
Gradients backward(const Tensor& root);

}  // namespace i2i
