#include "i2i/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "i2i/errors.hpp"

namespace i2i {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::string_view op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(values), requires_grad)) {
  for (auto d : node_->shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(node_->shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() {
  if (!node_->inputs.empty() || node_->backward) {
    throw std::logic_error("tensor: mutable access to a recorded op result (" + std::string(node_->op) + ")");
  }
  return node_->values;
}

double Tensor::item() const {
  if (node_->values.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(node_->shape) + " is not scalar");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->inputs.empty() && !node_->backward; }

std::uint64_t Tensor::tape_id() const { return node_->id; }

std::string_view Tensor::op_name() const { return node_->op; }

const std::vector<Tensor>& Tensor::inputs() const { return node_->inputs; }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->values, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->values, node_->requires_grad); }

Tensor record(std::string_view op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
              BackwardFn backward) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  node->op = op;
  const bool any = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                 [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_recording_enabled() { return t_grad_enabled; }

Tape collect_tape(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const Tensor*> stack{&root};
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    const Tensor* t = stack.back();
    stack.pop_back();
    tape.nodes.push_back(*t);
    for (const auto& in : t->node_->inputs) {
      if (in.requires_grad() && seen.insert(in.node_.get()).second) stack.push_back(&in);
    }
  }
  // Ids grow in creation order, so ascending id is a topological order.
  std::sort(tape.nodes.begin(), tape.nodes.end(),
            [](const Tensor& a, const Tensor& b) { return a.tape_id() < b.tape_id(); });
  return tape;
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.tape_id()) != 0; }

std::span<const double> Gradients::at(const Tensor& leaf) const {
  auto it = grads_.find(leaf.tape_id());
  if (it == grads_.end()) throw std::out_of_range("gradients: tensor was not reached by backward");
  return it->second;
}

std::vector<double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.tape_id());
  if (it == grads_.end()) return std::vector<double>(leaf.numel(), 0.0);
  return it->second;
}

Gradients backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + (root.defined() ? shape_str(root.shape()) : "undefined"));
  }
  Gradients out;
  Tape tape = collect_tape(root);
  if (tape.nodes.empty()) return out;

  std::unordered_map<const detail::Node*, std::vector<double>> grads;
  grads[root.node_.get()] = {1.0};
  std::vector<double*> grad_in;

  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    detail::Node* node = it->node_.get();
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) {
      out.grads_[node->id] = std::move(found->second);
      grads.erase(found);
      continue;
    }
    const std::vector<double>& grad_out = found->second;
    grad_in.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (!in.requires_grad()) continue;
      auto& g = grads[in.node_.get()];
      if (g.empty()) g.assign(in.numel(), 0.0);
      grad_in[i] = g.data();
    }
    node->backward(BackwardContext{grad_out, grad_in});
    grads.erase(node);
  }
  return out;
}

}  // namespace i2i
