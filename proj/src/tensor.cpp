#include "rvt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace rvt {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ')';
  return os.str();
}

namespace {
std::atomic<bool> g_finite_checks{true};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

namespace detail {

void check_finite(const TensorNode& n) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value in output of op '" + (n.op.empty() ? "leaf" : n.op) +
                               "' with shape " + shape_str(n.shape));
    }
  }
}

Tensor make_node(std::string op, Shape shape, std::vector<double> value,
                 std::vector<std::shared_ptr<TensorNode>> parents,
                 std::function<void(TensorNode&)> backward_fn) {
  if (shape_numel(shape) != value.size()) {
    throw std::runtime_error("op '" + op + "': value size " + std::to_string(value.size()) +
                             " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  check_finite(*node);
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::runtime_error("zero extent in shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->value.assign(shape_numel(shape), v);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor::wrap(std::move(node));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::runtime_error("zero extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw std::runtime_error("from_vector: " + std::to_string(data.size()) +
                             " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor::wrap(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_vector({1}, {v}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::runtime_error("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const {
  if (!node_) return 0;
  return node_->numel();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw std::runtime_error("set_requires_grad() on undefined tensor");
  if (!node_->op.empty()) throw std::runtime_error("set_requires_grad() is only valid on leaf tensors");
  node_->requires_grad = v;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::runtime_error("item() requires a scalar, got shape " + shape_str(shape()));
  }
  return node_->value[0];
}

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return {node_->value.data(), node_->value.size()};
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw std::runtime_error("mutable_values() on undefined tensor");
  if (!node_->op.empty()) {
    throw std::runtime_error("mutable_values() is only valid on leaf tensors, not op '" + node_->op + "'");
  }
  return {node_->value.data(), node_->value.size()};
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    throw std::runtime_error("at(): " + std::to_string(idx.size()) + " indices for shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : idx) {
    if (v >= s[i]) throw std::runtime_error("at(): index out of range in axis " + std::to_string(i));
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->value[flat];
}

std::span<const double> Tensor::grad() const {
  if (!node_ || node_->grad.empty()) return {};
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.assign(node_->numel(), 0.0);
}

void Tensor::backward() const {
  if (!node_) throw std::runtime_error("backward() on undefined tensor");
  if (node_->numel() != 1) {
    throw std::runtime_error("backward() requires a scalar root, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) {
    throw std::runtime_error("backward() on a root that does not require grad");
  }

  // Topological order by iterative DFS over parents.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::TensorNode* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are scratch space for this sweep; stale values from an
  // earlier sweep over the same graph would be double-counted. Leaf grads
  // persist so separate forward passes accumulate.
  for (detail::TensorNode* n : order) {
    if (!n->parents.empty() && !n->grad.empty()) n->grad.assign(n->numel(), 0.0);
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

void zero_graph_grads(const Tensor& root) {
  if (!root.defined()) return;
  std::vector<detail::TensorNode*> stack{root.node().get()};
  std::unordered_set<detail::TensorNode*> seen{root.node().get()};
  while (!stack.empty()) {
    detail::TensorNode* n = stack.back();
    stack.pop_back();
    if (!n->grad.empty()) n->grad.assign(n->numel(), 0.0);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
}

}  // namespace rvt
