#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rvt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One node of the reverse-mode tape. Values are dense f64, row-major,
// always contiguous; reshapes copy. Gradients are allocated on demand and
// have the same extent as the value buffer.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;  // empty for leaves; set by the op that produced the node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  bool requires_grad() const;
  void set_requires_grad(bool v);  // leaves only

  // Scalar read; throws unless numel() == 1.
  double item() const;
  std::span<const double> values() const;
  // Mutation is reserved for leaf tensors (parameter updates, test setup).
  std::span<double> mutable_values();
  double at(std::initializer_list<std::size_t> idx) const;

  std::span<const double> grad() const;  // empty span if untouched
  void zero_grad();

  // Reverse sweep from a scalar root. Accumulates into .grad of every
  // node on the tape that requires grad.
  void backward() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// When enabled (default), every op output is scanned for NaN/Inf and an
// exception naming the op is thrown on the first hit.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Clears accumulated gradients on every node reachable from `root`, so the
// same graph can be backpropagated again for a different target.
void zero_graph_grads(const Tensor& root);

namespace detail {
Tensor make_node(std::string op, Shape shape, std::vector<double> value,
                 std::vector<std::shared_ptr<TensorNode>> parents,
                 std::function<void(TensorNode&)> backward_fn);
void check_finite(const TensorNode& n);
}  // namespace detail

}  // namespace rvt
