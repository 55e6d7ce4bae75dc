#include "rvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rvt::ops {

namespace {

using detail::TensorNode;
using detail::make_node;
using NodePtr = std::shared_ptr<TensorNode>;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::runtime_error(op + ": " + msg);
}

void require(bool cond, const std::string& op, const std::string& msg) {
  if (!cond) fail(op, msg);
}

NodePtr node_of(const Tensor& t, const char* op) {
  if (!t.defined()) fail(op, "undefined input tensor");
  return t.node();
}

// C(m,n) += A(m,k) B(k,n)
void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C(k,n) += A(m,k)^T G(m,n)
void mm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

// C(m,k) += G(m,n) B(k,n)^T
void mm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    double* c = C + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[j] * b[j];
      c[p] += s;
    }
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  }
  return true;
}

enum class EwKind { Add, Sub, Mul };

Tensor elementwise2(const char* name, EwKind kind, const Tensor& ta, const Tensor& tb) {
  NodePtr a = node_of(ta, name);
  NodePtr b = node_of(tb, name);
  require(is_suffix(b->shape, a->shape), name,
          "shape " + shape_str(b->shape) + " is not broadcastable onto " + shape_str(a->shape));
  const std::size_t na = a->numel();
  const std::size_t nb = b->numel();
  std::vector<double> out(na);
  const double* av = a->value.data();
  const double* bv = b->value.data();
  switch (kind) {
    case EwKind::Add:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] + bv[i % nb];
      break;
    case EwKind::Sub:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] - bv[i % nb];
      break;
    case EwKind::Mul:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] * bv[i % nb];
      break;
  }
  return make_node(name, a->shape, std::move(out), {a, b}, [kind, nb](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const std::size_t na = o.numel();
    const double* g = o.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      double* da = pa.grad.data();
      if (kind == EwKind::Mul) {
        const double* bv = pb.value.data();
        for (std::size_t i = 0; i < na; ++i) da[i] += g[i] * bv[i % nb];
      } else {
        for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      double* db = pb.grad.data();
      switch (kind) {
        case EwKind::Add:
          for (std::size_t i = 0; i < na; ++i) db[i % nb] += g[i];
          break;
        case EwKind::Sub:
          for (std::size_t i = 0; i < na; ++i) db[i % nb] -= g[i];
          break;
        case EwKind::Mul: {
          const double* av = pa.value.data();
          for (std::size_t i = 0; i < na; ++i) db[i % nb] += g[i] * av[i];
          break;
        }
      }
    }
  });
}

Tensor unary(const char* name, const Tensor& ta, double (*f)(double),
             void (*bwd)(const TensorNode&, TensorNode&)) {
  NodePtr a = node_of(ta, name);
  std::vector<double> out(a->numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make_node(name, a->shape, std::move(out), {a}, [bwd](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    bwd(o, pa);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise2("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise2("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise2("mul", EwKind::Mul, a, b); }

Tensor add_scalar(const Tensor& ta, double s) {
  NodePtr a = node_of(ta, "add_scalar");
  std::vector<double> out(a->value);
  for (double& v : out) v += s;
  return make_node("add_scalar", a->shape, std::move(out), {a}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += o.grad[i];
  });
}

Tensor mul_scalar(const Tensor& ta, double s) {
  NodePtr a = node_of(ta, "mul_scalar");
  std::vector<double> out(a->value);
  for (double& v : out) v *= s;
  return make_node("mul_scalar", a->shape, std::move(out), {a}, [s](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += s * o.grad[i];
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor abs(const Tensor& ta) {
  return unary("abs", ta, [](double v) { return std::fabs(v); }, [](const TensorNode& o, TensorNode& pa) {
    // subgradient 0 at the kink
    for (std::size_t i = 0; i < o.numel(); ++i) {
      double x = pa.value[i];
      pa.grad[i] += o.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  });
}

Tensor exp(const Tensor& ta) {
  return unary("exp", ta, [](double v) { return std::exp(v); }, [](const TensorNode& o, TensorNode& pa) {
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += o.grad[i] * o.value[i];
  });
}

Tensor log(const Tensor& ta) {
  return unary("log", ta, [](double v) { return std::log(v); }, [](const TensorNode& o, TensorNode& pa) {
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += o.grad[i] / pa.value[i];
  });
}

Tensor tanh(const Tensor& ta) {
  return unary("tanh", ta, [](double v) { return std::tanh(v); }, [](const TensorNode& o, TensorNode& pa) {
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += o.grad[i] * (1.0 - o.value[i] * o.value[i]);
  });
}

Tensor sigmoid(const Tensor& ta) {
  return unary("sigmoid", ta, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](const TensorNode& o, TensorNode& pa) {
                 for (std::size_t i = 0; i < o.numel(); ++i) {
                   double s = o.value[i];
                   pa.grad[i] += o.grad[i] * s * (1.0 - s);
                 }
               });
}

Tensor relu(const Tensor& ta) {
  return unary("relu", ta, [](double v) { return v > 0.0 ? v : 0.0; }, [](const TensorNode& o, TensorNode& pa) {
    for (std::size_t i = 0; i < o.numel(); ++i) {
      if (pa.value[i] > 0.0) pa.grad[i] += o.grad[i];
    }
  });
}

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  NodePtr a = node_of(ta, "matmul");
  NodePtr b = node_of(tb, "matmul");
  require(a->shape.size() >= 1 && b->shape.size() == 2, "matmul",
          "expected (..., k) x (k, n), got " + shape_str(a->shape) + " x " + shape_str(b->shape));
  const std::size_t k = a->shape.back();
  require(b->shape[0] == k, "matmul",
          "inner dimensions mismatch " + shape_str(a->shape) + " x " + shape_str(b->shape));
  const std::size_t n = b->shape[1];
  const std::size_t rows = a->numel() / k;
  Shape out_shape(a->shape.begin(), a->shape.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(rows * n, 0.0);
  mm_nn(a->value.data(), b->value.data(), out.data(), rows, k, n);
  return make_node("matmul", std::move(out_shape), std::move(out), {a, b}, [rows, k, n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const double* g = o.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      mm_nt(g, pb.value.data(), pa.grad.data(), rows, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      mm_tn(pa.value.data(), g, pb.grad.data(), rows, k, n);
    }
  });
}

Tensor bmm(const Tensor& ta, const Tensor& tb) {
  NodePtr a = node_of(ta, "bmm");
  NodePtr b = node_of(tb, "bmm");
  require(a->shape.size() >= 2 && a->shape.size() == b->shape.size(), "bmm",
          "rank mismatch " + shape_str(a->shape) + " x " + shape_str(b->shape));
  const std::size_t r = a->shape.size();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    require(a->shape[i] == b->shape[i], "bmm",
            "batch axes differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
  }
  const std::size_t m = a->shape[r - 2], k = a->shape[r - 1];
  require(b->shape[r - 2] == k, "bmm",
          "inner dimensions mismatch " + shape_str(a->shape) + " x " + shape_str(b->shape));
  const std::size_t n = b->shape[r - 1];
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= a->shape[i];
  Shape out_shape(a->shape.begin(), a->shape.end() - 1);
  out_shape.back() = m;  // (..., m)
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    mm_nn(a->value.data() + t * m * k, b->value.data() + t * k * n, out.data() + t * m * n, m, k, n);
  }
  return make_node("bmm", std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const double* g = o.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t t = 0; t < batch; ++t) {
        mm_nt(g + t * m * n, pb.value.data() + t * k * n, pa.grad.data() + t * m * k, m, n, k);
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t t = 0; t < batch; ++t) {
        mm_tn(pa.value.data() + t * m * k, g + t * m * n, pb.grad.data() + t * k * n, m, k, n);
      }
    }
  });
}

namespace {

std::vector<double> permute_raw(const std::vector<double>& in, const Shape& in_shape,
                                const std::vector<std::size_t>& axes, Shape& out_shape) {
  const std::size_t r = in_shape.size();
  out_shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<std::size_t> in_strides(r, 1), step(r);
  for (std::size_t i = r - 1; i  > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];
  std::vector<double> out(in.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = in[src];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) {
        src += step[i];
        break;
      }
      idx[i] = 0;
      src -= step[i] * (out_shape[i] - 1);
    }
  }
  return out;
}

}  // namespace

Tensor permute(const Tensor& ta, const std::vector<std::size_t>& axes) {
  NodePtr a = node_of(ta, "permute");
  const std::size_t r = a->shape.size();
  require(axes.size() == r, "permute", "axes count does not match rank of " + shape_str(a->shape));
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    require(ax < r && !seen[ax], "permute", "axes must be a permutation of 0..rank-1");
    seen[ax] = true;
  }
  Shape out_shape;
  std::vector<double> out = permute_raw(a->value, a->shape, axes, out_shape);
  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) inverse[axes[i]] = i;
  return make_node("permute", std::move(out_shape), std::move(out), {a}, [inverse](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    Shape dummy;
    std::vector<double> gin = permute_raw(o.grad, o.shape, inverse, dummy);
    for (std::size_t i = 0; i < gin.size(); ++i) pa.grad[i] += gin[i];
  });
}

Tensor transpose_last2(const Tensor& a) {
  const std::size_t r = a.rank();
  if (r < 2) throw std::runtime_error("transpose_last2: rank must be >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 2], axes[r - 1]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& ta, Shape new_shape) {
  NodePtr a = node_of(ta, "reshape");
  require(shape_numel(new_shape) == a->numel(), "reshape",
          shape_str(a->shape) + " cannot be reshaped to " + shape_str(new_shape));
  std::vector<double> out(a->value);
  return make_node("reshape", std::move(new_shape), std::move(out), {a}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < o.numel(); ++i) pa.grad[i] += o.grad[i];
  });
}

Tensor flatten(const Tensor& a) { return reshape(a, {a.numel()}); }

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  require(!xs.empty(), "concat", "empty input list");
  std::vector<NodePtr> nodes;
  nodes.reserve(xs.size());
  for (const Tensor& t : xs) nodes.push_back(node_of(t, "concat"));
  const Shape& s0 = nodes[0]->shape;
  require(axis < s0.size(), "concat", "axis out of range for " + shape_str(s0));
  std::size_t axis_total = 0;
  for (const NodePtr& n : nodes) {
    require(n->shape.size() == s0.size(), "concat", "rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i) {
      require(i == axis || n->shape[i] == s0[i], "concat",
              "shapes differ outside axis: " + shape_str(s0) + " vs " + shape_str(n->shape));
    }
    axis_total += n->shape[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> block(nodes.size());
  for (std::size_t t = 0; t < nodes.size(); ++t) block[t] = nodes[t]->shape[axis] * inner;
  const std::size_t out_row = axis_total * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      const double* src = nodes[t]->value.data() + o * block[t];
      std::copy(src, src + block[t], out.data() + o * out_row + off);
      off += block[t];
    }
  }
  return make_node("concat", std::move(out_shape), std::move(out), std::move(nodes),
                   [outer, block, out_row](TensorNode& o) {
                     const double* g = o.grad.data();
                     std::size_t off = 0;
                     for (std::size_t t = 0; t < o.parents.size(); ++t) {
                       TensorNode& p = *o.parents[t];
                       if (p.requires_grad) {
                         p.ensure_grad();
                         for (std::size_t r = 0; r < outer; ++r) {
                           const double* gsrc = g + r * out_row + off;
                           double* dst = p.grad.data() + r * block[t];
                           for (std::size_t i = 0; i < block[t]; ++i) dst[i] += gsrc[i];
                         }
                       }
                       off += block[t];
                     }
                   });
}

Tensor slice(const Tensor& ta, std::size_t axis, std::size_t start, std::size_t len) {
  NodePtr a = node_of(ta, "slice");
  const Shape& s = a->shape;
  require(axis < s.size(), "slice", "axis out of range for " + shape_str(s));
  require(start + len <= s[axis] && len > 0, "slice",
          "range [" + std::to_string(start) + ", " + std::to_string(start + len) + ") out of bounds for " +
              shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const std::size_t in_row = s[axis] * inner, out_row = len * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = a->value.data() + o * in_row + start * inner;
    std::copy(src, src + out_row, out.data() + o * out_row);
  }
  return make_node("slice", std::move(out_shape), std::move(out), {a},
                   [outer, inner, in_row, out_row, start](TensorNode& o) {
                     TensorNode& pa = *o.parents[0];
                     if (!pa.requires_grad) return;
                     pa.ensure_grad();
                     for (std::size_t r = 0; r < outer; ++r) {
                       const double* g = o.grad.data() + r * out_row;
                       double* dst = pa.grad.data() + r * in_row + start * inner;
                       for (std::size_t i = 0; i < out_row; ++i) dst[i] += g[i];
                     }
                   });
}

Tensor softmax_lastdim(const Tensor& ta) {
  NodePtr a = node_of(ta, "softmax");
  require(!a->shape.empty(), "softmax", "rank must be >= 1");
  const std::size_t d = a->shape.back();
  const std::size_t rows = a->numel() / d;
  std::vector<double> out(a->numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a->value.data() + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::size_t i = 0; i < d; ++i) y[i] /= sum;
  }
  return make_node("softmax", a->shape, std::move(out), {a}, [d, rows](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * d;
      const double* g = o.grad.data() + r * d;
      double* dx = pa.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& ta, std::size_t norm_axes, double eps) {
  NodePtr a = node_of(ta, "layer_norm");
  const Shape& s = a->shape;
  require(norm_axes >= 1 && norm_axes <= s.size(), "layer_norm",
          "norm_axes " + std::to_string(norm_axes) + " invalid for " + shape_str(s));
  std::size_t inner = 1;
  for (std::size_t i = s.size() - norm_axes; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = a->numel() / inner;
  std::vector<double> out(a->numel());
  std::vector<double> inv_sigma(outer);
  for (std::size_t r = 0; r < outer; ++r) {
    const double* x = a->value.data() + r * inner;
    double* y = out.data() + r * inner;
    double mu = 0.0;
    for (std::size_t i = 0; i < inner; ++i) mu += x[i];
    mu /= static_cast<double>(inner);
    double var = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      double d = x[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(inner);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t i = 0; i < inner; ++i) y[i] = (x[i] - mu) * is;
  }
  return make_node("layer_norm", s, std::move(out), {a},
                   [outer, inner, inv_sigma = std::move(inv_sigma)](TensorNode& o) {
                     TensorNode& pa = *o.parents[0];
                     if (!pa.requires_grad) return;
                     pa.ensure_grad();
                     const double n = static_cast<double>(inner);
                     for (std::size_t r = 0; r < outer; ++r) {
                       const double* y = o.value.data() + r * inner;  // normalized values
                       const double* g = o.grad.data() + r * inner;
                       double* dx = pa.grad.data() + r * inner;
                       double gsum = 0.0, gysum = 0.0;
                       for (std::size_t i = 0; i < inner; ++i) {
                         gsum += g[i];
                         gysum += g[i] * y[i];
                       }
                       const double is = inv_sigma[r];
                       for (std::size_t i = 0; i < inner; ++i) {
                         dx[i] += is * (g[i] - gsum / n - y[i] * gysum / n);
                       }
                     }
                   });
}

Tensor mean_axis(const Tensor& ta, std::size_t axis) {
  NodePtr a = node_of(ta, "mean_axis");
  const Shape& s = a->shape;
  require(axis < s.size(), "mean_axis", "axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  const std::size_t mid = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < mid; ++m) {
      const double* x = a->value.data() + (o * mid + m) * inner;
      double* y = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) y[i] += x[i];
    }
  }
  const double scale = 1.0 / static_cast<double>(mid);
  for (double& v : out) v *= scale;
  return make_node("mean_axis", std::move(out_shape), std::move(out), {a},
                   [outer, mid, inner, scale](TensorNode& o) {
                     TensorNode& pa = *o.parents[0];
                     if (!pa.requires_grad) return;
                     pa.ensure_grad();
                     for (std::size_t r = 0; r < outer; ++r) {
                       const double* g = o.grad.data() + r * inner;
                       for (std::size_t m = 0; m < mid; ++m) {
                         double* dx = pa.grad.data() + (r * mid + m) * inner;
                         for (std::size_t i = 0; i < inner; ++i) dx[i] += g[i] * scale;
                       }
                     }
                   });
}

Tensor sum_all(const Tensor& ta) {
  NodePtr a = node_of(ta, "sum_all");
  double s = 0.0;
  for (double v : a->value) s += v;
  return make_node("sum_all", {1}, {s}, {a}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    const double g = o.grad[0];
    for (double& d : pa.grad) d += g;
  });
}

Tensor mean_all(const Tensor& ta) {
  NodePtr a = node_of(ta, "mean_all");
  return mul_scalar(sum_all(ta), 1.0 / static_cast<double>(a->numel()));
}

Tensor conv2d(const Tensor& tx, const Tensor& tw, const Tensor& tbias, std::size_t pad) {
  NodePtr x = node_of(tx, "conv2d");
  NodePtr w = node_of(tw, "conv2d");
  NodePtr bias = tbias.defined() ? tbias.node() : nullptr;
  require(x->shape.size() == 4, "conv2d", "input must be (N,C,H,W), got " + shape_str(x->shape));
  require(w->shape.size() == 4, "conv2d", "kernel must be (Cout,Cin,kh,kw), got " + shape_str(w->shape));
  const std::size_t N = x->shape[0], Cin = x->shape[1], H = x->shape[2], W = x->shape[3];
  const std::size_t Cout = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  require(w->shape[1] == Cin, "conv2d",
          "channel mismatch: input " + shape_str(x->shape) + " kernel " + shape_str(w->shape));
  require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d", "kernel larger than padded input");
  const std::size_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (bias) {
    require(bias->shape == Shape{Cout}, "conv2d",
            "bias must be (Cout), got " + shape_str(bias->shape));
  }

  std::vector<double> out(N * Cout * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double* oplane = out.data() + (n * Cout + co) * Ho * Wo;
      if (bias) {
        const double bv = bias->value[co];
        for (std::size_t i = 0; i < Ho * Wo; ++i) oplane[i] = bv;
      }
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double* xplane = x->value.data() + (n * Cin + ci) * H * W;
        const double* wk = w->value.data() + (co * Cin + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::size_t oy_lo = (pad > ky) ? pad - ky : 0;
          const std::size_t oy_hi = std::min(Ho, H + pad - ky);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = wk[ky * kw + kx];
            const std::size_t ox_lo = (pad > kx) ? pad - kx : 0;
            const std::size_t ox_hi = std::min(Wo, W + pad - kx);
            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
              const double* xrow = xplane + (oy + ky - pad) * W + (ox_lo + kx - pad);
              double* orow = oplane + oy * Wo + ox_lo;
              for (std::size_t i = 0; i < ox_hi - ox_lo; ++i) orow[i] += wv * xrow[i];
            }
          }
        }
      }
    }
  }
  Shape out_shape{N, Cout, Ho, Wo};
  std::vector<NodePtr> parents = bias ? std::vector<NodePtr>{x, w, bias} : std::vector<NodePtr>{x, w};
  return make_node("conv2d", std::move(out_shape), std::move(out), std::move(parents),
                   [N, Cin, Cout, H, W, Ho, Wo, kh, kw, pad](TensorNode& o) {
                     TensorNode& px = *o.parents[0];
                     TensorNode& pw = *o.parents[1];
                     TensorNode* pb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
                     const double* g = o.grad.data();
                     if (pb && pb->requires_grad) {
                       pb->ensure_grad();
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t co = 0; co < Cout; ++co) {
                           const double* gp = g + (n * Cout + co) * Ho * Wo;
                           double s = 0.0;
                           for (std::size_t i = 0; i < Ho * Wo; ++i) s += gp[i];
                           pb->grad[co] += s;
                         }
                       }
                     }
                     if (pw.requires_grad) pw.ensure_grad();
                     if (px.requires_grad) px.ensure_grad();
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t co = 0; co < Cout; ++co) {
                         const double* gplane = g + (n * Cout + co) * Ho * Wo;
                         for (std::size_t ci = 0; ci < Cin; ++ci) {
                           const double* xplane = px.value.data() + (n * Cin + ci) * H * W;
                           const double* wk = pw.value.data() + (co * Cin + ci) * kh * kw;
                           double* dwk = pw.requires_grad ? pw.grad.data() + (co * Cin + ci) * kh * kw : nullptr;
                           double* dxplane = px.requires_grad ? px.grad.data() + (n * Cin + ci) * H * W : nullptr;
                           for (std::size_t ky = 0; ky < kh; ++ky) {
                             const std::size_t oy_lo = (pad > ky) ? pad - ky : 0;
                             const std::size_t oy_hi = std::min(Ho, H + pad - ky);
                             for (std::size_t kx = 0; kx < kw; ++kx) {
                               const std::size_t ox_lo = (pad > kx) ? pad - kx : 0;
                               const std::size_t ox_hi = std::min(Wo, W + pad - kx);
                               const std::size_t len = ox_hi - ox_lo;
                               double acc = 0.0;
                               const double wv = wk[ky * kw + kx];
                               for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                                 const double* grow = gplane + oy * Wo + ox_lo;
                                 const double* xrow = xplane + (oy + ky - pad) * W + (ox_lo + kx - pad);
                                 if (dwk) {
                                   for (std::size_t i = 0; i < len; ++i) acc += grow[i] * xrow[i];
                                 }
                                 if (dxplane) {
                                   double* dxrow = dxplane + (oy + ky - pad) * W + (ox_lo + kx - pad);
                                   for (std::size_t i = 0; i < len; ++i) dxrow[i] += wv * grow[i];
                                 }
                               }
                               if (dwk) dwk[ky * kw + kx] += acc;
                             }
                           }
                         }
                       }
                     }
                   });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad) {
  return conv2d(x, w, Tensor(), pad);
}

Tensor avg_pool2(const Tensor& tx) {
  NodePtr x = node_of(tx, "avg_pool2");
  require(x->shape.size() == 4, "avg_pool2", "input must be (N,C,H,W), got " + shape_str(x->shape));
  const std::size_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  require(H % 2 == 0 && W % 2 == 0, "avg_pool2", "H and W must be even, got " + shape_str(x->shape));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(N * C * Ho * Wo);
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* xp = x->value.data() + p * H * W;
    double* op = out.data() + p * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const double* r0 = xp + 2 * oy * W;
      const double* r1 = r0 + W;
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        op[oy * Wo + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
      }
    }
  }
  return make_node("avg_pool2", {N, C, Ho, Wo}, std::move(out), {x}, [N, C, H, W, Ho, Wo](TensorNode& o) {
    TensorNode& px = *o.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t p = 0; p < N * C; ++p) {
      const double* gp = o.grad.data() + p * Ho * Wo;
      double* dx = px.grad.data() + p * H * W;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        double* r0 = dx + 2 * oy * W;
        double* r1 = r0 + W;
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const double g = 0.25 * gp[oy * Wo + ox];
          r0[2 * ox] += g;
          r0[2 * ox + 1] += g;
          r1[2 * ox] += g;
          r1[2 * ox + 1] += g;
        }
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2) throw std::runtime_error("attention: inputs must be (..., n, d)");
  const double d = static_cast<double>(q.shape().back());
  Tensor scores = mul_scalar(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(d));
  return bmm(softmax_lastdim(scores), v);
}

}  // namespace rvt::ops
