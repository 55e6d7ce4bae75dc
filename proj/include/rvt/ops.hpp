#pragma once

#include <vector>

#include "rvt/tensor.hpp"

namespace rvt::ops {

// Elementwise. For add/sub/mul the right operand may either match the left
// shape exactly or be a trailing-shape broadcast (b.shape is a suffix of
// a.shape, e.g. bias (C) added to activations (T,Q,C)).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// a: (..., k) x b: (k, n) -> (..., n). Leading axes of a are batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);
// a: (..., m, k) x b: (..., k, n) with identical leading axes -> (..., m, n)
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor transpose_last2(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape new_shape);  // copies; numel preserved
Tensor flatten(const Tensor& a);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);

Tensor softmax_lastdim(const Tensor& a);
// Normalizes over the trailing `norm_axes` axes (no affine part; scale and
// shift are applied by the caller so they stay ordinary parameters).
Tensor layer_norm(const Tensor& a, std::size_t norm_axes, double eps = 1e-10);

Tensor mean_axis(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout), stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t pad);
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad);
// 2x2 average pooling; H and W must be even.
Tensor avg_pool2(const Tensor& x);

// Scaled dot-product attention composed from the primitives above.
// q,k,v: (..., n, d) with identical leading axes.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace rvt::ops
