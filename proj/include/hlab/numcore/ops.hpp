#pragma once

#include <span>

#include "hlab/numcore/tensor.hpp"

namespace hlab {

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor silu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduces the last dimension; a rank-1 input yields shape [1].
Tensor sum_lastdim(const Tensor& a);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);

Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);

Tensor reshape(const Tensor& a, Shape shape);
// Rows [begin, end) along the leading dimension.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
// out[i] = x[i, ids[i]] for x of shape [T x V].
Tensor gather_lastdim(const Tensor& x, std::span<const int> ids);
// Rows of a [V x d] table selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);

}  // namespace hlab
