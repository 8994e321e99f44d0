#pragma once

// Differentiable operations. 2-D operands are [rows, cols] row-major; image
// operands are NCHW. Every op checks shapes and names itself on mismatch.

#include <dip/nn/tensor.hpp>

#include <span>

namespace dip::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// [n,k] x [k,m] -> [n,m]
Var matmul(const Var& a, const Var& b);
// x [n,in], w [in,out], b [out] (optional) -> [n,out]
Var dense(const Var& x, const Var& w, const Var& b = {});

Var silu(const Var& x);

// Normalizes each row of x [n,m]; gamma/beta [m] are optional.
Var layer_norm(const Var& x, const Var& gamma = {}, const Var& beta = {}, double eps = 1e-6);

// x [g*r, m] with e [g, m]: row block i gets e[i] added / multiplied.
Var add_group(const Var& x, const Var& e);
Var mul_group(const Var& x, const Var& e);
// x [g*r, m] with p [r, m]: p added to every block.
Var add_tiled(const Var& x, const Var& p);

Var slice_cols(const Var& x, Index begin, Index count);
Var embedding(const Var& table, std::span<const Index> rows);

// Multi-head softmax attention over `groups` independent sequences packed
// row-wise into q, k, v [groups*len, d].
Var attention(const Var& q, const Var& k, const Var& v, Index groups, Index heads);
// Softmax weights [groups, heads, len, len] of the same computation.
Tensor attention_weights(const Var& q, const Var& k, Index groups, Index heads);

// x [b,c,h,w], w [o,c,k,k], bias [o] (optional); stride 1, zero padding.
Var conv2d(const Var& x, const Var& w, const Var& bias, Index pad);
Var avg_pool2d(const Var& x, Index factor = 2);
Var upsample_nearest(const Var& x, Index factor = 2);
Var concat_channels(const Var& a, const Var& b);
// x [b,c] -> [b,c,h,w] with every pixel equal to x.
Var broadcast_spatial(const Var& x, Index h, Index w);

Var reshape(const Var& x, Shape shape);
// out[i] = x[index[i]]; gradients scatter-add back.
Var gather(const Var& x, Shape shape, std::vector<Index> index);

// Mean squared difference over all elements.
Var mse(const Var& pred, const Var& target);

}  // namespace dip::nn
