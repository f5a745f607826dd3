#pragma once

#include <initializer_list>
#include <vector>

#include "units/rng.hpp"
#include "units/tensor.hpp"

namespace units {

// Elementwise (shapes must match exactly; no implicit broadcasting).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);

// Linear algebra (rank-2).
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// Shape manipulation.
TensorPtr reshape(const TensorPtr& a, Shape s);
TensorPtr permute(const TensorPtr& a, const std::vector<Index>& perm);
TensorPtr concat(const std::vector<TensorPtr>& parts, Index axis);
std::vector<TensorPtr> split(const TensorPtr& a, Index axis, const std::vector<Index>& sizes);
TensorPtr slice(const TensorPtr& a, Index axis, Index start, Index len);

// Reductions and normalizations.
TensorPtr softmax(const TensorPtr& a, Index axis);
TensorPtr mean_axis(const TensorPtr& a, Index axis);
TensorPtr sum_all(const TensorPtr& a);
TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-5);

// Structured ops.
/// x: (L, v, d_in), w: (3, d_in, d_out), b: (d_out). Zero-padded along L,
/// channel-mixing, each variable independent.
TensorPtr conv1d_k3(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

/// Corner-aligned bilinear resize of a rank-2 weight matrix; differentiable
/// w.r.t. w. A 1-extent input axis broadcasts its single value.
TensorPtr bilinear_resize(const TensorPtr& w, Index rows, Index cols);

/// s has a's shape with last extent 1; multiplies each last-axis vector of a
/// by the matching scalar of s.
TensorPtr scale_last(const TensorPtr& a, const TensorPtr& s);

/// b has length = a's last extent; added to every last-axis vector.
TensorPtr add_bias(const TensorPtr& a, const TensorPtr& b);

/// c has length = a's first extent; c[i] is added to every element of row i.
TensorPtr add_row_const(const TensorPtr& a, const TensorPtr& c);

// Losses.
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);
TensorPtr cross_entropy(const TensorPtr& logits, Index label);

// Parameter factories (not taped).
TensorPtr randn_tensor(Rng& rng, const Shape& s, double stddev, double mean = 0.0);
TensorPtr xavier_tensor(Rng& rng, const Shape& s);

}  // namespace units
