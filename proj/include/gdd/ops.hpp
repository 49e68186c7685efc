#pragma once
// Differentiable primitives. Each op computes its forward value immediately
// and, when a Tape is active and some input wants gradients, records a
// backward rule. Reductions and inner products accumulate in ascending flat
// index / ascending k order, so identical inputs give identical bits.
//
// Shape rules are strict: binary elementwise ops demand identical shapes (the
// only "broadcast" is scalar_mul), log demands strictly positive input.
#include <vector>

#include "gdd/rng.hpp"
#include "gdd/tensor.hpp"

namespace gdd {

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(double s, const TensorPtr& a);
TensorPtr exp_op(const TensorPtr& a);
TensorPtr log_op(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);

// Same data, new shape (element count must match).
TensorPtr reshape(const TensorPtr& a, std::vector<int> shape);

// Reductions remove `axes` (full reduction yields shape [1]).
TensorPtr reduce_sum(const TensorPtr& a, const std::vector<int>& axes);
TensorPtr reduce_mean(const TensorPtr& a, const std::vector<int>& axes);
TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);

// sum of w * (a - b), shape [1]: fused sum_all(mul(w, sub(a, b))), bit for bit
// — per element the same difference, product, and ascending accumulation —
// without the two intermediate tensors. The workhorse of the KL losses.
TensorPtr weighted_diff_sum(const TensorPtr& w, const TensorPtr& a, const TensorPtr& b);

// Softmax along `axis` at temperature tau > 0, max-subtracted for stability.
TensorPtr softmax_wt(const TensorPtr& x, int axis, double tau);

// Softmax over each spatial plane of a 4-d tensor: one slice per (n, c).
// Same bits as softmax_wt on the flattened [N*C, H*W] view, minus the
// reshape copies on both passes.
TensorPtr softmax_spatial(const TensorPtr& x, double tau);

// input [N,Cin,H,W] * weight [Cout,Cin,kh,kw] + bias [Cout],
// zero padding, H' = (H + 2*padding - kh)/stride + 1.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 int stride, int padding);

// Constant leaf of N(mu, sigma^2) draws in flat-index order (Box-Muller
// stream of `rng`); sigma = 0 gives the constant mu without consuming state.
TensorPtr gaussian_sample(Rng& rng, std::vector<int> shape, double mu, double sigma);

// Throws NumericError naming `what` if any entry is NaN/Inf.
void check_finite(const Tensor& t, const char* what);

}  // namespace gdd
