#pragma once

#include <functional>
#include <vector>

#include "owvis/tensor.hpp"

namespace owvis {

// Elementwise; shapes must match exactly. No broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Dense 2-D algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // (n,k)x(k,m) -> (n,m)
Tensor transpose(const Tensor& a);                // (n,m) -> (m,n)
// y = x * w^T + b with x (n,k), w (out,k), b (out); bias broadcasts over
// the leading row dimension.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Row softmax over the last dimension with max-subtraction. -inf entries
// produce exactly 0.0 weight; a row whose entries are all -inf raises
// Error("empty-attention-row").
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);

// softmax(add_mask + q * k^T) * v with q (n,d), k (m,d), v (m,c),
// add_mask (n,m) of 0 / -inf entries (any finite value is also legal).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& add_mask);

// Smooth elementwise nonlinearities.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

// Reductions to a scalar (shape {1}).
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Rank-2 structural ops.
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor reshape(const Tensor& x, Shape s);

// y[i] = x[i, idx[i]] for x (n,v); gradient scatters back.
Tensor select_lastdim(const Tensor& x, const std::vector<int>& idx);

// Row layer normalization for x (n,c) with per-channel gain/bias (c).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// Gathers rows of table (v,c) by id; gradient scatters into the table.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Patch extraction for convolution-as-matmul. x is (t,h,w,c); each output
// row holds one kh*kw*c patch (zero padded), frames independent. Output is
// (t*ho*wo, kh*kw*c) with ho = (h + 2*pad - kh) / stride + 1.
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad);

// Rows scaled to unit L2 norm (guarded against zero rows).
Tensor l2_normalize_rows(const Tensor& x);

// -(1/P) * sum over unordered pairs (i<j) of selected rows of the L1
// distance ||x_i - x_j||_1, P = number of pairs. Returns constant 0 when
// fewer than two rows are selected. Always <= 0.
Tensor neg_mean_pairwise_l1(const Tensor& x, const std::vector<int>& rows);

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
};

// Central-difference verification of reverse-mode gradients.
// f must rebuild its value from the parameters' current values on every
// call and be deterministic. For each checked coordinate the relative
// error is |fd - ad| / max(1, |fd|, |ad|). coord_budget > 0 checks a
// seeded random subset of coordinates; 0 checks all of them.
// Errors: "finite-diff-precision" unless the 64-bit mode is active,
// "finite-diff-eps" for eps outside [1e-7, 1e-3], "finite-diff-nan" if f
// evaluates to NaN.
GradCheckResult finite_diff_check(const std::function<Tensor()>& f,
                                  const std::vector<Parameter*>& params, double eps,
                                  int64_t coord_budget = 0, uint64_t sample_seed = 0);

}  // namespace owvis
