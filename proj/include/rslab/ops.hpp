#pragma once

#include <vector>

#include "rslab/tensor.hpp"

namespace rslab {

// Differentiable operations over Tensors. Every op allocates a fresh result
// node; gradients flow to any input with requires_grad. Unless noted, shapes
// must match exactly and a DimensionError is thrown otherwise.
//
// Spatial tensors are stored channels-first: [C,H,W], batched [B,C,H,W].
// Ops that accept both ranks treat the rank-(n-1) form as batch size 1.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_act(const Tensor& a);

/// x: [..., N] plus bias [N] broadcast over leading dims.
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor sum_all(const Tensor& a);

/// Scalar dot of x with a constant weight vector (mask-weighted reductions).
Tensor weighted_sum(const Tensor& x, const std::vector<double>& w);

/// a: [B,N1] or [N1], b matching rank; concatenated along the last axis.
Tensor concat_cols(const Tensor& a, const Tensor& b);

/// Columns [lo, hi) of x: [B,N] -> [B,hi-lo] (or rank-1 equivalent).
Tensor slice_cols(const Tensor& x, int lo, int hi);

/// Same data, new shape (copying; gradient passes through).
Tensor reshape(const Tensor& x, const Shape& shape);

/// a: [m,k] * b: [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = x W^T (+ bias). x: [B,in] or [in]; W: [out,in]; bias: [out] or empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

/// Cross-correlation. x: [B,Cin,H,W] or [Cin,H,W]; w: [Cout,Cin,kh,kw];
/// bias: [Cout] or empty. Output spatial dims: (H+2p-kh)/s+1 etc.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor(), int stride = 1,
              int pad = 0);

/// 2x2 max pooling with stride 2; spatial dims must be even.
Tensor maxpool2x2(const Tensor& x);

/// Numerically stabilized softmax along `axis` (max subtracted first).
Tensor softmax(const Tensor& x, int axis);

struct LstmOut {
  Tensor h;
  Tensor c;
};

/// Standard LSTM cell. Gate rows of w_ih/w_hh are ordered [input, forget,
/// candidate, output]. x: [B,in] or [in]; h,c: [B,H] or [H]; w_ih: [4H,in];
/// w_hh: [4H,H]; b: [4H]. Differentiable through both returned states.
LstmOut lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w_ih,
                  const Tensor& w_hh, const Tensor& b);

/// Rows of `table` selected by ids -> [B,D]. Out-of-range id -> InputError.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

/// One row of `table` -> [D].
Tensor embedding_row(const Tensor& table, int id);

/// Attention scores: <query, key_ij> for every spatial cell, flattened.
/// query: [B,D] or [D]; keys: [B,D,H,W] or [D,H,W] -> [B,H*W] or [H*W].
Tensor attention_scores(const Tensor& query, const Tensor& keys);

/// Glimpse: sum_ij alpha_ij * value_ij. alpha: [B,HW] or [HW];
/// values: [B,D,H,W] or [D,H,W] -> [B,D] or [D].
Tensor attention_aggregate(const Tensor& alpha, const Tensor& values);

/// Concatenates a constant (non-learned) channel block to every batch item.
/// x: [B,C,H,W]; extra: C2*H*W values -> [B,C+C2,H,W].
Tensor append_const_channels(const Tensor& x, const std::vector<double>& extra, int c2);

/// Per-row negative log-likelihood from raw logits (fused log-softmax).
/// logits: [B,K]; targets[b] in [0,K) or -1 to emit 0 with no gradient.
Tensor nll_from_logits(const Tensor& logits, const std::vector<int>& targets);

// Plain (non-differentiated) helpers used by decode paths and tests.
std::vector<double> softmax_values(std::span<const double> logits);
int argmax_lowest(std::span<const double> v);

}  // namespace rslab
