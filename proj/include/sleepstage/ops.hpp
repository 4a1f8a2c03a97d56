#pragma once

// Differentiable layer set recorded on the Tape. All batched; batch is the
// leading dimension. Convolution and affine kernels lower to dense matrix
// multiplies (im2col); everything else is explicit loops.

#include <vector>

#include "sleepstage/common.hpp"
#include "sleepstage/tape.hpp"

namespace sleepstage {

// x: [B,P,M,T]; filters: [Q,P,M,w]; bias: [Q]  ->  [B,T-w+1,Q]
// out[b,t,q] = bias[q] + sum_{p,m,k} x[b,p,m,t+k] * filters[q,p,m,k]
NodeId conv_over_time(Tape& t, NodeId x, NodeId filters, NodeId bias);

// Elementwise max(x, 0).
NodeId relu(Tape& t, NodeId x);

// x: [B,L,Q] -> [B,Q]; max over the middle (time) axis. Gradient routes to the
// first-occurring argmax.
NodeId max_over_time(Tape& t, NodeId x);

// Each xs[i]: [B,Di] -> [B, sum Di], concatenated in argument order.
NodeId concat_cols(Tape& t, const std::vector<NodeId>& xs);

// Inverted dropout: scales kept entries by 1/(1-rate) in train mode; in
// inference mode (or rate 0) returns x unchanged.
NodeId dropout(Tape& t, NodeId x, double rate, bool train_mode, Rng& rng);

// x: [B,D]; weights: [K,D]; bias: [K] -> [B,K];  out = x * W^T + b
NodeId affine(Tape& t, NodeId x, NodeId weights, NodeId bias);

// bank: [M,F]; x: [B,P,F,T] -> [B,P,M,T];  out[b,p] = bank * x[b,p]
NodeId apply_bank(Tape& t, NodeId bank, NodeId x);

// Channels-last 2-D valid convolution. x: [B,H,W,C]; kernels: [K,kh,kw,C];
// bias: [K] -> [B,H-kh+1,W-kw+1,K]
NodeId conv2d_valid(Tape& t, NodeId x, NodeId kernels, NodeId bias);

// Channels-last max pooling, stride = pool size, trailing remainder dropped.
NodeId maxpool2d(Tape& t, NodeId x, std::int64_t ph, std::int64_t pw);

// [B, d1, d2, ...] -> [B, d1*d2*...]
NodeId flatten(Tape& t, NodeId x);

// Same-shape elementwise sum (used to add the penalty to the data term).
NodeId add(Tape& t, NodeId a, NodeId b);

// value = lambda/2 * sum over params of ||theta||^2; gradient adds
// lambda * theta to every parameter.
NodeId l2_penalty(Tape& t, const std::vector<NodeId>& params, double lambda);

// logits: [B, S*Y] viewed as S probability slots per sample; labels: B*S class
// indices (row-major by sample then slot). Returns the scalar
//   (1/B) * sum_b sum_s -ln(max(softmax(logits[b,s])[labels[b,s]], 1e-12)).
// If probs_out is non-null it receives the [B, S*Y] softmax values.
NodeId multitask_xent(Tape& t, NodeId logits, const std::vector<int>& labels,
                      int n_slots, int n_classes, Tensor* probs_out = nullptr);

// Non-tape helper: per-slot softmax of logits [N, S*Y] -> same shape.
Tensor softmax_slots(const Tensor& logits, int n_slots, int n_classes);

}  // namespace sleepstage
