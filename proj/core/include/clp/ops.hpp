#pragma once

#include <cstdint>
#include <span>

#include "clp/tensor.hpp"

namespace clp::ops {

// Differentiable primitives. Every op takes an optional tape: with a tape it
// records a backward function when any input requires gradients; with
// nullptr it is a plain forward evaluation and the result never requires
// gradients. Shapes are validated up front and mismatches throw
// ContractError naming the op.

// Elementwise, identical shapes.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

// scale * x + shift, elementwise with scalar constants.
Tensor affine(Tape* tape, const Tensor& x, Real scale, Real shift);

Tensor sigmoid(Tape* tape, const Tensor& x);

// Exact (erf-based) gaussian error linear unit.
Tensor gelu(Tape* tape, const Tensor& x);

// a: [..., K], b: [K, N] -> [..., N].
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

// x: [..., In], w: [In, Out], b: [Out] -> [..., Out]. Fused x@w + b.
Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Normalizes the last axis; gain/bias: [D].
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = Real(1e-5));

// Softmax along `axis` (negative counts from the end). Non-finite inputs
// raise NumericError; rows are max-shifted before exponentiation.
Tensor softmax(Tape* tape, const Tensor& x, int64_t axis = -1);

// table: [V, D]; ids are row indices -> [ids.size(), D] reshaped to
// id_shape + [D]. Backward scatter-adds into the table gradient.
Tensor embedding(Tape* tape, const Tensor& table, std::span<const int32_t> ids, Shape id_shape);

// x: [B, T, D] plus rows: [T, D] broadcast over the batch axis.
Tensor add_seq_bias(Tape* tape, const Tensor& x, const Tensor& rows);

// Multi-head causal self-attention over pre-projected q/k/v: [B, T, D] with
// D divisible by n_heads. Position t attends to positions <= t only; the
// masking is structural (scores past t are never formed), so no sentinel
// -inf values enter the computation.
Tensor causal_attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        int64_t n_heads);

// logits: [..., V] flattened to rows; targets: one id per row. Mean negative
// log-likelihood in nats, computed via fused log-sum-exp.
Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int32_t> targets);

// p, q: [..., V] rows of probabilities. Sum over the class axis of
// p * log(p / max(q, floor)), averaged over rows; terms with p == 0
// contribute zero. Scalar output.
Tensor kl_divergence(Tape* tape, const Tensor& p, const Tensor& q);
inline constexpr Real kKlFloor = Real(1e-10);

// gate * transformed + (1 - gate) * skip with a scalar gate tensor.
// d/d(gate) = sum((transformed - skip) * upstream).
Tensor gate_mix(Tape* tape, const Tensor& skip, const Tensor& transformed, const Tensor& gate);

// Reductions to a scalar.
Tensor sum(Tape* tape, const Tensor& x);
Tensor mean(Tape* tape, const Tensor& x);

}  // namespace clp::ops
