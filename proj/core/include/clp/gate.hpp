#pragma once

#include <vector>

#include "clp/tensor.hpp"

namespace clp {

// Integer window of layers to remove: [start, start+length) in 0-based
// layer numbering.
struct PruneWindow {
    int start = 0;
    int length = 0;

    bool operator==(const PruneWindow&) const = default;
};

// Parameters of the smooth gate over layer indices: a dip that is ~0 across
// [start, start+window_len-1] and ~1 elsewhere, with transition sharpness k.
struct GateParams {
    double start = 0.0;   // continuous window start (the learnable quantity)
    int window_len = 0;   // fixed window length n
    double sharpness = 5.0;
    int num_layers = 0;

    void validate() const;
};

enum class MaskKind { soft, hard };

// Per-layer output multipliers; soft masks come from the gate, hard masks
// are the 0/1 limit used by the oracle and the pruner.
struct LayerMask {
    MaskKind kind = MaskKind::soft;
    std::vector<Real> values;
};

// Clamp a continuous start into the feasible range [0, num_layers - n].
double clamp_start(double start, int window_len, int num_layers);

// Gate value m(i) = 1 - sigmoid(k(i-a)) * sigmoid(-k(i-a-n+1)) at a (not
// necessarily integer) layer index.
double gate_value(const GateParams& gp, double layer_index);

// Closed-form dm(i)/da = k*s1*s2*(s2-s1), s1 = sigmoid(k(i-a)),
// s2 = sigmoid(-k(i-a-n+1)). Exactly zero by symmetry at the window center
// when n is odd.
double gate_grad_start(const GateParams& gp, double layer_index);

LayerMask soft_mask(const GateParams& gp);
LayerMask hard_mask(const PruneWindow& w, int num_layers);

// Integer window from a continuous start: round half away from zero, then
// clamp into range.
PruneWindow round_window(const GateParams& gp);

// The same gate values built from tape primitives on a scalar `start`
// tensor, so d(loss)/d(start) flows through a gated forward pass. Values
// agree with soft_mask() to machine precision.
std::vector<Tensor> soft_mask_on_tape(Tape* tape, const Tensor& start, const GateParams& gp);

}  // namespace clp
