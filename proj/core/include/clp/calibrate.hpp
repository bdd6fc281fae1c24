#pragma once

#include <span>
#include <vector>

#include "clp/gate.hpp"
#include "clp/model.hpp"

namespace clp {

struct CalibConfig {
    int window_len = 3;          // n, fixed by the pruning rate
    double sharpness = 5.0;      // k
    double start_init = -1.0;    // initial a; negative means num_layers - 1
    double learning_rate = 0.5;
    int epochs = 1;

    void validate() const;
};

struct CalibRecord {
    int step = 0;
    double start = 0.0;  // a after this step's update (clamped)
    double loss = 0.0;   // KL evaluated before the update
};

struct CalibResult {
    PruneWindow window;
    double final_start = 0.0;
    std::vector<CalibRecord> trajectory;
};

// Mean per-token KL(dense || gated) for a fixed mask; no gradients. The
// dense distribution is recomputed from the same model without gates.
double kl_objective(const TransformerLM& model, const LayerMask& mask, const Batch& batch);

// Tape-recorded variant: builds the soft gate from the scalar `start`
// tensor, so backward() yields d(KL)/d(start). Model parameters stay
// frozen; the dense pass is untracked.
Tensor kl_objective_grad(const TransformerLM& model, const Tensor& start, const GateParams& gp,
                         const Batch& batch, Tape& tape);

// SGD on the continuous window start with per-step clamping, one pass per
// epoch over the calibration batches. Deterministic; a non-finite loss
// aborts with the last valid state in the message.
CalibResult optimize_start(const TransformerLM& model, std::span<const Batch> calib,
                           const CalibConfig& cfg);

}  // namespace clp
