#pragma once

#include <optional>
#include <span>
#include <vector>

#include "clp/calibrate.hpp"

namespace clp {

struct WindowScore {
    PruneWindow window;
    double kl = 0.0;
    std::optional<double> eval_ppl;
};

// Ground-truth search: mean KL(dense || hard-gated) over the calibration
// batches for every window start in [0, L - n], sorted ascending by KL
// (ties broken by start). The dense distribution is computed once per batch
// and shared across windows.
std::vector<WindowScore> enumerate_windows(const TransformerLM& model, int window_len,
                                           std::span<const Batch> calib, int max_threads = 0);

struct Agreement {
    int rank = 0;        // 1-based position of `found` in the oracle order
    double kl_gap = 0.0; // kl(found) - kl(best)
};

Agreement agreement_report(std::span<const WindowScore> ranked, const PruneWindow& found);

}  // namespace clp
