#include "clp/oracle.hpp"

#include <algorithm>
#include <string>

#include "clp/ops.hpp"
#include "clp/parallel.hpp"

namespace clp {

std::vector<WindowScore> enumerate_windows(const TransformerLM& model, int window_len,
                                           std::span<const Batch> calib, int max_threads) {
    int L = model.num_layers();
    if (window_len < 0 || window_len > L) {
        throw ContractError("oracle: window length " + std::to_string(window_len) +
                            " outside [0, " + std::to_string(L) + "]");
    }
    if (window_len == 0) {
        return {WindowScore{PruneWindow{0, 0}, 0.0, std::nullopt}};
    }
    if (calib.empty()) throw DataError("oracle: calibration set is empty");

    int num = L - window_len + 1;
    std::vector<LayerMask> masks;
    masks.reserve(static_cast<size_t>(num));
    for (int s = 0; s < num; ++s) {
        masks.push_back(hard_mask(PruneWindow{s, window_len}, L));
    }

    std::vector<double> totals(static_cast<size_t>(num), 0.0);
    for (const Batch& batch : calib) {
        Tensor p = ops::softmax(nullptr, model.forward(batch, nullptr));
        parallel_for_index(
            num,
            [&](int64_t s) {
                Tensor q = ops::softmax(
                    nullptr, model.forward_gated(batch, masks[static_cast<size_t>(s)], nullptr));
                totals[static_cast<size_t>(s)] += ops::kl_divergence(nullptr, p, q).item();
            },
            max_threads);
    }

    std::vector<WindowScore> scores;
    scores.reserve(static_cast<size_t>(num));
    for (int s = 0; s < num; ++s) {
        scores.push_back(WindowScore{PruneWindow{s, window_len},
                                     totals[static_cast<size_t>(s)] /
                                         static_cast<double>(calib.size()),
                                     std::nullopt});
    }
    std::stable_sort(scores.begin(), scores.end(), [](const WindowScore& x, const WindowScore& y) {
        if (x.kl != y.kl) return x.kl < y.kl;
        return x.window.start < y.window.start;
    });
    return scores;
}

Agreement agreement_report(std::span<const WindowScore> ranked, const PruneWindow& found) {
    if (ranked.empty()) throw ContractError("agreement: empty oracle ranking");
    if (found.length != ranked.front().window.length) {
        throw ContractError("agreement: window length " + std::to_string(found.length) +
                            " does not match oracle's " +
                            std::to_string(ranked.front().window.length));
    }
    for (size_t i = 0; i < ranked.size(); ++i) {
        if (ranked[i].window == found) {
            return Agreement{static_cast<int>(i) + 1, ranked[i].kl - ranked.front().kl};
        }
    }
    throw ContractError("agreement: window start " + std::to_string(found.start) +
                        " not present in oracle ranking");
}

}  // namespace clp
