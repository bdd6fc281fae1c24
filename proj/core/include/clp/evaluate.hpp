#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clp/model.hpp"

namespace clp {

// exp(mean next-token NLL in nats) over non-overlapping windows covering
// the corpus. Per-window log-likelihood sums are accumulated in window
// order, so the value does not depend on how windows are grouped into
// forward batches.
double perplexity(const TransformerLM& model, const Corpus& corpus, int64_t seq_len,
                  int64_t batch_size = 8);

// Linear centered-kernel alignment between activation matrices [N, D]:
// ||Yt X||_F^2 / (||Xt X||_F * ||Yt Y||_F) after column centering.
// Invariant to orthogonal transforms and nonzero scaling of either input.
double linear_cka(const Tensor& x, const Tensor& y);

// CKA between every pair of residual-stream snapshots o_0..o_L, tokens
// pooled across batches and positions, capped at max_rows rows.
std::vector<std::vector<double>> cka_matrix(const TransformerLM& model,
                                            std::span<const Batch> batches,
                                            int64_t max_rows = 4096);

// Median of a non-empty sample (mean of the two middle order statistics
// for even sizes).
double median(std::vector<double> v);

struct ThroughputResult {
    double tokens_per_sec = 0.0;  // median over measured repetitions
    std::vector<double> per_rep;
    int64_t tokens_per_rep = 0;
    int64_t batch = 0;
    int64_t prompt_len = 0;
    int64_t gen_len = 0;
};

// Greedy decoding speed from an in-memory prompt (no tokenization or I/O in
// the timed region). Each repetition generates batch * gen_len tokens by
// full re-encoding per step; `warmup` leading repetitions are discarded.
ThroughputResult generation_throughput(const TransformerLM& model, const Batch& prompt,
                                       int64_t gen_len, int repetitions, int warmup = 1);

// Pure aggregation used by the benchmark path, separated for testability:
// durations (seconds per repetition, warmup already excluded) to median
// tokens/sec.
double throughput_from_durations(std::span<const double> seconds, int64_t tokens_per_rep);

}  // namespace clp
