#include "clp/evaluate.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "clp/ops.hpp"

namespace clp {

double perplexity(const TransformerLM& model, const Corpus& corpus, int64_t seq_len,
                  int64_t batch_size) {
    if (seq_len < 1 || batch_size < 1) {
        throw ContractError("perplexity: seq_len and batch_size must be >= 1");
    }
    int64_t len = static_cast<int64_t>(corpus.ids.size());
    std::vector<int64_t> starts;
    for (int64_t s = 0; s + seq_len < len; s += seq_len) starts.push_back(s);
    if (starts.empty()) {
        throw DataError("perplexity: corpus of " + std::to_string(len) +
                        " tokens is too short for windows of " + std::to_string(seq_len));
    }
    int64_t vocab = model.spec().vocab_size;
    double total_nll = 0.0;
    int64_t total_tokens = 0;
    for (size_t g = 0; g < starts.size(); g += static_cast<size_t>(batch_size)) {
        size_t actual = std::min(static_cast<size_t>(batch_size), starts.size() - g);
        std::span<const int64_t> group(starts.data() + g, actual);
        Batch batch = make_batch(corpus, group, seq_len);
        Tensor logits = model.forward(batch, nullptr);
        auto lv = logits.values();
        // Window-ordered accumulation keeps the sum independent of batching.
        for (int64_t row = 0; row < batch.batch; ++row) {
            double window_nll = 0.0;
            for (int64_t t = 0; t < seq_len; ++t) {
                const Real* rowv = lv.data() + (row * seq_len + t) * vocab;
                Real mx = rowv[0];
                for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, rowv[j]);
                double sum = 0.0;
                for (int64_t j = 0; j < vocab; ++j) sum += std::exp(rowv[j] - mx);
                int32_t tgt = batch.targets[static_cast<size_t>(row * seq_len + t)];
                window_nll += static_cast<double>(mx) + std::log(sum) -
                              static_cast<double>(rowv[tgt]);
            }
            total_nll += window_nll;
            total_tokens += seq_len;
        }
    }
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

double linear_cka(const Tensor& x, const Tensor& y) {
    if (x.ndim() != 2 || y.ndim() != 2) throw ContractError("cka: inputs must be 2-D [N, D]");
    int64_t n = x.dim(0);
    if (n != y.dim(0)) {
        throw ContractError("cka: sample counts differ (" + std::to_string(n) + " vs " +
                            std::to_string(y.dim(0)) + ")");
    }
    if (n < 2) throw ContractError("cka: need at least 2 samples");
    using MatD = Eigen::MatrixXd;
    auto centered = [n](const Tensor& t) {
        int64_t d = t.dim(1);
        MatD m(n, d);
        auto tv = t.values();
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < d; ++j) {
                m(i, j) = static_cast<double>(tv[static_cast<size_t>(i * d + j)]);
            }
        }
        m.rowwise() -= m.colwise().mean();
        return m;
    };
    MatD xc = centered(x);
    MatD yc = centered(y);
    double xx = (xc.transpose() * xc).norm();
    double yy = (yc.transpose() * yc).norm();
    if (xx == 0.0 || yy == 0.0) {
        throw NumericError("cka: zero-variance activations");
    }
    double cross = (yc.transpose() * xc).squaredNorm();
    return cross / (xx * yy);
}

std::vector<std::vector<double>> cka_matrix(const TransformerLM& model,
                                            std::span<const Batch> batches, int64_t max_rows) {
    if (batches.empty()) throw DataError("cka_matrix: no batches");
    if (max_rows < 2) throw ContractError("cka_matrix: max_rows must be >= 2");
    int64_t d = model.spec().d_model;
    int64_t snapshots = model.num_layers() + 1;

    int64_t rows = 0;
    for (const Batch& b : batches) rows += b.batch * b.seq_len;
    rows = std::min(rows, max_rows);

    std::vector<Tensor> pooled;
    pooled.reserve(static_cast<size_t>(snapshots));
    for (int64_t s = 0; s < snapshots; ++s) pooled.push_back(Tensor::zeros({rows, d}));

    int64_t filled = 0;
    for (const Batch& b : batches) {
        if (filled >= rows) break;
        std::vector<Tensor> states = model.hidden_states(b);
        int64_t take = std::min(b.batch * b.seq_len, rows - filled);
        for (int64_t s = 0; s < snapshots; ++s) {
            auto src = states[static_cast<size_t>(s)].values();
            auto dst = pooled[static_cast<size_t>(s)].values_mut();
            std::copy(src.begin(), src.begin() + take * d, dst.begin() + filled * d);
        }
        filled += take;
    }

    std::vector<std::vector<double>> m(static_cast<size_t>(snapshots),
                                       std::vector<double>(static_cast<size_t>(snapshots), 0.0));
    // Each entry computed independently (no mirroring), so the documented
    // symmetry is a measured property rather than an artifact of the code.
    for (int64_t i = 0; i < snapshots; ++i) {
        for (int64_t j = 0; j < snapshots; ++j) {
            m[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                linear_cka(pooled[static_cast<size_t>(i)], pooled[static_cast<size_t>(j)]);
        }
    }
    return m;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ContractError("median of empty sample");
    std::sort(v.begin(), v.end());
    size_t mid = v.size() / 2;
    if (v.size() % 2 == 1) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

double throughput_from_durations(std::span<const double> seconds, int64_t tokens_per_rep) {
    if (seconds.empty()) throw ContractError("throughput: no measured repetitions");
    if (tokens_per_rep < 1) throw ContractError("throughput: tokens_per_rep must be >= 1");
    std::vector<double> rates;
    rates.reserve(seconds.size());
    for (double s : seconds) {
        if (!(s > 0.0)) throw ContractError("throughput: non-positive duration");
        rates.push_back(static_cast<double>(tokens_per_rep) / s);
    }
    return median(rates);
}

ThroughputResult generation_throughput(const TransformerLM& model, const Batch& prompt,
                                       int64_t gen_len, int repetitions, int warmup) {
    if (gen_len < 1) throw ContractError("throughput: gen_len must be >= 1");
    if (repetitions < 1) throw ContractError("throughput: repetitions must be >= 1");
    if (warmup < 0) throw ContractError("throughput: warmup must be >= 0");
    if (prompt.seq_len + gen_len > model.spec().max_seq_len) {
        throw ContractError("throughput: prompt + gen_len exceeds max_seq_len");
    }
    int64_t vocab = model.spec().vocab_size;

    ThroughputResult result;
    result.batch = prompt.batch;
    result.prompt_len = prompt.seq_len;
    result.gen_len = gen_len;
    result.tokens_per_rep = prompt.batch * gen_len;

    for (int rep = 0; rep < warmup + repetitions; ++rep) {
        std::vector<int32_t> ids = prompt.inputs;
        int64_t cur_len = prompt.seq_len;
        auto t0 = std::chrono::steady_clock::now();
        for (int64_t g = 0; g < gen_len; ++g) {
            Batch b;
            b.batch = prompt.batch;
            b.seq_len = cur_len;
            b.inputs = ids;
            Tensor logits = model.forward(b, nullptr);
            auto lv = logits.values();
            std::vector<int32_t> next(static_cast<size_t>(prompt.batch));
            for (int64_t row = 0; row < prompt.batch; ++row) {
                const Real* last = lv.data() + (row * cur_len + cur_len - 1) * vocab;
                int32_t best = 0;
                for (int64_t j = 1; j < vocab; ++j) {
                    if (last[j] > last[best]) best = static_cast<int32_t>(j);
                }
                next[static_cast<size_t>(row)] = best;
            }
            // Re-pack [batch, cur_len] rows with the new token appended.
            std::vector<int32_t> grown(static_cast<size_t>(prompt.batch * (cur_len + 1)));
            for (int64_t row = 0; row < prompt.batch; ++row) {
                std::copy(ids.begin() + row * cur_len, ids.begin() + (row + 1) * cur_len,
                          grown.begin() + row * (cur_len + 1));
                grown[static_cast<size_t>(row * (cur_len + 1) + cur_len)] =
                    next[static_cast<size_t>(row)];
            }
            ids = std::move(grown);
            ++cur_len;
        }
        auto t1 = std::chrono::steady_clock::now();
        if (rep < warmup) continue;
        double secs = std::chrono::duration<double>(t1 - t0).count();
        result.per_rep.push_back(static_cast<double>(result.tokens_per_rep) / secs);
    }
    result.tokens_per_sec = median(result.per_rep);
    return result;
}

}  // namespace clp
