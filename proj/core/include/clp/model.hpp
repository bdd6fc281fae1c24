#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clp/gate.hpp"
#include "clp/tensor.hpp"
#include "clp/tokenizer.hpp"

namespace clp {

struct ModelSpec {
    int num_layers = 12;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = kVocabSize;
    int max_seq_len = 256;
    uint64_t init_seed = 1;

    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

// The 12-layer reference configuration used throughout the tests.
ModelSpec reference_toy_spec();

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Decoder-only transformer language model: learned token and absolute
// position embeddings, pre-norm blocks (causal attention + gelu MLP, each
// with its own residual), final norm, untied projection head. Parameters
// live in a named registry with a stable order, which checkpointing,
// pruning, and selective tuning all key off.
class TransformerLM {
public:
    static TransformerLM init(const ModelSpec& spec);        // seeded random init
    static TransformerLM with_zeros(const ModelSpec& spec);  // all-zero scaffold

    const ModelSpec& spec() const { return spec_; }
    int num_layers() const { return spec_.num_layers; }

    std::span<const NamedParam> params() const { return params_; }
    std::span<NamedParam> params_mut() { return params_; }
    bool has_param(const std::string& name) const;
    const Tensor& param(const std::string& name) const;
    Tensor& param_mut(const std::string& name);

    int64_t param_count() const;
    // Parameters of one block, adapters excluded (identical for all layers).
    int64_t per_layer_param_count() const;
    // Order-sensitive fingerprint over names and raw values.
    uint64_t values_checksum() const;

    // Logits [batch, seq_len, vocab]. With a tape, gradients flow to any
    // parameter marked requires_grad.
    Tensor forward(const Batch& batch, Tape* tape = nullptr) const;

    // Gated variant: o_i = m_i * layer_i(o_{i-1}) + (1 - m_i) * o_{i-1}.
    // An all-ones mask reproduces forward() exactly.
    Tensor forward_gated(const Batch& batch, const LayerMask& mask, Tape* tape = nullptr) const;

    // Same, with per-layer scalar gate tensors (e.g. from soft_mask_on_tape)
    // so the gate parameter itself can receive gradients.
    Tensor forward_gated(const Batch& batch, std::span<const Tensor> layer_gates,
                         Tape* tape) const;

    // Residual-stream snapshots o_0 (embeddings) .. o_L, without gradients.
    std::vector<Tensor> hidden_states(const Batch& batch) const;

    // Additive low-rank adapters on the six projection matrices of every
    // layer. Up-projections start at zero, so installing adapters does not
    // change any output until they are trained.
    void add_adapters(int rank, uint64_t seed);
    bool has_adapters() const { return adapter_rank_ > 0; }
    int adapter_rank() const { return adapter_rank_; }

private:
    TransformerLM() = default;
    static TransformerLM build(const ModelSpec& spec, int adapter_rank);

    Tensor run(const Batch& batch, std::span<const Tensor> layer_gates, Tape* tape,
               std::vector<Tensor>* snapshots) const;
    Tensor embed(const Batch& batch, Tape* tape) const;
    Tensor block(int layer, const Tensor& x, Tape* tape) const;
    Tensor project(const std::string& base, const Tensor& x, Tape* tape) const;
    void check_batch(const Batch& batch) const;
    void reindex();

    ModelSpec spec_;
    std::vector<NamedParam> params_;
    std::unordered_map<std::string, size_t> index_;
    int adapter_rank_ = 0;
};

struct TrainProfile {
    int epochs = 1;
    double learning_rate = 3e-4;
    double weight_decay = 0.0;
    int batch_size = 16;
    int seq_len = 128;
    std::optional<int64_t> max_steps;
    int log_every = 50;
};

struct TrainPoint {
    int64_t step = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<TrainPoint> curve;
    int64_t steps = 0;
    double final_loss = 0.0;
};

// AdamW next-token training over shuffled non-overlapping windows of the
// corpus. Deterministic in (model init, corpus, profile, seed); a NaN loss
// aborts with the failing step in the message.
TrainResult train_lm(TransformerLM& model, const Corpus& corpus, const TrainProfile& profile,
                     uint64_t seed);

// Mean next-token cross-entropy (nats) over full sequential batches.
double eval_cross_entropy(const TransformerLM& model, const Corpus& corpus, int64_t seq_len,
                          int64_t batch_size);

}  // namespace clp
