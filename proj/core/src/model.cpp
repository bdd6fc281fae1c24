#include "clp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clp/hash.hpp"
#include "clp/ops.hpp"
#include "clp/optimizer.hpp"
#include "clp/rng.hpp"

namespace clp {

namespace {

const char* kProjections[] = {"attn.q", "attn.k", "attn.v", "attn.out", "mlp.fc1", "mlp.fc2"};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void ModelSpec::validate() const {
    if (num_layers < 2) throw ConfigError("model: num_layers must be >= 2");
    if (d_model < 1) throw ConfigError("model: d_model must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ConfigError("model: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be >= 1");
}

ModelSpec reference_toy_spec() {
    ModelSpec s;
    s.num_layers = 12;
    s.d_model = 128;
    s.n_heads = 4;
    s.d_ff = 256;
    s.vocab_size = kVocabSize;
    s.max_seq_len = 256;
    s.init_seed = 1;
    return s;
}

TransformerLM TransformerLM::build(const ModelSpec& spec, int adapter_rank) {
    spec.validate();
    TransformerLM m;
    m.spec_ = spec;
    m.adapter_rank_ = adapter_rank;
    int64_t d = spec.d_model, f = spec.d_ff, v = spec.vocab_size, t = spec.max_seq_len;
    auto push = [&m](std::string name, Shape shape) {
        m.params_.push_back(NamedParam{std::move(name), Tensor::zeros(std::move(shape))});
    };
    push("tok_emb.w", {v, d});
    push("pos_emb.w", {t, d});
    for (int i = 0; i < spec.num_layers; ++i) {
        std::string p = "layers." + std::to_string(i) + ".";
        push(p + "ln1.g", {d});
        push(p + "ln1.b", {d});
        push(p + "attn.q.w", {d, d});
        push(p + "attn.q.b", {d});
        push(p + "attn.k.w", {d, d});
        push(p + "attn.k.b", {d});
        push(p + "attn.v.w", {d, d});
        push(p + "attn.v.b", {d});
        push(p + "attn.out.w", {d, d});
        push(p + "attn.out.b", {d});
        push(p + "ln2.g", {d});
        push(p + "ln2.b", {d});
        push(p + "mlp.fc1.w", {d, f});
        push(p + "mlp.fc1.b", {f});
        push(p + "mlp.fc2.w", {f, d});
        push(p + "mlp.fc2.b", {d});
    }
    push("final_ln.g", {d});
    push("final_ln.b", {d});
    push("head.w", {d, v});
    if (adapter_rank > 0) {
        int64_t r = adapter_rank;
        for (int i = 0; i < spec.num_layers; ++i) {
            std::string p = "layers." + std::to_string(i) + ".";
            for (const char* proj : kProjections) {
                int64_t in = d, out = d;
                if (std::string(proj) == "mlp.fc1") out = f;
                if (std::string(proj) == "mlp.fc2") in = f;
                push(p + proj + ".lora_down", {in, r});
                push(p + proj + ".lora_up", {r, out});
            }
        }
    }
    m.reindex();
    return m;
}

TransformerLM TransformerLM::with_zeros(const ModelSpec& spec) { return build(spec, 0); }

TransformerLM TransformerLM::init(const ModelSpec& spec) {
    TransformerLM m = build(spec, 0);
    Rng rng(spec.init_seed);
    double base_std = 0.02;
    // Residual-feeding projections start smaller to keep the stream's scale
    // stable across depth at init.
    double resid_std = base_std / std::sqrt(2.0 * spec.num_layers);
    for (NamedParam& p : m.params_) {
        auto vals = p.tensor.values_mut();
        if (ends_with(p.name, ".g")) {
            for (Real& x : vals) x = Real(1);
        } else if (ends_with(p.name, ".b")) {
            continue;  // biases stay zero
        } else {
            double std = base_std;
            if (p.name == "pos_emb.w") std = 0.01;
            if (ends_with(p.name, "attn.out.w") || ends_with(p.name, "mlp.fc2.w")) {
                std = resid_std;
            }
            for (Real& x : vals) x = static_cast<Real>(rng.normal(0.0, std));
        }
    }
    return m;
}

void TransformerLM::reindex() {
    index_.clear();
    for (size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

bool TransformerLM::has_param(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& TransformerLM::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return params_[it->second].tensor;
}

Tensor& TransformerLM::param_mut(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return params_[it->second].tensor;
}

int64_t TransformerLM::param_count() const {
    int64_t n = 0;
    for (const NamedParam& p : params_) n += p.tensor.numel();
    return n;
}

int64_t TransformerLM::per_layer_param_count() const {
    int64_t n = 0;
    for (const NamedParam& p : params_) {
        if (p.name.rfind("layers.0.", 0) == 0 && p.name.find(".lora_") == std::string::npos) {
            n += p.tensor.numel();
        }
    }
    return n;
}

uint64_t TransformerLM::values_checksum() const {
    uint64_t h = fnv1a64("", 0);
    for (const NamedParam& p : params_) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        auto vals = p.tensor.values();
        h = fnv1a64(vals.data(), vals.size() * sizeof(Real), h);
    }
    return h;
}

void TransformerLM::check_batch(const Batch& batch) const {
    if (batch.batch < 1 || batch.seq_len < 1) {
        throw ContractError("batch must have positive batch and seq_len");
    }
    if (batch.seq_len > spec_.max_seq_len) {
        throw ContractError("sequence of " + std::to_string(batch.seq_len) +
                            " exceeds max_seq_len " + std::to_string(spec_.max_seq_len));
    }
    if (static_cast<int64_t>(batch.inputs.size()) != batch.batch * batch.seq_len) {
        throw ContractError("batch inputs size does not match batch * seq_len");
    }
}

Tensor TransformerLM::embed(const Batch& batch, Tape* tape) const {
    Tensor tok = ops::embedding(tape, param("tok_emb.w"), batch.inputs,
                                {batch.batch, batch.seq_len});
    std::vector<int32_t> positions(static_cast<size_t>(batch.seq_len));
    std::iota(positions.begin(), positions.end(), 0);
    Tensor pos = ops::embedding(tape, param("pos_emb.w"), positions, {batch.seq_len});
    return ops::add_seq_bias(tape, tok, pos);
}

Tensor TransformerLM::project(const std::string& base, const Tensor& x, Tape* tape) const {
    Tensor y = ops::linear(tape, x, param(base + ".w"), param(base + ".b"));
    if (adapter_rank_ > 0) {
        Tensor lo = ops::matmul(tape, x, param(base + ".lora_down"));
        Tensor hi = ops::matmul(tape, lo, param(base + ".lora_up"));
        y = ops::add(tape, y, hi);
    }
    return y;
}

Tensor TransformerLM::block(int layer, const Tensor& x, Tape* tape) const {
    std::string p = "layers." + std::to_string(layer) + ".";
    Tensor a1 = ops::layer_norm(tape, x, param(p + "ln1.g"), param(p + "ln1.b"));
    Tensor q = project(p + "attn.q", a1, tape);
    Tensor k = project(p + "attn.k", a1, tape);
    Tensor v = project(p + "attn.v", a1, tape);
    Tensor att = ops::causal_attention(tape, q, k, v, spec_.n_heads);
    Tensor x1 = ops::add(tape, x, project(p + "attn.out", att, tape));
    Tensor a2 = ops::layer_norm(tape, x1, param(p + "ln2.g"), param(p + "ln2.b"));
    Tensor h = ops::gelu(tape, project(p + "mlp.fc1", a2, tape));
    return ops::add(tape, x1, project(p + "mlp.fc2", h, tape));
}

Tensor TransformerLM::run(const Batch& batch, std::span<const Tensor> layer_gates, Tape* tape,
                          std::vector<Tensor>* snapshots) const {
    check_batch(batch);
    if (!layer_gates.empty() && static_cast<int>(layer_gates.size()) != spec_.num_layers) {
        throw ContractError("gate count " + std::to_string(layer_gates.size()) +
                            " does not match " + std::to_string(spec_.num_layers) + " layers");
    }
    Tensor x = embed(batch, tape);
    if (snapshots) snapshots->push_back(x);
    for (int i = 0; i < spec_.num_layers; ++i) {
        Tensor y = block(i, x, tape);
        if (!layer_gates.empty()) {
            x = ops::gate_mix(tape, x, y, layer_gates[static_cast<size_t>(i)]);
        } else {
            x = y;
        }
        if (snapshots) snapshots->push_back(x);
    }
    Tensor normed = ops::layer_norm(tape, x, param("final_ln.g"), param("final_ln.b"));
    return ops::matmul(tape, normed, param("head.w"));
}

Tensor TransformerLM::forward(const Batch& batch, Tape* tape) const {
    return run(batch, {}, tape, nullptr);
}

Tensor TransformerLM::forward_gated(const Batch& batch, const LayerMask& mask, Tape* tape) const {
    if (static_cast<int>(mask.values.size()) != spec_.num_layers) {
        throw ContractError("mask length " + std::to_string(mask.values.size()) +
                            " does not match " + std::to_string(spec_.num_layers) + " layers");
    }
    std::vector<Tensor> gates;
    gates.reserve(mask.values.size());
    for (Real m : mask.values) {
        if (!(m >= Real(0) && m <= Real(1))) {
            throw ContractError("mask value " + std::to_string(m) + " outside [0, 1]");
        }
        gates.push_back(Tensor::scalar(m));
    }
    return run(batch, gates, tape, nullptr);
}

Tensor TransformerLM::forward_gated(const Batch& batch, std::span<const Tensor> layer_gates,
                                    Tape* tape) const {
    if (layer_gates.empty()) throw ContractError("forward_gated: no gates provided");
    return run(batch, layer_gates, tape, nullptr);
}

std::vector<Tensor> TransformerLM::hidden_states(const Batch& batch) const {
    std::vector<Tensor> snaps;
    snaps.reserve(static_cast<size_t>(spec_.num_layers) + 1);
    run(batch, {}, nullptr, &snaps);
    return snaps;
}

void TransformerLM::add_adapters(int rank, uint64_t seed) {
    if (rank < 1) throw ConfigError("adapters: rank must be >= 1");
    if (adapter_rank_ > 0) throw ContractError("adapters already installed");
    adapter_rank_ = rank;
    Rng rng(seed);
    int64_t d = spec_.d_model, f = spec_.d_ff, r = rank;
    for (int i = 0; i < spec_.num_layers; ++i) {
        std::string p = "layers." + std::to_string(i) + ".";
        for (const char* proj : kProjections) {
            int64_t in = d, out = d;
            if (std::string(proj) == "mlp.fc1") out = f;
            if (std::string(proj) == "mlp.fc2") in = f;
            Tensor down = Tensor::zeros({in, r});
            for (Real& x : down.values_mut()) x = static_cast<Real>(rng.normal(0.0, 0.02));
            // Zero up-projection: the adapter contributes nothing until tuned.
            Tensor up = Tensor::zeros({r, out});
            params_.push_back(NamedParam{p + proj + ".lora_down", std::move(down)});
            params_.push_back(NamedParam{p + proj + ".lora_up", std::move(up)});
        }
    }
    reindex();
}

TrainResult train_lm(TransformerLM& model, const Corpus& corpus, const TrainProfile& profile,
                     uint64_t seed) {
    if (profile.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (profile.learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
    if (profile.batch_size < 1 || profile.seq_len < 1) {
        throw ConfigError("train: batch_size and seq_len must be >= 1");
    }
    if (profile.log_every < 1) throw ConfigError("train: log_every must be >= 1");
    std::vector<Batch> batches = sequential_batches(corpus, profile.seq_len, profile.batch_size);

    std::vector<Tensor> trainable;
    trainable.reserve(model.params().size());
    for (NamedParam& p : model.params_mut()) {
        p.tensor.set_requires_grad(true);
        trainable.push_back(p.tensor);
    }
    auto release = [&model]() {
        for (NamedParam& p : model.params_mut()) p.tensor.set_requires_grad(false);
    };

    OptimizerConfig ocfg;
    ocfg.kind = OptKind::adamw;
    ocfg.learning_rate = profile.learning_rate;
    ocfg.weight_decay = profile.weight_decay;
    Optimizer opt(ocfg, trainable);

    TrainResult result;
    Rng rng(seed);
    std::vector<size_t> order(batches.size());
    std::iota(order.begin(), order.end(), size_t(0));
    try {
        int64_t step = 0;
        bool done = false;
        std::vector<std::vector<Real>> grads(trainable.size());
        for (int epoch = 0; epoch < profile.epochs && !done; ++epoch) {
            Rng erng = rng.fork(static_cast<uint64_t>(epoch));
            for (size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[static_cast<size_t>(erng.below(
                                            static_cast<int64_t>(i)))]);
            }
            for (size_t bi : order) {
                const Batch& batch = batches[bi];
                Tape tape;
                Tensor logits = model.forward(batch, &tape);
                Tensor loss = ops::cross_entropy(&tape, logits, batch.targets);
                double lv = loss.item();
                if (!std::isfinite(lv)) {
                    throw NumericError("training diverged: non-finite loss at step " +
                                       std::to_string(step + 1));
                }
                tape.backward(loss);
                for (size_t pi = 0; pi < trainable.size(); ++pi) {
                    grads[pi] = tape.grad_of(trainable[pi]);
                }
                opt.step(trainable, grads);
                ++step;
                result.final_loss = lv;
                if (step == 1 || step % profile.log_every == 0) {
                    result.curve.push_back(TrainPoint{step, lv});
                }
                if (profile.max_steps && step >= *profile.max_steps) {
                    done = true;
                    break;
                }
            }
        }
        result.steps = step;
        if (result.curve.empty() || result.curve.back().step != step) {
            result.curve.push_back(TrainPoint{step, result.final_loss});
        }
    } catch (...) {
        release();
        throw;
    }
    release();
    return result;
}

double eval_cross_entropy(const TransformerLM& model, const Corpus& corpus, int64_t seq_len,
                          int64_t batch_size) {
    std::vector<Batch> batches = sequential_batches(corpus, seq_len, batch_size);
    double total = 0.0;
    for (const Batch& b : batches) {
        Tensor logits = model.forward(b, nullptr);
        total += ops::cross_entropy(nullptr, logits, b.targets).item();
    }
    return total / static_cast<double>(batches.size());
}

}  // namespace clp
