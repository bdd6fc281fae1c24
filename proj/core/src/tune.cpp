#include "clp/tune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clp/ops.hpp"
#include "clp/optimizer.hpp"
#include "clp/rng.hpp"

namespace clp {

TuneMode tune_mode_from_string(const std::string& s) {
    if (s == "none") return TuneMode::none;
    if (s == "endpoint") return TuneMode::endpoint;
    if (s == "lowrank") return TuneMode::lowrank;
    if (s == "full") return TuneMode::full;
    throw ConfigError("unknown tune mode '" + s + "' (expected endpoint|lowrank|full|none)");
}

std::string to_string(TuneMode mode) {
    switch (mode) {
        case TuneMode::none: return "none";
        case TuneMode::endpoint: return "endpoint";
        case TuneMode::lowrank: return "lowrank";
        case TuneMode::full: return "full";
    }
    throw ContractError("invalid tune mode value");
}

void TuneConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("tune: learning rate must be > 0");
    if (epochs < 1) throw ConfigError("tune: epochs must be >= 1");
    if (batch_size < 1 || seq_len < 1) throw ConfigError("tune: batch_size/seq_len must be >= 1");
    if (mode == TuneMode::lowrank && adapter_rank < 1) {
        throw ConfigError("tune: adapter rank must be >= 1 for lowrank mode");
    }
    if (max_steps && *max_steps < 0) throw ConfigError("tune: max_steps must be >= 0");
}

TrainableSelection select_trainable(const TransformerLM& model, const PrunedMeta& meta,
                                    TuneMode mode) {
    TrainableSelection sel;
    sel.prev_missing = !meta.prev_layer.has_value();
    sel.next_missing = !meta.next_layer.has_value();
    switch (mode) {
        case TuneMode::none:
            return sel;
        case TuneMode::full:
            for (const NamedParam& p : model.params()) sel.names.push_back(p.name);
            return sel;
        case TuneMode::lowrank: {
            if (!model.has_adapters()) {
                throw ContractError("lowrank selection requires installed adapters");
            }
            for (const NamedParam& p : model.params()) {
                if (p.name.find(".lora_") != std::string::npos) sel.names.push_back(p.name);
            }
            return sel;
        }
        case TuneMode::endpoint: {
            if (sel.prev_missing && sel.next_missing) {
                throw ContractError(
                    "endpoint tuning: window spans the whole model, no adjacent layers");
            }
            // Layers below the window keep their index in the pruned model;
            // the layer that followed the window collapses onto the window
            // start.
            std::vector<int> layers;
            if (meta.prev_layer) layers.push_back(meta.window.start - 1);
            if (meta.next_layer) layers.push_back(meta.window.start);
            for (int idx : layers) {
                std::string prefix = "layers." + std::to_string(idx) + ".";
                for (const NamedParam& p : model.params()) {
                    if (p.name.rfind(prefix, 0) == 0 &&
                        p.name.find(".lora_") == std::string::npos) {
                        sel.names.push_back(p.name);
                    }
                }
            }
            if (sel.names.empty()) {
                throw ContractError("endpoint tuning: selected layers have no parameters");
            }
            return sel;
        }
    }
    throw ContractError("invalid tune mode value");
}

TuneReport tune_pruned(TransformerLM& model, const PrunedMeta& meta, const Corpus& train,
                       const Corpus& eval, const TuneConfig& cfg) {
    cfg.validate();
    if (cfg.mode == TuneMode::lowrank && !model.has_adapters()) {
        model.add_adapters(cfg.adapter_rank, cfg.seed);
    }
    TuneReport report;
    report.selection = select_trainable(model, meta, cfg.mode);

    report.eval_before = eval_cross_entropy(model, eval, cfg.seq_len, cfg.batch_size);
    report.curve.push_back(TunePoint{0, "eval", report.eval_before});

    if (cfg.mode == TuneMode::none || (cfg.max_steps && *cfg.max_steps == 0) ||
        report.selection.names.empty()) {
        report.eval_after = report.eval_before;
        report.curve.push_back(TunePoint{0, "eval", report.eval_after});
        return report;
    }

    std::vector<Tensor> trainable;
    trainable.reserve(report.selection.names.size());
    for (const std::string& name : report.selection.names) {
        Tensor& t = model.param_mut(name);
        t.set_requires_grad(true);
        trainable.push_back(t);
    }
    auto release = [&]() {
        for (const std::string& name : report.selection.names) {
            model.param_mut(name).set_requires_grad(false);
        }
    };

    OptimizerConfig ocfg;
    ocfg.kind = OptKind::adamw;
    ocfg.learning_rate = cfg.learning_rate;
    ocfg.weight_decay = cfg.weight_decay;
    Optimizer opt(ocfg, trainable);

    try {
        std::vector<Batch> batches = sequential_batches(train, cfg.seq_len, cfg.batch_size);
        std::vector<size_t> order(batches.size());
        std::iota(order.begin(), order.end(), size_t(0));
        Rng rng(cfg.seed);
        std::vector<std::vector<Real>> grads(trainable.size());
        int64_t step = 0;
        bool done = false;
        for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
            Rng erng = rng.fork(static_cast<uint64_t>(epoch));
            for (size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1],
                          order[static_cast<size_t>(erng.below(static_cast<int64_t>(i)))]);
            }
            for (size_t bi : order) {
                const Batch& batch = batches[bi];
                Tape tape;
                Tensor logits = model.forward(batch, &tape);
                Tensor loss = ops::cross_entropy(&tape, logits, batch.targets);
                double lv = loss.item();
                if (!std::isfinite(lv)) {
                    throw NumericError("tuning diverged: non-finite loss at step " +
                                       std::to_string(step + 1));
                }
                tape.backward(loss);
                for (size_t pi = 0; pi < trainable.size(); ++pi) {
                    grads[pi] = tape.grad_of(trainable[pi]);
                }
                opt.step(trainable, grads);
                ++step;
                report.curve.push_back(TunePoint{step, "train", lv});
                if (cfg.max_steps && step >= *cfg.max_steps) {
                    done = true;
                    break;
                }
            }
        }
        report.steps = step;
    } catch (...) {
        release();
        throw;
    }
    release();

    report.eval_after = eval_cross_entropy(model, eval, cfg.seq_len, cfg.batch_size);
    report.curve.push_back(TunePoint{report.steps, "eval", report.eval_after});
    return report;
}

}  // namespace clp
