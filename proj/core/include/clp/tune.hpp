#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clp/model.hpp"
#include "clp/prune.hpp"

namespace clp {

enum class TuneMode { none, endpoint, lowrank, full };

TuneMode tune_mode_from_string(const std::string& s);
std::string to_string(TuneMode mode);

struct TuneConfig {
    TuneMode mode = TuneMode::endpoint;
    int epochs = 2;
    double learning_rate = 1e-5;
    double weight_decay = 0.0;
    int batch_size = 64;
    int seq_len = 256;
    int adapter_rank = 8;
    std::optional<int64_t> max_steps;  // absent = all epochs; 0 = no updates
    uint64_t seed = 1234;

    void validate() const;
};

struct TrainableSelection {
    std::vector<std::string> names;
    bool prev_missing = false;  // window touched layer 0
    bool next_missing = false;  // window touched the last layer
};

// Which parameters a tuning mode updates, on the PRUNED model:
//   endpoint -> every tensor of the layers that used to sit on either side
//               of the excised window (one of them when the window touched
//               a boundary), nothing else - not the embeddings or head;
//   lowrank  -> all adapter tensors (adapters must be installed);
//   full     -> every parameter; none -> nothing.
TrainableSelection select_trainable(const TransformerLM& model, const PrunedMeta& meta,
                                    TuneMode mode);

struct TunePoint {
    int64_t step = 0;
    std::string split;  // "train" or "eval"
    double loss = 0.0;
};

struct TuneReport {
    std::vector<TunePoint> curve;
    double eval_before = 0.0;
    double eval_after = 0.0;
    int64_t steps = 0;
    TrainableSelection selection;
};

// AdamW on the selected parameters only; everything else is untouched
// (bit-identical afterwards, and receives no gradient entries at all during
// the run). For lowrank mode, adapters are installed first when absent,
// which leaves the model's outputs unchanged until training begins.
TuneReport tune_pruned(TransformerLM& model, const PrunedMeta& meta, const Corpus& train,
                       const Corpus& eval, const TuneConfig& cfg);

}  // namespace clp
