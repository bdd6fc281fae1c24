#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "clp/model.hpp"
#include "clp/tune.hpp"

namespace clp {

struct CalibProfile {
    int num_samples = 3000;
    int seq_len = 256;
    int batch_size = 8;
    double learning_rate = 0.5;
    int epochs = 1;
};

struct EvalProfile {
    int seq_len = 256;
    int batch_size = 8;
    int cka_max_rows = 4096;
    int cka_batches = 4;
    int throughput_batch = 4;
    int throughput_prompt = 32;
    int throughput_gen = 64;
    int throughput_reps = 5;
    int throughput_warmup = 1;
};

// One resolved run configuration. The built-in defaults double as the
// reference profile (toy model spec; calibration lr 0.5, 1 epoch, k=5,
// 3000 samples at length 256; tuning 2 epochs of AdamW at 1e-5, batch 64,
// length 256); a JSON file and CLI flags override individual fields. The
// canonical JSON serialization of the resolved struct is hashed into every
// artifact for lineage checks.
struct RunConfig {
    ModelSpec model;
    std::string train_data;
    std::string calib_data;
    std::string tune_data;
    std::string eval_data;
    double prune_rate = 0.25;
    double sharpness = 5.0;                // gate steepness k
    std::optional<double> start_init;      // initial a; absent = L - 1
    TrainProfile train;
    CalibProfile calib;
    TuneConfig tune;
    EvalProfile eval;
    uint64_t seed = 1234;
    std::string out_dir = "clp-out";

    // n = round(prune_rate * L), half away from zero.
    int window_len() const;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text, const std::string& origin);

    std::string to_json() const;  // canonical: sorted keys, all fields
    std::string hash() const;     // hex16 fingerprint of to_json() minus out_dir
    void validate() const;
};

}  // namespace clp
