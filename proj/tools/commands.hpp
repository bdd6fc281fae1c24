#pragma once

#include <span>
#include <string>

#include "clp/config.hpp"

namespace clp::cli {

// Fixed artifact names inside cfg.out_dir; commands locate each other's
// outputs through these.
inline constexpr const char* kDenseCkpt = "dense.ckpt";
inline constexpr const char* kTrainCurveCsv = "train_curve.csv";
inline constexpr const char* kCalibTraceCsv = "calib_trace.csv";
inline constexpr const char* kWindowJson = "window.json";
inline constexpr const char* kPrunedCkpt = "pruned.ckpt";
inline constexpr const char* kTunedCkpt = "tuned.ckpt";
inline constexpr const char* kTuneCurveCsv = "tune_curve.csv";
inline constexpr const char* kOracleCsv = "oracle.csv";
inline constexpr const char* kAgreementJson = "agreement.json";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kCkaCsv = "cka.csv";
inline constexpr const char* kReverseCkpt = "reverse.ckpt";
inline constexpr const char* kSweepKCsv = "sweep_k.csv";
inline constexpr const char* kSweepACsv = "sweep_a.csv";

struct OracleOptions {
    bool with_ppl = false;  // also measure eval-set perplexity per candidate
};

struct EvalOptions {
    std::string ckpt = kTunedCkpt;     // artifact name, or a path containing '/'
    std::string baseline = kDenseCkpt;
    bool throughput = false;           // timing is machine-dependent, so opt-in
    bool allow_lineage_mismatch = false;
};

// Each command reads prerequisites from cfg.out_dir, writes its artifacts
// there, and reports failures as clp::Error (the binary turns those into
// exit codes). All of them are deterministic in (config, seed) except the
// opt-in throughput measurement.
void cmd_train(const RunConfig& cfg);
void cmd_calibrate(const RunConfig& cfg);
void cmd_prune(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
void cmd_oracle(const RunConfig& cfg, const OracleOptions& opt = {});
void cmd_eval(const RunConfig& cfg, const EvalOptions& opt = {});
void cmd_baseline_reverse(const RunConfig& cfg);
void cmd_run_all(const RunConfig& cfg);
void cmd_sweep_k(const RunConfig& cfg, std::span<const double> grid);
void cmd_sweep_a(const RunConfig& cfg, std::span<const double> grid);

// Default ablation grids when none are given on the command line.
std::vector<double> default_k_grid();
std::vector<double> default_a_grid(const RunConfig& cfg);

}  // namespace clp::cli
