#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clp/calibrate.hpp"
#include "clp/checkpoint.hpp"
#include "clp/csv.hpp"
#include "clp/errors.hpp"
#include "clp/evaluate.hpp"
#include "clp/hash.hpp"
#include "clp/model.hpp"
#include "clp/oracle.hpp"
#include "clp/parallel.hpp"
#include "clp/prune.hpp"
#include "clp/tokenizer.hpp"
#include "clp/tune.hpp"

namespace clp::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Independent deterministic seed per use site, so e.g. calibration batches
// do not shift when the training schedule changes.
uint64_t stream_seed(uint64_t seed, std::string_view label) {
    return fnv1a64(label.data(), label.size(), seed);
}

// Bare artifact names live in cfg.out_dir; anything with a directory part
// is taken as an explicit path.
std::string resolve(const RunConfig& cfg, const std::string& name) {
    fs::path p(name);
    if (p.has_parent_path()) return name;
    return (fs::path(cfg.out_dir) / p).string();
}

void ensure_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

std::string producer_of(const std::string& name) {
    if (name == kDenseCkpt) return "train";
    if (name == kPrunedCkpt) return "prune";
    if (name == kTunedCkpt) return "finetune";
    if (name == kReverseCkpt) return "baseline-reverse";
    if (name == kWindowJson) return "calibrate";
    return "";
}

std::string require_artifact(const RunConfig& cfg, const std::string& name) {
    std::string path = resolve(cfg, name);
    if (!fs::exists(path)) {
        std::string msg = name + " not found at " + path;
        std::string producer = producer_of(name);
        if (!producer.empty()) msg += "; produce it with `clp " + producer + "`";
        throw DataError(msg);
    }
    return path;
}

// Lineage policy: eval refuses a hash mismatch unless overridden; the
// intermediate commands only warn, so deliberate config tweaks between
// stages stay possible.
void check_lineage(const RunConfig& cfg, const std::string& what, const std::string& stored,
                   bool refuse, bool allow_mismatch = false) {
    if (stored == cfg.hash()) return;
    std::string msg = what + " was produced under config " + stored +
                      ", current config hashes to " + cfg.hash();
    if (refuse && !allow_mismatch)
        throw LineageError(msg + " (pass --allow-lineage-mismatch to proceed)");
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

Corpus load_corpus(const std::string& path, const char* field) {
    if (path.empty())
        throw ConfigError(std::string(field) + " is not set; point it at a corpus file");
    return tokenize_file(path);
}

TransformerLM load_ckpt(const RunConfig& cfg, const std::string& name, CheckpointInfo* info,
                        bool refuse_lineage = false, bool allow_mismatch = false) {
    std::string path = require_artifact(cfg, name);
    TransformerLM model = load_checkpoint(path, info);
    check_lineage(cfg, name, info->config_hash, refuse_lineage, allow_mismatch);
    return model;
}

std::vector<Batch> calib_batches(const RunConfig& cfg, const Corpus& calib) {
    return sample_batches(calib, cfg.calib.num_samples, cfg.calib.seq_len, cfg.calib.batch_size,
                          stream_seed(cfg.seed, "calib"));
}

CalibConfig calib_config(const RunConfig& cfg) {
    CalibConfig cc;
    cc.window_len = cfg.window_len();
    cc.sharpness = cfg.sharpness;
    cc.start_init = cfg.start_init.value_or(-1.0);
    cc.learning_rate = cfg.calib.learning_rate;
    cc.epochs = cfg.calib.epochs;
    return cc;
}

double resolved_start_init(const RunConfig& cfg) {
    return cfg.start_init.value_or(double(cfg.model.num_layers - 1));
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed " + what + " at " + path + ": " + e.what());
    }
}

json window_to_json(const PruneWindow& w) {
    return json{{"start", w.start}, {"length", w.length}};
}

// Returns the stored window plus the config hash it was produced under.
std::pair<PruneWindow, std::string> read_window(const RunConfig& cfg) {
    std::string path = require_artifact(cfg, kWindowJson);
    json j = read_json_file(path, kWindowJson);
    try {
        PruneWindow w{j.at("window").at("start").get<int>(),
                      j.at("window").at("length").get<int>()};
        return {w, j.value("config", std::string())};
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed ") + kWindowJson + " at " + path + ": " + e.what());
    }
}

void wrote(const std::string& path) { std::printf("wrote %s\n", path.c_str()); }

}  // namespace

std::vector<double> default_k_grid() { return {1.0, 3.0, 5.0, 10.0, 20.0}; }

std::vector<double> default_a_grid(const RunConfig& cfg) {
    int L = cfg.model.num_layers;
    return {0.0, L / 2.0, double(L - cfg.window_len())};
}

void cmd_train(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    Corpus corpus = load_corpus(cfg.train_data, "data.train");
    TransformerLM model = TransformerLM::init(cfg.model);
    std::printf("train: %d layers, %lld parameters, corpus %s (%lld tokens)\n",
                model.num_layers(), (long long)model.param_count(), corpus.name.c_str(),
                (long long)corpus.ids.size());
    TrainResult res = train_lm(model, corpus, cfg.train, cfg.seed);
    for (const TrainPoint& p : res.curve)
        std::printf("train: step %lld loss %.4f\n", (long long)p.step, p.loss);

    std::string curve_path = resolve(cfg, kTrainCurveCsv);
    CsvWriter csv(curve_path, cfg.hash(), {"step", "loss"});
    for (const TrainPoint& p : res.curve) csv.row({std::to_string(p.step), format_real(p.loss)});
    csv.close();
    wrote(curve_path);

    std::string ckpt_path = resolve(cfg, kDenseCkpt);
    save_checkpoint(ckpt_path, model, {cfg.hash(), std::nullopt});
    wrote(ckpt_path);
}

void cmd_calibrate(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kDenseCkpt, &info);
    Corpus calib = load_corpus(cfg.calib_data, "data.calib");
    std::vector<Batch> batches = calib_batches(cfg, calib);

    CalibResult res = optimize_start(model, batches, calib_config(cfg));
    std::printf("calibrate: a %.4g -> %.6g over %lld steps (k=%g, n=%d)\n",
                resolved_start_init(cfg), res.final_start, (long long)res.trajectory.size(),
                cfg.sharpness, cfg.window_len());
    std::printf("calibrate: window [%d, %d) of %d layers\n", res.window.start,
                res.window.start + res.window.length, model.num_layers());

    std::string trace_path = resolve(cfg, kCalibTraceCsv);
    CsvWriter csv(trace_path, cfg.hash(), {"step", "a", "loss"});
    for (const CalibRecord& r : res.trajectory)
        csv.row({std::to_string(r.step), format_real(r.start), format_real(r.loss)});
    csv.close();
    wrote(trace_path);

    std::string window_path = resolve(cfg, kWindowJson);
    write_json_file(window_path, json{{"config", cfg.hash()},
                                      {"window", window_to_json(res.window)},
                                      {"final_start", res.final_start},
                                      {"start_init", resolved_start_init(cfg)},
                                      {"sharpness", cfg.sharpness},
                                      {"steps", res.trajectory.size()}});
    wrote(window_path);
}

void cmd_prune(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kDenseCkpt, &info);
    auto [window, stored_hash] = read_window(cfg);
    check_lineage(cfg, kWindowJson, stored_hash, /*refuse=*/false);

    auto [child, meta] = prune_window(model, window);
    std::printf("prune: removed layers [%d, %d), %d remain; %lld -> %lld parameters\n",
                window.start, window.start + window.length, meta.resulting_layers,
                (long long)model.param_count(), (long long)child.param_count());

    std::string path = resolve(cfg, kPrunedCkpt);
    save_checkpoint(path, child, {cfg.hash(), meta});
    wrote(path);
}

void cmd_finetune(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kPrunedCkpt, &info);
    if (!info.pruned)
        throw DataError(std::string(kPrunedCkpt) +
                        " carries no pruning metadata; produce it with `clp prune`");
    Corpus tune_corpus = load_corpus(cfg.tune_data, "data.tune");
    Corpus eval_corpus = load_corpus(cfg.eval_data, "data.eval");

    TuneReport rep = tune_pruned(model, *info.pruned, tune_corpus, eval_corpus, cfg.tune);
    std::printf("finetune[%s]: %zu trainable tensors, %lld steps\n",
                to_string(cfg.tune.mode).c_str(), rep.selection.names.size(),
                (long long)rep.steps);
    std::printf("finetune: eval cross-entropy %.6f -> %.6f (ppl %.4f -> %.4f)\n",
                rep.eval_before, rep.eval_after, std::exp(rep.eval_before),
                std::exp(rep.eval_after));

    std::string curve_path = resolve(cfg, kTuneCurveCsv);
    CsvWriter csv(curve_path, cfg.hash(), {"step", "split", "loss"});
    for (const TunePoint& p : rep.curve)
        csv.row({std::to_string(p.step), p.split, format_real(p.loss)});
    csv.close();
    wrote(curve_path);

    std::string path = resolve(cfg, kTunedCkpt);
    save_checkpoint(path, model, {cfg.hash(), info.pruned});
    wrote(path);
}

void cmd_oracle(const RunConfig& cfg, const OracleOptions& opt) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kDenseCkpt, &info);
    Corpus calib = load_corpus(cfg.calib_data, "data.calib");
    std::vector<Batch> batches = calib_batches(cfg, calib);

    int n = cfg.window_len();
    std::vector<WindowScore> ranked = enumerate_windows(model, n, batches);
    if (opt.with_ppl) {
        Corpus eval_corpus = load_corpus(cfg.eval_data, "data.eval");
        for (WindowScore& ws : ranked) {
            auto [child, meta] = prune_window(model, ws.window);
            ws.eval_ppl = perplexity(child, eval_corpus, cfg.eval.seq_len, cfg.eval.batch_size);
        }
    }

    std::string table_path = resolve(cfg, kOracleCsv);
    CsvWriter csv(table_path, cfg.hash(), {"start", "n", "kl", "ppl"});
    for (const WindowScore& ws : ranked)
        csv.row({std::to_string(ws.window.start), std::to_string(ws.window.length),
                 format_real(ws.kl), ws.eval_ppl ? format_real(*ws.eval_ppl) : ""});
    csv.close();
    std::printf("oracle: %zu windows, best [%d, %d) kl %.6g\n", ranked.size(),
                ranked.front().window.start,
                ranked.front().window.start + ranked.front().window.length, ranked.front().kl);
    wrote(table_path);

    auto [found, stored_hash] = read_window(cfg);
    check_lineage(cfg, kWindowJson, stored_hash, /*refuse=*/false);
    Agreement ag = agreement_report(ranked, found);
    std::printf("oracle: calibrated window [%d, %d) holds rank %d of %zu (kl gap %.6g)\n",
                found.start, found.start + found.length, ag.rank, ranked.size(), ag.kl_gap);

    std::string agreement_path = resolve(cfg, kAgreementJson);
    write_json_file(agreement_path,
                    json{{"config", cfg.hash()},
                         {"found", window_to_json(found)},
                         {"best", window_to_json(ranked.front().window)},
                         {"best_kl", ranked.front().kl},
                         {"found_kl", ranked[size_t(ag.rank) - 1].kl},
                         {"kl_gap", ag.kl_gap},
                         {"rank", ag.rank},
                         {"candidates", ranked.size()}});
    wrote(agreement_path);
}

void cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
    ensure_out_dir(cfg);
    CheckpointInfo target_info, base_info;
    TransformerLM target =
        load_ckpt(cfg, opt.ckpt, &target_info, /*refuse=*/true, opt.allow_lineage_mismatch);
    TransformerLM baseline =
        load_ckpt(cfg, opt.baseline, &base_info, /*refuse=*/true, opt.allow_lineage_mismatch);
    Corpus eval_corpus = load_corpus(cfg.eval_data, "data.eval");

    double target_ppl = perplexity(target, eval_corpus, cfg.eval.seq_len, cfg.eval.batch_size);
    double base_ppl = perplexity(baseline, eval_corpus, cfg.eval.seq_len, cfg.eval.batch_size);
    // Retention compares goodness, so the ppl ratio is inverted: 1.0 means
    // the evaluated model matches the baseline, smaller means worse.
    double retention = base_ppl / target_ppl;
    std::printf("eval: %s ppl %.4f, %s ppl %.4f, retention %.4f\n", opt.ckpt.c_str(), target_ppl,
                opt.baseline.c_str(), base_ppl, retention);

    std::vector<Batch> batches =
        sequential_batches(eval_corpus, cfg.eval.seq_len, cfg.eval.batch_size);
    size_t use = std::min<size_t>(batches.size(), size_t(cfg.eval.cka_batches));
    std::vector<std::vector<double>> cka =
        cka_matrix(target, std::span(batches).first(use), cfg.eval.cka_max_rows);

    std::string cka_path = resolve(cfg, kCkaCsv);
    CsvWriter cka_csv(cka_path, cfg.hash(), {"i", "j", "cka"});
    for (size_t i = 0; i < cka.size(); ++i)
        for (size_t j = 0; j < cka[i].size(); ++j)
            cka_csv.row({std::to_string(i), std::to_string(j), format_real(cka[i][j])});
    cka_csv.close();
    wrote(cka_path);

    std::vector<double> adjacent;
    for (size_t i = 0; i + 1 < cka.size(); ++i) adjacent.push_back(cka[i][i + 1]);

    json report{
        {"config", cfg.hash()},
        {"checkpoint",
         {{"file", opt.ckpt},
          {"layers", target.num_layers()},
          {"parameters", target.param_count()},
          {"perplexity", target_ppl},
          {"pruned_window",
           target_info.pruned ? window_to_json(target_info.pruned->window) : json(nullptr)}}},
        {"baseline",
         {{"file", opt.baseline},
          {"layers", baseline.num_layers()},
          {"parameters", baseline.param_count()},
          {"perplexity", base_ppl}}},
        {"retention", retention},
        {"cka", {{"matrix", cka}, {"adjacent_median", median(adjacent)}, {"file", kCkaCsv}}},
        {"throughput", json(nullptr)},
    };

    if (opt.throughput) {
        int64_t need = int64_t(cfg.eval.throughput_batch) * cfg.eval.throughput_prompt + 1;
        if (int64_t(eval_corpus.ids.size()) < need)
            throw DataError("eval corpus too small for throughput prompts: need " +
                            std::to_string(need) + " tokens, have " +
                            std::to_string(eval_corpus.ids.size()));
        std::vector<int64_t> starts(size_t(cfg.eval.throughput_batch));
        for (size_t b = 0; b < starts.size(); ++b)
            starts[b] = int64_t(b) * cfg.eval.throughput_prompt;
        Batch prompt = make_batch(eval_corpus, starts, cfg.eval.throughput_prompt);
        ThroughputResult tr = generation_throughput(target, prompt, cfg.eval.throughput_gen,
                                                    cfg.eval.throughput_reps,
                                                    cfg.eval.throughput_warmup);
        report["throughput"] = json{{"tokens_per_sec", tr.tokens_per_sec},
                                    {"per_rep", tr.per_rep},
                                    {"tokens_per_rep", tr.tokens_per_rep},
                                    {"batch", tr.batch},
                                    {"prompt_len", tr.prompt_len},
                                    {"gen_len", tr.gen_len},
                                    {"warmup", cfg.eval.throughput_warmup},
                                    {"real_bits", int(sizeof(Real) * 8)},
                                    {"threads", thread_cap()}};
        std::printf("eval: throughput %.1f tokens/sec (batch %lld, prompt %lld, gen %lld)\n",
                    tr.tokens_per_sec, (long long)tr.batch, (long long)tr.prompt_len,
                    (long long)tr.gen_len);
    }

    std::string report_path = resolve(cfg, kReportJson);
    write_json_file(report_path, report);
    wrote(report_path);
}

void cmd_baseline_reverse(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kDenseCkpt, &info);
    int n = cfg.window_len();
    PruneWindow window{model.num_layers() - n, n};

    auto [child, meta] = prune_window(model, window);
    std::printf("baseline-reverse: removed tail layers [%d, %d), %d remain\n", window.start,
                window.start + window.length, meta.resulting_layers);

    std::string path = resolve(cfg, kReverseCkpt);
    save_checkpoint(path, child, {cfg.hash(), meta});
    wrote(path);
}

void cmd_run_all(const RunConfig& cfg) {
    std::printf("[1/5] train\n");
    cmd_train(cfg);
    std::printf("[2/5] calibrate\n");
    cmd_calibrate(cfg);
    std::printf("[3/5] prune\n");
    cmd_prune(cfg);
    std::printf("[4/5] finetune\n");
    cmd_finetune(cfg);
    std::printf("[5/5] eval\n");
    cmd_eval(cfg);
}

namespace {

// Shared engine for the two ablation sweeps: rerun the calibration under a
// grid of overrides and rank every found window against one oracle pass
// (the oracle order depends only on n, not on k or the starting point).
void sweep(const RunConfig& cfg, std::span<const double> grid, bool vary_k,
           const char* artifact_name) {
    ensure_out_dir(cfg);
    CheckpointInfo info;
    TransformerLM model = load_ckpt(cfg, kDenseCkpt, &info);
    Corpus calib = load_corpus(cfg.calib_data, "data.calib");
    std::vector<Batch> batches = calib_batches(cfg, calib);
    std::vector<WindowScore> ranked = enumerate_windows(model, cfg.window_len(), batches);

    std::string path = resolve(cfg, artifact_name);
    CsvWriter csv(path, cfg.hash(),
                  {"k", "a_init", "final_a", "start", "length", "rank", "kl", "kl_gap"});
    for (double value : grid) {
        CalibConfig cc = calib_config(cfg);
        if (vary_k) {
            if (value <= 0.0) throw ConfigError("sweep grid: k must be positive");
            cc.sharpness = value;
        } else {
            if (value < 0.0) throw ConfigError("sweep grid: a_init must be nonnegative");
            cc.start_init = value;
        }
        double a_init = vary_k ? resolved_start_init(cfg) : value;
        CalibResult res = optimize_start(model, batches, cc);
        Agreement ag = agreement_report(ranked, res.window);
        double found_kl = ranked[size_t(ag.rank) - 1].kl;
        std::printf("sweep: k=%g a_init=%g -> a %.6g, window [%d, %d), rank %d\n", cc.sharpness,
                    a_init, res.final_start, res.window.start,
                    res.window.start + res.window.length, ag.rank);
        csv.row({format_real(cc.sharpness), format_real(a_init), format_real(res.final_start),
                 std::to_string(res.window.start), std::to_string(res.window.length),
                 std::to_string(ag.rank), format_real(found_kl), format_real(ag.kl_gap)});
    }
    csv.close();
    wrote(path);
}

}  // namespace

void cmd_sweep_k(const RunConfig& cfg, std::span<const double> grid) {
    sweep(cfg, grid, /*vary_k=*/true, kSweepKCsv);
}

void cmd_sweep_a(const RunConfig& cfg, std::span<const double> grid) {
    sweep(cfg, grid, /*vary_k=*/false, kSweepACsv);
}

}  // namespace clp::cli
