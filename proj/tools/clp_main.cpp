#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clp/errors.hpp"
#include "clp/tune.hpp"
#include "commands.hpp"

namespace {

// Flag values shared by every subcommand; optionals distinguish "given on
// the command line" from "left at the config default".
struct CommonFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<double> prune_rate;
    std::optional<double> sharpness;
    std::optional<double> a_init;
    std::optional<std::string> mode;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config_path, "JSON run configuration (defaults when omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "run seed (also resets tune.seed)");
    sub->add_option("--prune-rate", f.prune_rate, "fraction of layers to remove, in (0,1)");
    sub->add_option("--k", f.sharpness, "gate transition sharpness");
    sub->add_option("--a-init", f.a_init, "initial continuous window start");
    sub->add_option("--mode", f.mode, "tuning mode: endpoint|lowrank|full|none")
        ->check(CLI::IsMember({"endpoint", "lowrank", "full", "none"}));
    sub->add_option("--out", f.out_dir, "artifact directory");
}

clp::RunConfig make_config(const CommonFlags& f) {
    clp::RunConfig cfg = f.config_path.empty() ? clp::RunConfig::defaults()
                                               : clp::RunConfig::from_file(f.config_path);
    if (f.seed) {
        cfg.seed = *f.seed;
        cfg.tune.seed = *f.seed;
    }
    if (f.prune_rate) cfg.prune_rate = *f.prune_rate;
    if (f.sharpness) cfg.sharpness = *f.sharpness;
    if (f.a_init) cfg.start_init = *f.a_init;
    if (f.mode) cfg.tune.mode = clp::tune_mode_from_string(*f.mode);
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contiguous layer pruning toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    clp::cli::OracleOptions oracle_opt;
    clp::cli::EvalOptions eval_opt;
    std::vector<double> k_grid, a_grid;

    CLI::App* train = app.add_subcommand("train", "train the dense model, write dense.ckpt");
    CLI::App* calibrate =
        app.add_subcommand("calibrate", "optimize the window start, write window.json");
    CLI::App* prune =
        app.add_subcommand("prune", "excise the calibrated window, write pruned.ckpt");
    CLI::App* finetune =
        app.add_subcommand("finetune", "recover the pruned model, write tuned.ckpt");
    CLI::App* oracle =
        app.add_subcommand("oracle", "score every window by brute force, rank the found one");
    CLI::App* eval = app.add_subcommand("eval", "perplexity/retention/CKA report");
    CLI::App* reverse =
        app.add_subcommand("baseline-reverse", "prune the tail window instead (comparison)");
    CLI::App* run_all = app.add_subcommand("run-all", "train, calibrate, prune, finetune, eval");
    CLI::App* sweep_k = app.add_subcommand("sweep-k", "recalibrate across gate sharpness values");
    CLI::App* sweep_a = app.add_subcommand("sweep-a", "recalibrate across window start inits");

    for (CLI::App* sub :
         {train, calibrate, prune, finetune, oracle, eval, reverse, run_all, sweep_k, sweep_a})
        add_common(sub, flags);

    oracle->add_flag("--with-ppl", oracle_opt.with_ppl,
                     "also eval-set perplexity of every pruned candidate");
    eval->add_option("--ckpt", eval_opt.ckpt, "checkpoint to evaluate (default tuned.ckpt)");
    eval->add_option("--baseline", eval_opt.baseline,
                     "reference checkpoint for retention (default dense.ckpt)");
    eval->add_flag("--throughput", eval_opt.throughput,
                   "measure generation speed (non-deterministic timing)");
    eval->add_flag("--allow-lineage-mismatch", eval_opt.allow_lineage_mismatch,
                   "evaluate checkpoints from a different config");
    sweep_k->add_option("--grid", k_grid, "sharpness values (default 1 3 5 10 20)");
    sweep_a->add_option("--grid", a_grid, "start inits (default 0, L/2, L-n)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is a config error
    }

    try {
        clp::RunConfig cfg = make_config(flags);
        if (train->parsed()) clp::cli::cmd_train(cfg);
        if (calibrate->parsed()) clp::cli::cmd_calibrate(cfg);
        if (prune->parsed()) clp::cli::cmd_prune(cfg);
        if (finetune->parsed()) clp::cli::cmd_finetune(cfg);
        if (oracle->parsed()) clp::cli::cmd_oracle(cfg, oracle_opt);
        if (eval->parsed()) clp::cli::cmd_eval(cfg, eval_opt);
        if (reverse->parsed()) clp::cli::cmd_baseline_reverse(cfg);
        if (run_all->parsed()) clp::cli::cmd_run_all(cfg);
        if (sweep_k->parsed()) {
            if (k_grid.empty()) k_grid = clp::cli::default_k_grid();
            clp::cli::cmd_sweep_k(cfg, k_grid);
        }
        if (sweep_a->parsed()) {
            if (a_grid.empty()) a_grid = clp::cli::default_a_grid(cfg);
            clp::cli::cmd_sweep_a(cfg, a_grid);
        }
        return 0;
    } catch (const clp::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
