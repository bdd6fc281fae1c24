#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <doctest.h>
#include <json.hpp>

#include "clp/config.hpp"
#include "clp/errors.hpp"
#include "commands.hpp"
#include "testutil.hpp"
#include "textgen.hpp"

using namespace clp;
using namespace clp::test;
namespace fs = std::filesystem;

namespace {

// Runs the installed tool binary; returns its exit code and captures output.
int run_tool(const std::string& args, const std::string& log_path) {
    std::string cmd = std::string(CLP_TOOL_PATH) + " " + args + " >" + log_path + " 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

nlohmann::json tiny_config(const std::string& corpus_path) {
    return nlohmann::json{
        {"model",
         {{"num_layers", 4},
          {"d_model", 16},
          {"n_heads", 2},
          {"d_ff", 32},
          {"max_seq_len", 32},
          {"init_seed", 5}}},
        {"data",
         {{"train", corpus_path},
          {"calib", corpus_path},
          {"tune", corpus_path},
          {"eval", corpus_path}}},
        {"prune_rate", 0.25},
        {"k", 5.0},
        {"train",
         {{"epochs", 1},
          {"learning_rate", 3e-3},
          {"batch_size", 2},
          {"seq_len", 16},
          {"max_steps", 30},
          {"log_every", 10}}},
        {"calib",
         {{"num_samples", 24},
          {"seq_len", 12},
          {"batch_size", 2},
          {"learning_rate", 25.0},
          {"epochs", 1}}},
        {"tune",
         {{"mode", "endpoint"},
          {"epochs", 1},
          {"learning_rate", 1e-3},
          {"batch_size", 2},
          {"seq_len", 16},
          {"adapter_rank", 2},
          {"max_steps", 4}}},
        {"eval",
         {{"seq_len", 16},
          {"batch_size", 2},
          {"cka_max_rows", 64},
          {"cka_batches", 1},
          {"throughput_batch", 1},
          {"throughput_prompt", 8},
          {"throughput_gen", 4},
          {"throughput_reps", 2},
          {"throughput_warmup", 0}}},
        {"seed", 77},
    };
}

}  // namespace

TEST_CASE("defaults form a valid reference profile") {
    RunConfig cfg = RunConfig::defaults();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.model.num_layers == 12);
    CHECK(cfg.window_len() == 3);  // 25% of 12
    CHECK(cfg.sharpness == 5.0);
    CHECK_FALSE(cfg.start_init.has_value());
    CHECK(cfg.calib.learning_rate == 0.5);
    CHECK(cfg.calib.epochs == 1);
    CHECK(cfg.tune.mode == TuneMode::endpoint);
    CHECK(cfg.hash().size() == 16);
    CHECK(cfg.hash().find_first_not_of("0123456789abcdef") == std::string::npos);
}

TEST_CASE("window length rounds half away from zero") {
    RunConfig cfg = RunConfig::defaults();
    cfg.prune_rate = 0.25;
    CHECK(cfg.window_len() == 3);  // 3.0
    cfg.prune_rate = 0.2;
    CHECK(cfg.window_len() == 2);  // 2.4 -> 2
    cfg.prune_rate = 0.3;
    CHECK(cfg.window_len() == 4);  // 3.6 -> 4
    cfg.prune_rate = 0.125;
    CHECK(cfg.window_len() == 2);  // 1.5 -> 2
    cfg.model.num_layers = 10;
    cfg.prune_rate = 0.25;
    CHECK(cfg.window_len() == 3);  // 2.5 -> 3
}

TEST_CASE("config files override individual fields") {
    RunConfig cfg = RunConfig::from_json_text(R"({
        "model": {"num_layers": 8, "d_model": 32, "n_heads": 4},
        "data": {"train": "a.txt", "eval": "b.txt"},
        "prune_rate": 0.25,
        "k": 7.5,
        "a_init": 2.5,
        "tune": {"mode": "lowrank", "adapter_rank": 4},
        "seed": 99
    })", "test");
    CHECK(cfg.model.num_layers == 8);
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.model.d_ff == 256);  // untouched default
    CHECK(cfg.train_data == "a.txt");
    CHECK(cfg.calib_data.empty());
    CHECK(cfg.sharpness == 7.5);
    CHECK(cfg.start_init == 2.5);
    CHECK(cfg.tune.mode == TuneMode::lowrank);
    CHECK(cfg.tune.adapter_rank == 4);
    CHECK(cfg.seed == 99);
    CHECK(cfg.tune.seed == 99);  // follows the run seed by default

    RunConfig pinned = RunConfig::from_json_text(
        R"({"seed": 99, "tune": {"seed": 5}})", "test");
    CHECK(pinned.seed == 99);
    CHECK(pinned.tune.seed == 5);

    RunConfig null_a = RunConfig::from_json_text(R"({"a_init": null})", "test");
    CHECK_FALSE(null_a.start_init.has_value());
}

TEST_CASE("unknown keys and malformed values are rejected") {
    CHECK_THROWS_AS(RunConfig::from_json_text("{not json", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("[1,2]", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"pruning_rate": 0.25})", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"model": {"layers": 4}})", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"tune": {"rank": 2}})", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"prune_rate": "lots"})", "t"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"tune": {"mode": "qlora"}})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/cfg.json"), DataError);
}

TEST_CASE("serialization is a canonical fixed point") {
    RunConfig cfg = RunConfig::defaults();
    cfg.train_data = "corpus.txt";
    cfg.start_init = 4.0;
    cfg.tune.max_steps = 17;
    std::string text = cfg.to_json();
    RunConfig re = RunConfig::from_json_text(text, "roundtrip");
    CHECK(re.to_json() == text);
    CHECK(re.hash() == cfg.hash());
}

TEST_CASE("the lineage fingerprint ignores the output directory only") {
    RunConfig a = RunConfig::defaults();
    RunConfig b = RunConfig::defaults();
    b.out_dir = "elsewhere/deep/run42";
    CHECK(a.hash() == b.hash());

    b = RunConfig::defaults();
    b.seed = 4321;
    CHECK(a.hash() != b.hash());
    b = RunConfig::defaults();
    b.prune_rate = 0.3;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("validation rejects degenerate pruning setups") {
    RunConfig cfg = RunConfig::defaults();
    cfg.prune_rate = 0.04;  // rounds to an empty window
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::defaults();
    cfg.prune_rate = 0.9;  // leaves fewer than 2 layers
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::defaults();
    cfg.sharpness = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::defaults();
    cfg.train.seq_len = 999;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::defaults();
    cfg.eval.throughput_prompt = 200;
    cfg.eval.throughput_gen = 100;  // 300 > max_seq_len 256
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the pipeline runs end to end from the command line") {
    TmpDir dir("cli");
    std::string corpus = dir.file("corpus.txt");
    write_file(corpus, english_like(40, 24576));
    std::string cfg_path = dir.file("cfg.json");
    write_file(cfg_path, tiny_config(corpus).dump(2));
    std::string out = dir.file("out");
    std::string log = dir.file("log.txt");
    std::string base_args = "--config " + cfg_path + " --out " + out;

    int code = run_tool("run-all " + base_args, log);
    std::string log_text = read_file(log);
    CAPTURE(log_text);
    REQUIRE(code == 0);

    for (const char* name :
         {cli::kDenseCkpt, cli::kTrainCurveCsv, cli::kCalibTraceCsv, cli::kWindowJson,
          cli::kPrunedCkpt, cli::kTunedCkpt, cli::kTuneCurveCsv, cli::kReportJson,
          cli::kCkaCsv}) {
        INFO(name);
        CHECK(fs::exists(fs::path(out) / name));
    }

    RunConfig cfg = RunConfig::from_file(cfg_path);
    nlohmann::json report =
        nlohmann::json::parse(std::ifstream(fs::path(out) / cli::kReportJson));
    CHECK(report.at("config").get<std::string>() == cfg.hash());
    CHECK(report.at("retention").get<double>() > 0.0);
    CHECK(report.at("checkpoint").at("layers").get<int>() == 3);
    CHECK(report.at("baseline").at("layers").get<int>() == 4);
    CHECK_FALSE(report.at("checkpoint").at("pruned_window").is_null());
    CHECK(report.at("checkpoint").at("pruned_window").at("length").get<int>() == 1);
    CHECK(report.at("cka").at("matrix").size() == 4);  // pruned model: 3 layers + embeddings
    CHECK(report.at("throughput").is_null());

    // The oracle ranks all 4 candidate windows and locates the found one.
    code = run_tool("oracle --with-ppl " + base_args, log);
    log_text = read_file(log);
    CAPTURE(log_text);
    REQUIRE(code == 0);
    nlohmann::json agreement =
        nlohmann::json::parse(std::ifstream(fs::path(out) / cli::kAgreementJson));
    CHECK(agreement.at("candidates").get<int>() == 4);
    CHECK(agreement.at("rank").get<int>() >= 1);
    CHECK(agreement.at("rank").get<int>() <= 4);
    CHECK(agreement.at("found").at("length").get<int>() == 1);
    CHECK(agreement.at("kl_gap").get<double>() >= 0.0);
    std::string oracle_csv = read_file((fs::path(out) / cli::kOracleCsv).string());
    CHECK(oracle_csv.find("start,n,kl,ppl") != std::string::npos);

    // Tail-window comparison baseline, then evaluate it explicitly.
    code = run_tool("baseline-reverse " + base_args, log);
    REQUIRE(code == 0);
    CHECK(fs::exists(fs::path(out) / cli::kReverseCkpt));
    code = run_tool("eval --ckpt reverse.ckpt --throughput " + base_args, log);
    log_text = read_file(log);
    CAPTURE(log_text);
    REQUIRE(code == 0);
    report = nlohmann::json::parse(std::ifstream(fs::path(out) / cli::kReportJson));
    CHECK_FALSE(report.at("throughput").is_null());
    CHECK(report.at("throughput").at("tokens_per_sec").get<double>() > 0.0);

    // Sharpness sweep over a single value exercises the ablation path.
    code = run_tool("sweep-k --grid 5 " + base_args, log);
    log_text = read_file(log);
    CAPTURE(log_text);
    REQUIRE(code == 0);
    CHECK(fs::exists(fs::path(out) / cli::kSweepKCsv));
}

TEST_CASE("command line failures map to distinct exit codes") {
    TmpDir dir("cli-err");
    std::string corpus = dir.file("corpus.txt");
    write_file(corpus, english_like(41, 24576));
    std::string cfg_path = dir.file("cfg.json");
    write_file(cfg_path, tiny_config(corpus).dump(2));
    std::string log = dir.file("log.txt");

    SUBCASE("usage errors exit 2") {
        CHECK(run_tool("", log) == 2);  // missing subcommand
        CHECK(run_tool("--help", log) == 0);
        CHECK(run_tool("train --no-such-flag", log) == 2);
        CHECK(run_tool("train --config /nonexistent.json", log) == 2);
        CHECK(run_tool("train --config " + cfg_path + " --mode qlora", log) == 2);
    }
    SUBCASE("invalid configuration exits 2") {
        std::string bad = dir.file("bad.json");
        write_file(bad, R"({"pruning_rate": 0.25})");
        CHECK(run_tool("train --config " + bad, log) == 2);
        // 0.9 of 4 layers rounds to a window that leaves fewer than 2.
        CHECK(run_tool("train --config " + cfg_path + " --prune-rate 0.9", log) == 2);
    }
    SUBCASE("missing inputs exit 3") {
        std::string out = dir.file("empty-out");
        std::string args = "--config " + cfg_path + " --out " + out;
        CHECK(run_tool("prune " + args, log) == 3);     // no dense.ckpt yet
        CHECK(run_tool("finetune " + args, log) == 3);  // no pruned.ckpt yet

        nlohmann::json cfg = tiny_config(dir.file("missing.txt"));
        std::string missing_data = dir.file("missing-data.json");
        write_file(missing_data, cfg.dump());
        CHECK(run_tool("train --config " + missing_data + " --out " + out, log) == 3);
    }
    SUBCASE("lineage mismatches exit 5 unless overridden") {
        std::string out = dir.file("lineage-out");
        std::string args = "--config " + cfg_path + " --out " + out;
        int code = run_tool("train " + args, log);
        std::string log_text = read_file(log);
        CAPTURE(log_text);
        REQUIRE(code == 0);
        REQUIRE(run_tool("calibrate " + args, log) == 0);
        REQUIRE(run_tool("prune " + args, log) == 0);
        REQUIRE(run_tool("finetune " + args, log) == 0);

        CHECK(run_tool("eval " + args + " --seed 123", log) == 5);
        CHECK(run_tool("eval " + args + " --seed 123 --allow-lineage-mismatch", log) == 0);
    }
}
