#include "clp/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "clp/hash.hpp"

namespace clp {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void read_optional_steps(const json& j, const char* key, std::optional<int64_t>& out) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
        return;
    }
    try {
        out = j.at(key).get<int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

json optional_steps_json(const std::optional<int64_t>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

int RunConfig::window_len() const {
    return static_cast<int>(std::llround(prune_rate * static_cast<double>(model.num_layers)));
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.model = reference_toy_spec();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str(), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": config root must be an object");
    check_keys(j,
               {"model", "data", "prune_rate", "k", "a_init", "train", "calib", "tune", "eval",
                "seed", "out_dir"},
               origin);

    RunConfig c = defaults();
    read_into(j, "prune_rate", c.prune_rate);
    read_into(j, "k", c.sharpness);
    if (j.contains("a_init")) {
        if (j.at("a_init").is_null()) {
            c.start_init.reset();
        } else {
            double v = 0.0;
            read_into(j, "a_init", v);
            c.start_init = v;
        }
    }
    read_into(j, "seed", c.seed);
    read_into(j, "out_dir", c.out_dir);
    c.tune.seed = c.seed;

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"num_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len",
                    "init_seed"},
                   "model");
        read_into(m, "num_layers", c.model.num_layers);
        read_into(m, "d_model", c.model.d_model);
        read_into(m, "n_heads", c.model.n_heads);
        read_into(m, "d_ff", c.model.d_ff);
        read_into(m, "vocab_size", c.model.vocab_size);
        read_into(m, "max_seq_len", c.model.max_seq_len);
        read_into(m, "init_seed", c.model.init_seed);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"train", "calib", "tune", "eval"}, "data");
        read_into(d, "train", c.train_data);
        read_into(d, "calib", c.calib_data);
        read_into(d, "tune", c.tune_data);
        read_into(d, "eval", c.eval_data);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"epochs", "learning_rate", "weight_decay", "batch_size", "seq_len",
                    "max_steps", "log_every"},
                   "train");
        read_into(t, "epochs", c.train.epochs);
        read_into(t, "learning_rate", c.train.learning_rate);
        read_into(t, "weight_decay", c.train.weight_decay);
        read_into(t, "batch_size", c.train.batch_size);
        read_into(t, "seq_len", c.train.seq_len);
        read_optional_steps(t, "max_steps", c.train.max_steps);
        read_into(t, "log_every", c.train.log_every);
    }
    if (j.contains("calib")) {
        const json& ca = j.at("calib");
        check_keys(ca, {"num_samples", "seq_len", "batch_size", "learning_rate", "epochs"},
                   "calib");
        read_into(ca, "num_samples", c.calib.num_samples);
        read_into(ca, "seq_len", c.calib.seq_len);
        read_into(ca, "batch_size", c.calib.batch_size);
        read_into(ca, "learning_rate", c.calib.learning_rate);
        read_into(ca, "epochs", c.calib.epochs);
    }
    if (j.contains("tune")) {
        const json& t = j.at("tune");
        check_keys(t,
                   {"mode", "epochs", "learning_rate", "weight_decay", "batch_size", "seq_len",
                    "adapter_rank", "max_steps", "seed"},
                   "tune");
        if (t.contains("mode")) {
            c.tune.mode = tune_mode_from_string(t.at("mode").get<std::string>());
        }
        read_into(t, "epochs", c.tune.epochs);
        read_into(t, "learning_rate", c.tune.learning_rate);
        read_into(t, "weight_decay", c.tune.weight_decay);
        read_into(t, "batch_size", c.tune.batch_size);
        read_into(t, "seq_len", c.tune.seq_len);
        read_into(t, "adapter_rank", c.tune.adapter_rank);
        read_optional_steps(t, "max_steps", c.tune.max_steps);
        read_into(t, "seed", c.tune.seed);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e,
                   {"seq_len", "batch_size", "cka_max_rows", "cka_batches", "throughput_batch",
                    "throughput_prompt", "throughput_gen", "throughput_reps",
                    "throughput_warmup"},
                   "eval");
        read_into(e, "seq_len", c.eval.seq_len);
        read_into(e, "batch_size", c.eval.batch_size);
        read_into(e, "cka_max_rows", c.eval.cka_max_rows);
        read_into(e, "cka_batches", c.eval.cka_batches);
        read_into(e, "throughput_batch", c.eval.throughput_batch);
        read_into(e, "throughput_prompt", c.eval.throughput_prompt);
        read_into(e, "throughput_gen", c.eval.throughput_gen);
        read_into(e, "throughput_reps", c.eval.throughput_reps);
        read_into(e, "throughput_warmup", c.eval.throughput_warmup);
    }
    c.validate();
    return c;
}

std::string RunConfig::to_json() const {
    json j{
        {"model",
         {{"num_layers", model.num_layers},
          {"d_model", model.d_model},
          {"n_heads", model.n_heads},
          {"d_ff", model.d_ff},
          {"vocab_size", model.vocab_size},
          {"max_seq_len", model.max_seq_len},
          {"init_seed", model.init_seed}}},
        {"data",
         {{"train", train_data}, {"calib", calib_data}, {"tune", tune_data},
          {"eval", eval_data}}},
        {"prune_rate", prune_rate},
        {"k", sharpness},
        {"a_init", start_init ? json(*start_init) : json(nullptr)},
        {"train",
         {{"epochs", train.epochs},
          {"learning_rate", train.learning_rate},
          {"weight_decay", train.weight_decay},
          {"batch_size", train.batch_size},
          {"seq_len", train.seq_len},
          {"max_steps", optional_steps_json(train.max_steps)},
          {"log_every", train.log_every}}},
        {"calib",
         {{"num_samples", calib.num_samples},
          {"seq_len", calib.seq_len},
          {"batch_size", calib.batch_size},
          {"learning_rate", calib.learning_rate},
          {"epochs", calib.epochs}}},
        {"tune",
         {{"mode", to_string(tune.mode)},
          {"epochs", tune.epochs},
          {"learning_rate", tune.learning_rate},
          {"weight_decay", tune.weight_decay},
          {"batch_size", tune.batch_size},
          {"seq_len", tune.seq_len},
          {"adapter_rank", tune.adapter_rank},
          {"max_steps", optional_steps_json(tune.max_steps)},
          {"seed", tune.seed}}},
        {"eval",
         {{"seq_len", eval.seq_len},
          {"batch_size", eval.batch_size},
          {"cka_max_rows", eval.cka_max_rows},
          {"cka_batches", eval.cka_batches},
          {"throughput_batch", eval.throughput_batch},
          {"throughput_prompt", eval.throughput_prompt},
          {"throughput_gen", eval.throughput_gen},
          {"throughput_reps", eval.throughput_reps},
          {"throughput_warmup", eval.throughput_warmup}}},
        {"seed", seed},
        {"out_dir", out_dir},
    };
    return j.dump();
}

std::string RunConfig::hash() const {
    // The output directory is where results land, not what they are; leaving
    // it out lets runs in different directories share a lineage fingerprint.
    json j = json::parse(to_json());
    j.erase("out_dir");
    return hex16(fnv1a64(j.dump()));
}

void RunConfig::validate() const {
    model.validate();
    if (!(prune_rate > 0.0 && prune_rate < 1.0)) {
        throw ConfigError("prune_rate must be in (0, 1)");
    }
    int n = window_len();
    if (n < 1) throw ConfigError("prune_rate " + std::to_string(prune_rate) + " rounds to an empty window");
    if (model.num_layers - n < 2) {
        throw ConfigError("prune_rate leaves fewer than 2 layers");
    }
    if (!(sharpness > 0.0)) throw ConfigError("k must be > 0");
    if (start_init && !std::isfinite(*start_init)) throw ConfigError("a_init must be finite");
    if (train.epochs < 1 || train.batch_size < 1 || train.seq_len < 1 ||
        train.learning_rate <= 0.0 || train.log_every < 1) {
        throw ConfigError("invalid train profile");
    }
    if (train.seq_len > model.max_seq_len) {
        throw ConfigError("train seq_len exceeds model max_seq_len");
    }
    if (calib.num_samples < 1 || calib.seq_len < 1 || calib.batch_size < 1 ||
        calib.learning_rate <= 0.0 || calib.epochs < 1) {
        throw ConfigError("invalid calib profile");
    }
    if (calib.seq_len > model.max_seq_len) {
        throw ConfigError("calib seq_len exceeds model max_seq_len");
    }
    tune.validate();
    if (tune.seq_len > model.max_seq_len) {
        throw ConfigError("tune seq_len exceeds model max_seq_len");
    }
    if (eval.seq_len < 1 || eval.seq_len > model.max_seq_len || eval.batch_size < 1 ||
        eval.cka_max_rows < 2 || eval.cka_batches < 1 || eval.throughput_batch < 1 ||
        eval.throughput_prompt < 1 || eval.throughput_gen < 1 || eval.throughput_reps < 1 ||
        eval.throughput_warmup < 0) {
        throw ConfigError("invalid eval profile");
    }
    if (eval.throughput_prompt + eval.throughput_gen > model.max_seq_len) {
        throw ConfigError("throughput prompt + gen_len exceeds model max_seq_len");
    }
}

}  // namespace clp
