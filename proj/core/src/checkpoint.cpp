#include "clp/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "clp/hash.hpp"

namespace clp {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

constexpr char kMagic[8] = {'C', 'L', 'P', 'C', 'K', 'P', 'T', '1'};

const char* dtype_name() { return sizeof(Real) == 8 ? "f64" : "f32"; }

nlohmann::json spec_to_json(const ModelSpec& s) {
    return nlohmann::json{
        {"num_layers", s.num_layers},   {"d_model", s.d_model},
        {"n_heads", s.n_heads},         {"d_ff", s.d_ff},
        {"vocab_size", s.vocab_size},   {"max_seq_len", s.max_seq_len},
        {"init_seed", s.init_seed},
    };
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.num_layers = j.at("num_layers").get<int>();
    s.d_model = j.at("d_model").get<int>();
    s.n_heads = j.at("n_heads").get<int>();
    s.d_ff = j.at("d_ff").get<int>();
    s.vocab_size = j.at("vocab_size").get<int>();
    s.max_seq_len = j.at("max_seq_len").get<int>();
    s.init_seed = j.at("init_seed").get<uint64_t>();
    return s;
}

nlohmann::json pruned_to_json(const PrunedMeta& m) {
    nlohmann::json j{
        {"parent_checksum", m.parent_checksum},
        {"window", {{"start", m.window.start}, {"length", m.window.length}}},
        {"resulting_layers", m.resulting_layers},
    };
    if (m.prev_layer) j["prev_layer"] = *m.prev_layer;
    if (m.next_layer) j["next_layer"] = *m.next_layer;
    return j;
}

PrunedMeta pruned_from_json(const nlohmann::json& j) {
    PrunedMeta m;
    m.parent_checksum = j.at("parent_checksum").get<uint64_t>();
    m.window.start = j.at("window").at("start").get<int>();
    m.window.length = j.at("window").at("length").get<int>();
    m.resulting_layers = j.at("resulting_layers").get<int>();
    if (j.contains("prev_layer")) m.prev_layer = j.at("prev_layer").get<int>();
    if (j.contains("next_layer")) m.next_layer = j.at("next_layer").get<int>();
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const TransformerLM& model,
                     const CheckpointInfo& info) {
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    uint64_t checksum = fnv1a64("", 0);
    for (const NamedParam& p : model.params()) {
        auto vals = p.tensor.values();
        uint64_t nbytes = vals.size() * sizeof(Real);
        manifest.push_back({
            {"name", p.name},
            {"dtype", dtype_name()},
            {"shape", p.tensor.shape()},
            {"offset", offset},
        });
        checksum = fnv1a64(vals.data(), static_cast<size_t>(nbytes), checksum);
        offset += nbytes;
    }

    nlohmann::json header{
        {"dtype", dtype_name()},
        {"spec", spec_to_json(model.spec())},
        {"adapter_rank", model.adapter_rank()},
        {"config_hash", info.config_hash},
        {"tensors", manifest},
        {"blob_size", offset},
        {"blob_checksum", hex16(checksum)},
    };
    if (info.pruned) header["pruned"] = pruned_to_json(*info.pruned);

    std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    uint64_t hlen = header_text.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const NamedParam& p : model.params()) {
        auto vals = p.tensor.values();
        out.write(reinterpret_cast<const char*>(vals.data()),
                  static_cast<std::streamsize>(vals.size() * sizeof(Real)));
    }
    out.flush();
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

TransformerLM load_checkpoint(const std::string& path, CheckpointInfo* info) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, "CLPCKPT", 7) != 0) {
        throw DataError(path + " is not a CLPCKPT checkpoint");
    }
    if (magic[7] != '1') {
        throw DataError(path + ": unsupported checkpoint version '" +
                        std::string(1, magic[7]) + "'");
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen == 0 || hlen > (1ull << 30)) {
        throw DataError(path + ": corrupt header length");
    }
    std::string header_text(hlen, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError(path + ": truncated header");

    nlohmann::json header;
    ModelSpec spec;
    try {
        header = nlohmann::json::parse(header_text);
        spec = spec_from_json(header.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed header: " + e.what());
    }
    std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != dtype_name()) {
        throw DataError(path + ": dtype " + dtype + " does not match this build (" +
                        dtype_name() + ")");
    }
    spec.validate();

    TransformerLM model = TransformerLM::with_zeros(spec);
    int adapter_rank = header.value("adapter_rank", 0);
    if (adapter_rank > 0) model.add_adapters(adapter_rank, 0);

    const nlohmann::json& manifest = header.at("tensors");
    auto params = model.params_mut();
    if (manifest.size() != params.size()) {
        throw DataError(path + ": manifest lists " + std::to_string(manifest.size()) +
                        " tensors, expected " + std::to_string(params.size()));
    }
    uint64_t offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const nlohmann::json& entry = manifest[i];
        if (entry.at("name").get<std::string>() != params[i].name ||
            entry.at("dtype").get<std::string>() != dtype_name() ||
            entry.at("shape").get<Shape>() != params[i].tensor.shape() ||
            entry.at("offset").get<uint64_t>() != offset) {
            throw DataError(path + ": manifest entry " + std::to_string(i) +
                            " does not match expected tensor '" + params[i].name + "'");
        }
        offset += static_cast<uint64_t>(params[i].tensor.numel()) * sizeof(Real);
    }
    uint64_t blob_size = header.at("blob_size").get<uint64_t>();
    if (blob_size != offset) throw DataError(path + ": blob size mismatch");

    std::vector<char> blob(blob_size);
    in.read(blob.data(), static_cast<std::streamsize>(blob_size));
    if (!in || static_cast<uint64_t>(in.gcount()) != blob_size) {
        throw DataError(path + ": truncated tensor data");
    }
    uint64_t checksum = fnv1a64(blob.data(), blob.size());
    if (hex16(checksum) != header.at("blob_checksum").get<std::string>()) {
        throw DataError(path + ": blob checksum mismatch (corrupt file)");
    }

    uint64_t pos = 0;
    for (auto& p : params) {
        auto vals = p.tensor.values_mut();
        std::memcpy(vals.data(), blob.data() + pos, vals.size() * sizeof(Real));
        pos += vals.size() * sizeof(Real);
    }

    if (info) {
        info->config_hash = header.value("config_hash", std::string());
        info->pruned.reset();
        if (header.contains("pruned")) {
            try {
                info->pruned = pruned_from_json(header.at("pruned"));
            } catch (const nlohmann::json::exception& e) {
                throw DataError(path + ": malformed pruned metadata: " + e.what());
            }
        }
    }
    return model;
}

}  // namespace clp
