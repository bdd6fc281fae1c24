#include "clp/tokenizer.hpp"

#include <fstream>

#include "clp/errors.hpp"
#include "clp/rng.hpp"

namespace clp {

Corpus tokenize_bytes(std::span<const uint8_t> bytes, std::string name) {
    if (bytes.empty()) throw DataError("empty input: " + name);
    Corpus c;
    c.name = std::move(name);
    c.ids.reserve(bytes.size());
    for (uint8_t b : bytes) c.ids.push_back(static_cast<int32_t>(b));
    return c;
}

Corpus tokenize_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.empty()) throw DataError("empty corpus file: " + path);
    return tokenize_bytes(bytes, path);
}

std::vector<uint8_t> detokenize(std::span<const int32_t> ids) {
    std::vector<uint8_t> out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id < 0 || id > 255) {
            throw DataError("detokenize: id " + std::to_string(id) + " is not a byte");
        }
        out.push_back(static_cast<uint8_t>(id));
    }
    return out;
}

std::vector<int64_t> sample_window_starts(int64_t corpus_len, int64_t count, int64_t seq_len,
                                          uint64_t seed) {
    if (seq_len < 1) throw ContractError("sample_window_starts: seq_len must be >= 1");
    if (count < 0) throw ContractError("sample_window_starts: negative count");
    int64_t range = corpus_len - seq_len;  // start s uses ids [s, s+seq_len]
    if (range < 1) {
        throw DataError("corpus of " + std::to_string(corpus_len) +
                        " tokens is too short for windows of " + std::to_string(seq_len));
    }
    Rng rng(seed);
    std::vector<int64_t> starts;
    starts.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) starts.push_back(rng.below(range));
    return starts;
}

Batch make_batch(const Corpus& corpus, std::span<const int64_t> starts, int64_t seq_len) {
    if (starts.empty()) throw ContractError("make_batch: no window starts");
    if (seq_len < 1) throw ContractError("make_batch: seq_len must be >= 1");
    Batch b;
    b.batch = static_cast<int64_t>(starts.size());
    b.seq_len = seq_len;
    b.inputs.reserve(static_cast<size_t>(b.batch * seq_len));
    b.targets.reserve(static_cast<size_t>(b.batch * seq_len));
    int64_t len = static_cast<int64_t>(corpus.ids.size());
    for (int64_t s : starts) {
        if (s < 0 || s + seq_len >= len) {
            throw DataError("window start " + std::to_string(s) + " of length " +
                            std::to_string(seq_len) + " exceeds corpus of " +
                            std::to_string(len) + " tokens");
        }
        for (int64_t t = 0; t < seq_len; ++t) {
            b.inputs.push_back(corpus.ids[static_cast<size_t>(s + t)]);
            b.targets.push_back(corpus.ids[static_cast<size_t>(s + t + 1)]);
        }
    }
    return b;
}

std::vector<Batch> sample_batches(const Corpus& corpus, int64_t count, int64_t seq_len,
                                  int64_t batch_size, uint64_t seed) {
    if (batch_size < 1) throw ContractError("sample_batches: batch_size must be >= 1");
    std::vector<int64_t> starts =
        sample_window_starts(static_cast<int64_t>(corpus.ids.size()), count, seq_len, seed);
    std::vector<Batch> out;
    int64_t full = count / batch_size;
    out.reserve(static_cast<size_t>(full));
    for (int64_t g = 0; g < full; ++g) {
        std::span<const int64_t> group(starts.data() + g * batch_size,
                                       static_cast<size_t>(batch_size));
        out.push_back(make_batch(corpus, group, seq_len));
    }
    if (out.empty()) throw DataError("sample_batches: fewer samples than one batch");
    return out;
}

std::vector<Batch> sequential_batches(const Corpus& corpus, int64_t seq_len, int64_t batch_size) {
    if (batch_size < 1) throw ContractError("sequential_batches: batch_size must be >= 1");
    if (seq_len < 1) throw ContractError("sequential_batches: seq_len must be >= 1");
    int64_t len = static_cast<int64_t>(corpus.ids.size());
    std::vector<int64_t> starts;
    for (int64_t s = 0; s + seq_len < len; s += seq_len) starts.push_back(s);
    if (starts.empty()) {
        throw DataError("corpus of " + std::to_string(len) +
                        " tokens is too short for windows of " + std::to_string(seq_len));
    }
    std::vector<Batch> out;
    int64_t full = static_cast<int64_t>(starts.size()) / batch_size;
    if (full == 0) throw DataError("sequential_batches: fewer windows than one batch");
    out.reserve(static_cast<size_t>(full));
    for (int64_t g = 0; g < full; ++g) {
        std::span<const int64_t> group(starts.data() + g * batch_size,
                                       static_cast<size_t>(batch_size));
        out.push_back(make_batch(corpus, group, seq_len));
    }
    return out;
}

}  // namespace clp
