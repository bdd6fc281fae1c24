#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace clp {

// Byte-level vocabulary: ids 0..255 are raw bytes, plus three reserved
// control ids. Tokenization is the identity map on bytes, so any file is
// valid input and round-trips exactly.
inline constexpr int32_t kPadId = 256;
inline constexpr int32_t kBosId = 257;
inline constexpr int32_t kEosId = 258;
inline constexpr int32_t kVocabSize = 259;

struct Corpus {
    std::string name;
    std::vector<int32_t> ids;
};

// One training/eval batch: `inputs` and next-token `targets`, both
// row-major [batch, seq_len].
struct Batch {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> inputs;
    std::vector<int32_t> targets;
};

Corpus tokenize_bytes(std::span<const uint8_t> bytes, std::string name);
Corpus tokenize_file(const std::string& path);

// Inverse of tokenize for byte ids; control ids cannot be rendered.
std::vector<uint8_t> detokenize(std::span<const int32_t> ids);

// `count` window start offsets drawn uniformly (with replacement) from the
// valid range; deterministic in the seed.
std::vector<int64_t> sample_window_starts(int64_t corpus_len, int64_t count, int64_t seq_len,
                                          uint64_t seed);

Batch make_batch(const Corpus& corpus, std::span<const int64_t> starts, int64_t seq_len);

// `count` randomly positioned windows grouped into full batches (a trailing
// partial batch is dropped so every batch carries equal weight in means).
std::vector<Batch> sample_batches(const Corpus& corpus, int64_t count, int64_t seq_len,
                                  int64_t batch_size, uint64_t seed);

// Non-overlapping windows covering the corpus front to back, grouped into
// full batches.
std::vector<Batch> sequential_batches(const Corpus& corpus, int64_t seq_len, int64_t batch_size);

}  // namespace clp
