#include <cstdint>
#include <vector>

#include <doctest.h>

#include "clp/errors.hpp"
#include "clp/tokenizer.hpp"
#include "testutil.hpp"
#include "textgen.hpp"

using namespace clp;

TEST_CASE("byte tokenization round-trips any content") {
    std::vector<uint8_t> bytes{0, 1, 65, 200, 255, 10, 0};
    Corpus c = tokenize_bytes(bytes, "blob");
    REQUIRE(c.ids.size() == bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) CHECK(c.ids[i] == int32_t(bytes[i]));
    std::vector<uint8_t> back = detokenize(c.ids);
    CHECK(back == bytes);
}

TEST_CASE("control ids sit above the byte range") {
    CHECK(kPadId == 256);
    CHECK(kBosId == 257);
    CHECK(kEosId == 258);
    CHECK(kVocabSize == 259);
    std::vector<int32_t> with_control{65, kBosId};
    CHECK_THROWS_AS(detokenize(with_control), DataError);
}

TEST_CASE("empty input is a data error") {
    CHECK_THROWS_AS(tokenize_bytes(std::span<const uint8_t>(), "empty"), DataError);
}

TEST_CASE("tokenize_file reads bytes and missing files fail") {
    test::TmpDir tmp("tok");
    std::string text = test::english_like(1, 400);
    test::write_file(tmp.file("corpus.txt"), text);
    Corpus c = tokenize_file(tmp.file("corpus.txt"));
    REQUIRE(c.ids.size() == text.size());
    for (size_t i = 0; i < text.size(); ++i) CHECK(c.ids[i] == int32_t(uint8_t(text[i])));
    CHECK_THROWS_AS(tokenize_file(tmp.file("absent.txt")), DataError);
}

TEST_CASE("window starts stay in range and are seed-deterministic") {
    auto a = sample_window_starts(1000, 64, 100, 7);
    auto b = sample_window_starts(1000, 64, 100, 7);
    auto c = sample_window_starts(1000, 64, 100, 8);
    CHECK(a == b);
    CHECK(a != c);
    REQUIRE(a.size() == 64);
    // make_batch consumes ids[s .. s+seq_len], so starts stop seq_len+1
    // short of the end.
    for (int64_t s : a) {
        CHECK(s >= 0);
        CHECK(s + 100 < 1000);
    }
}

TEST_CASE("make_batch pairs inputs with next-token targets") {
    std::vector<uint8_t> bytes(64);
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = uint8_t(i);
    Corpus c = tokenize_bytes(bytes, "ramp");
    std::vector<int64_t> starts{0, 10};
    Batch batch = make_batch(c, starts, 5);
    REQUIRE(batch.batch == 2);
    REQUIRE(batch.seq_len == 5);
    REQUIRE(batch.inputs.size() == 10);
    for (int64_t r = 0; r < 2; ++r)
        for (int64_t t = 0; t < 5; ++t) {
            CHECK(batch.inputs[size_t(r * 5 + t)] == int32_t(starts[size_t(r)] + t));
            CHECK(batch.targets[size_t(r * 5 + t)] == int32_t(starts[size_t(r)] + t + 1));
        }
}

TEST_CASE("sample_batches drops a trailing partial batch") {
    std::string text = test::english_like(3, 4096);
    Corpus c = tokenize_bytes({reinterpret_cast<const uint8_t*>(text.data()), text.size()},
                              "gen");
    auto batches = sample_batches(c, 10, 16, 4, 11);
    CHECK(batches.size() == 2);  // 10 windows / 4 per batch -> 2 full batches
    for (const Batch& b : batches) {
        CHECK(b.batch == 4);
        CHECK(b.seq_len == 16);
    }
    // Deterministic in the seed.
    auto again = sample_batches(c, 10, 16, 4, 11);
    REQUIRE(again.size() == batches.size());
    CHECK(again[0].inputs == batches[0].inputs);
    auto shifted = sample_batches(c, 10, 16, 4, 12);
    CHECK(shifted[0].inputs != batches[0].inputs);
}

TEST_CASE("sequential_batches tile the corpus without overlap") {
    std::vector<uint8_t> bytes(100);
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = uint8_t(i);
    Corpus c = tokenize_bytes(bytes, "ramp");
    auto batches = sequential_batches(c, 10, 3);
    // Starts 0,10,...,80 are valid (start+seq < len): 9 windows -> 3 batches.
    REQUIRE(batches.size() == 3);
    int64_t expect = 0;
    for (const Batch& b : batches) {
        REQUIRE(b.batch == 3);
        REQUIRE(b.seq_len == 10);
        for (int64_t r = 0; r < b.batch; ++r) {
            CHECK(b.inputs[size_t(r * 10)] == int32_t(expect));
            expect += 10;
        }
    }
}

TEST_CASE("corpora too small for one window or one batch are data errors") {
    std::vector<uint8_t> bytes(8, 42);
    Corpus c = tokenize_bytes(bytes, "tiny");
    CHECK_THROWS_AS(sample_batches(c, 4, 16, 2, 1), DataError);
    CHECK_THROWS_AS(sequential_batches(c, 16, 2), DataError);

    // Enough tokens for windows, but not for a single full batch.
    std::vector<uint8_t> more(40, 42);
    Corpus c2 = tokenize_bytes(more, "short");
    CHECK_THROWS_AS(sample_batches(c2, 3, 16, 4, 1), DataError);
    CHECK_THROWS_AS(sequential_batches(c2, 16, 4), DataError);
}
