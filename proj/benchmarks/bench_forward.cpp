#include <benchmark/benchmark.h>

#include "clp/gate.hpp"
#include "clp/model.hpp"
#include "clp/prune.hpp"
#include "clp/rng.hpp"

using namespace clp;

namespace {

Batch random_batch(int64_t batch, int64_t seq_len, uint64_t seed) {
    Rng rng(seed);
    Batch b;
    b.batch = batch;
    b.seq_len = seq_len;
    b.inputs.resize(size_t(batch * seq_len));
    b.targets.resize(size_t(batch * seq_len));
    for (int32_t& v : b.inputs) v = int32_t(rng.below(256));
    for (int32_t& v : b.targets) v = int32_t(rng.below(256));
    return b;
}

const TransformerLM& dense_model() {
    static TransformerLM model = TransformerLM::init(reference_toy_spec());
    return model;
}

// Same model with `n` middle layers excised. Built once per n.
const TransformerLM& pruned_model(int n) {
    static std::unordered_map<int, TransformerLM> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        PruneWindow w{(dense_model().num_layers() - n) / 2, n};
        it = cache.emplace(n, prune_window(dense_model(), w).first).first;
    }
    return it->second;
}

}  // namespace

// Forward cost vs layers removed (0 = dense, 2 = 20% of 12, 4 = 30%).
static void BM_forward(benchmark::State& state) {
    const TransformerLM& model =
        state.range(0) == 0 ? dense_model() : pruned_model(int(state.range(0)));
    Batch b = random_batch(2, 64, 17);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(b));
    state.SetItemsProcessed(state.iterations() * b.batch * b.seq_len);
}
BENCHMARK(BM_forward)->Arg(0)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

// The gated pass the calibrator runs: residual bypass at every layer with a
// soft mask, no tape.
static void BM_forward_gated(benchmark::State& state) {
    const TransformerLM& model = dense_model();
    GateParams gp;
    gp.num_layers = model.num_layers();
    gp.window_len = 3;
    gp.start = 4.2;
    gp.sharpness = 5.0;
    LayerMask mask = soft_mask(gp);
    Batch b = random_batch(2, 64, 17);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward_gated(b, mask));
    state.SetItemsProcessed(state.iterations() * b.batch * b.seq_len);
}
BENCHMARK(BM_forward_gated)->Unit(benchmark::kMillisecond);

// Structural excision itself (copying survivors into a smaller model).
static void BM_prune_window(benchmark::State& state) {
    const TransformerLM& model = dense_model();
    PruneWindow w{4, 3};
    for (auto _ : state) benchmark::DoNotOptimize(prune_window(model, w));
}
BENCHMARK(BM_prune_window)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
