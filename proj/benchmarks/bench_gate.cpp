#include <benchmark/benchmark.h>

#include "clp/gate.hpp"

using namespace clp;

namespace {

GateParams params_for(int num_layers) {
    GateParams gp;
    gp.num_layers = num_layers;
    gp.window_len = num_layers / 4;
    gp.start = 0.35 * num_layers;
    gp.sharpness = 5.0;
    return gp;
}

}  // namespace

static void BM_soft_mask(benchmark::State& state) {
    GateParams gp = params_for(int(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(soft_mask(gp));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_soft_mask)->Arg(12)->Arg(96)->Arg(768);

static void BM_gate_grad_sweep(benchmark::State& state) {
    GateParams gp = params_for(int(state.range(0)));
    for (auto _ : state) {
        double acc = 0.0;
        for (int i = 0; i < gp.num_layers; ++i) acc += gate_grad_start(gp, double(i));
        benchmark::DoNotOptimize(acc);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_gate_grad_sweep)->Arg(12)->Arg(96)->Arg(768);

// Tape-recorded gate construction plus backward through one gate value,
// i.e. the per-step autodiff overhead the calibrator pays on top of the
// closed form.
static void BM_soft_mask_on_tape(benchmark::State& state) {
    GateParams gp = params_for(int(state.range(0)));
    for (auto _ : state) {
        Tape tape;
        Tensor start = Tensor::scalar(Real(gp.start), true);
        std::vector<Tensor> gates = soft_mask_on_tape(&tape, start, gp);
        tape.backward(gates[size_t(gp.num_layers) / 2]);
        benchmark::DoNotOptimize(tape.grad_of(start));
    }
}
BENCHMARK(BM_soft_mask_on_tape)->Arg(12)->Arg(96);
