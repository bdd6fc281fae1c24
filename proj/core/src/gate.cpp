#include "clp/gate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clp/ops.hpp"

namespace clp {

namespace {

double sigmoid_d(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void GateParams::validate() const {
    if (num_layers < 1) throw ConfigError("gate: num_layers must be >= 1");
    if (window_len < 0 || window_len > num_layers) {
        throw ConfigError("gate: window length " + std::to_string(window_len) +
                          " outside [0, " + std::to_string(num_layers) + "]");
    }
    if (!(sharpness > 0.0)) throw ConfigError("gate: sharpness must be > 0");
    if (!std::isfinite(start)) throw ConfigError("gate: non-finite start");
}

double clamp_start(double start, int window_len, int num_layers) {
    double hi = static_cast<double>(num_layers - window_len);
    return std::clamp(start, 0.0, hi);
}

double gate_value(const GateParams& gp, double i) {
    double k = gp.sharpness;
    double s1 = sigmoid_d(k * (i - gp.start));
    double s2 = sigmoid_d(-k * (i - gp.start - gp.window_len + 1));
    return 1.0 - s1 * s2;
}

double gate_grad_start(const GateParams& gp, double i) {
    double k = gp.sharpness;
    double s1 = sigmoid_d(k * (i - gp.start));
    double s2 = sigmoid_d(-k * (i - gp.start - gp.window_len + 1));
    return k * s1 * s2 * (s2 - s1);
}

LayerMask soft_mask(const GateParams& gp) {
    gp.validate();
    LayerMask m;
    m.kind = MaskKind::soft;
    m.values.reserve(static_cast<size_t>(gp.num_layers));
    for (int i = 0; i < gp.num_layers; ++i) {
        m.values.push_back(static_cast<Real>(gate_value(gp, static_cast<double>(i))));
    }
    return m;
}

LayerMask hard_mask(const PruneWindow& w, int num_layers) {
    if (w.start < 0 || w.length < 0 || w.start + w.length > num_layers) {
        throw ConfigError("hard_mask: window [" + std::to_string(w.start) + ", " +
                          std::to_string(w.start + w.length) + ") outside " +
                          std::to_string(num_layers) + " layers");
    }
    LayerMask m;
    m.kind = MaskKind::hard;
    m.values.assign(static_cast<size_t>(num_layers), Real(1));
    for (int i = w.start; i < w.start + w.length; ++i) {
        m.values[static_cast<size_t>(i)] = Real(0);
    }
    return m;
}

PruneWindow round_window(const GateParams& gp) {
    gp.validate();
    double a = clamp_start(gp.start, gp.window_len, gp.num_layers);
    int s = static_cast<int>(std::lround(a));  // lround = half away from zero
    s = std::clamp(s, 0, gp.num_layers - gp.window_len);
    return PruneWindow{s, gp.window_len};
}

std::vector<Tensor> soft_mask_on_tape(Tape* tape, const Tensor& start, const GateParams& gp) {
    gp.validate();
    if (start.numel() != 1) throw ContractError("soft_mask_on_tape: start must be scalar");
    Real k = static_cast<Real>(gp.sharpness);
    std::vector<Tensor> gates;
    gates.reserve(static_cast<size_t>(gp.num_layers));
    for (int i = 0; i < gp.num_layers; ++i) {
        // k*(i - a) and -k*(i - a - n + 1) as affine maps of the start scalar.
        Tensor u = ops::affine(tape, start, -k, k * static_cast<Real>(i));
        Tensor w = ops::affine(tape, start, k,
                               k * static_cast<Real>(gp.window_len - 1 - i));
        Tensor s1 = ops::sigmoid(tape, u);
        Tensor s2 = ops::sigmoid(tape, w);
        Tensor prod = ops::mul(tape, s1, s2);
        gates.push_back(ops::affine(tape, prod, Real(-1), Real(1)));
    }
    return gates;
}

}  // namespace clp
