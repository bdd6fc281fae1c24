#include "clp/calibrate.hpp"

#include <cmath>
#include <string>

#include "clp/ops.hpp"

namespace clp {

void CalibConfig::validate() const {
    if (window_len < 1) throw ConfigError("calibration: window length must be >= 1");
    if (!(sharpness > 0.0)) throw ConfigError("calibration: sharpness must be > 0");
    if (learning_rate <= 0.0) throw ConfigError("calibration: learning rate must be > 0");
    if (epochs < 1) throw ConfigError("calibration: epochs must be >= 1");
}

double kl_objective(const TransformerLM& model, const LayerMask& mask, const Batch& batch) {
    Tensor dense_logits = model.forward(batch, nullptr);
    Tensor p = ops::softmax(nullptr, dense_logits);
    Tensor gated_logits = model.forward_gated(batch, mask, nullptr);
    Tensor q = ops::softmax(nullptr, gated_logits);
    return ops::kl_divergence(nullptr, p, q).item();
}

Tensor kl_objective_grad(const TransformerLM& model, const Tensor& start, const GateParams& gp,
                         const Batch& batch, Tape& tape) {
    Tensor dense_logits = model.forward(batch, nullptr);
    Tensor p = ops::softmax(nullptr, dense_logits);
    std::vector<Tensor> gates = soft_mask_on_tape(&tape, start, gp);
    Tensor gated_logits = model.forward_gated(batch, gates, &tape);
    Tensor q = ops::softmax(&tape, gated_logits);
    return ops::kl_divergence(&tape, p, q);
}

CalibResult optimize_start(const TransformerLM& model, std::span<const Batch> calib,
                           const CalibConfig& cfg) {
    cfg.validate();
    if (calib.empty()) throw DataError("calibration set is empty");
    int L = model.num_layers();
    if (cfg.window_len > L) {
        throw ConfigError("calibration: window of " + std::to_string(cfg.window_len) +
                          " exceeds " + std::to_string(L) + " layers");
    }
    GateParams gp;
    gp.window_len = cfg.window_len;
    gp.sharpness = cfg.sharpness;
    gp.num_layers = L;

    double a = cfg.start_init < 0.0 ? static_cast<double>(L - 1) : cfg.start_init;
    a = clamp_start(a, cfg.window_len, L);

    CalibResult result;
    result.trajectory.reserve(calib.size() * static_cast<size_t>(cfg.epochs));
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const Batch& batch : calib) {
            gp.start = a;
            Tape tape;
            Tensor start = Tensor::scalar(static_cast<Real>(a), true);
            Tensor loss = kl_objective_grad(model, start, gp, batch, tape);
            double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NumericError("calibration diverged at step " + std::to_string(step + 1) +
                                   "; last valid start=" + std::to_string(a));
            }
            tape.backward(loss);
            double g = static_cast<double>(tape.grad_of(start)[0]);
            a = clamp_start(a - cfg.learning_rate * g, cfg.window_len, L);
            ++step;
            result.trajectory.push_back(CalibRecord{step, a, lv});
        }
    }
    result.final_start = a;
    gp.start = a;
    result.window = round_window(gp);
    return result;
}

}  // namespace clp
