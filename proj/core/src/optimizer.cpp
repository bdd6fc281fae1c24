#include "clp/optimizer.hpp"

#include <cmath>
#include <string>

namespace clp {

Optimizer::Optimizer(OptimizerConfig cfg, std::span<const Tensor> params) : cfg_(cfg) {
    if (cfg_.learning_rate <= 0.0) throw ConfigError("optimizer: learning rate must be > 0");
    if (cfg_.weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be >= 0");
    sizes_.reserve(params.size());
    for (const Tensor& p : params) sizes_.push_back(p.numel());
    if (cfg_.kind == OptKind::adamw) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(static_cast<size_t>(sizes_[i]), Real(0));
            v_[i].assign(static_cast<size_t>(sizes_[i]), Real(0));
        }
    }
}

void Optimizer::step(std::span<Tensor> params, const std::vector<std::vector<Real>>& grads) {
    if (params.size() != sizes_.size() || grads.size() != sizes_.size()) {
        throw ContractError("optimizer: parameter/gradient count differs from construction");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].numel() != sizes_[i] ||
            static_cast<int64_t>(grads[i].size()) != sizes_[i]) {
            throw ContractError("optimizer: size mismatch at parameter #" + std::to_string(i));
        }
        for (Real g : grads[i]) {
            if (!std::isfinite(g)) {
                throw NumericError("optimizer: non-finite gradient at parameter #" +
                                   std::to_string(i) + "; step aborted");
            }
        }
    }
    ++steps_;
    Real lr = static_cast<Real>(cfg_.learning_rate);
    if (cfg_.kind == OptKind::sgd) {
        for (size_t i = 0; i < params.size(); ++i) {
            auto pv = params[i].values_mut();
            const auto& g = grads[i];
            for (size_t j = 0; j < pv.size(); ++j) pv[j] -= lr * g[j];
        }
        return;
    }
    Real b1 = static_cast<Real>(cfg_.beta1);
    Real b2 = static_cast<Real>(cfg_.beta2);
    Real eps = static_cast<Real>(cfg_.eps);
    Real wd = static_cast<Real>(cfg_.weight_decay);
    Real bc1 = Real(1) - static_cast<Real>(std::pow(cfg_.beta1, static_cast<double>(steps_)));
    Real bc2 = Real(1) - static_cast<Real>(std::pow(cfg_.beta2, static_cast<double>(steps_)));
    for (size_t i = 0; i < params.size(); ++i) {
        auto pv = params[i].values_mut();
        const auto& g = grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < pv.size(); ++j) {
            m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
            v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
            Real mhat = m[j] / bc1;
            Real vhat = v[j] / bc2;
            pv[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * pv[j]);
        }
    }
}

}  // namespace clp
