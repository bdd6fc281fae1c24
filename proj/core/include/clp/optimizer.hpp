#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clp/tensor.hpp"

namespace clp {

enum class OptKind { sgd, adamw };

struct OptimizerConfig {
    OptKind kind = OptKind::sgd;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;  // decoupled; applied by adamw only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First-order optimizer over an explicit parameter list. Adam moments are
// held per parameter, aligned by index with the list the optimizer was
// constructed from; steps are rejected wholesale if any gradient is
// non-finite, so a failed step never half-updates the model.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::span<const Tensor> params);

    // grads[i] pairs with params[i]; sizes must match exactly.
    void step(std::span<Tensor> params, const std::vector<std::vector<Real>>& grads);

    int64_t step_count() const { return steps_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::vector<int64_t> sizes_;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    int64_t steps_ = 0;
};

}  // namespace clp
