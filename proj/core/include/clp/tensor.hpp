#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clp/errors.hpp"

namespace clp {

// Element type for all tensor math. 64-bit by default: the gradient checks
// and bypass-equivalence guarantees in the test suite are stated at
// tolerances (1e-5 .. 1e-9) that single precision cannot reach. Build with
// -DCLP_REAL_FLOAT=ON to trade precision for footprint.
#ifdef CLP_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor with shared value storage. Copies are shallow:
// copying a Tensor aliases the same buffer, which is what lets autodiff
// nodes hold cheap references to their operands. Gradients do NOT live
// here; they are owned by the Tape that recorded the computation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const;
    int64_t ndim() const { return static_cast<int64_t>(shape().size()); }
    int64_t dim(int64_t i) const;
    int64_t numel() const;

    std::span<const Real> values() const;
    std::span<Real> values_mut();
    Real item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v);

    // Identity of the underlying buffer; used as the gradient-map key.
    const void* key() const { return s_.get(); }
    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    // Deep copy with fresh storage.
    Tensor clone() const;

private:
    struct Storage {
        Shape shape;
        std::vector<Real> v;
        bool requires_grad = false;
    };

    explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}

    std::shared_ptr<Storage> s_;
};

// Records the primitive ops of one forward computation and replays them in
// reverse to accumulate gradients. Gradient buffers are keyed by tensor
// storage and owned by the tape, so a parameter that was never recorded
// (frozen, or used only under a null tape) simply has no entry here.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    using BackwardFn = std::function<void(Tape&)>;

    void record(const char* op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the recorded ops once, newest to
    // oldest. The tape is consumed afterwards; call reset() to reuse it.
    void backward(const Tensor& loss);

    void reset();

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Gradient of `t` accumulated by the last backward(); nullptr if this
    // tape never touched that tensor.
    const std::vector<Real>* find_grad(const Tensor& t) const;

    // Like find_grad but materializes zeros for absent entries.
    std::vector<Real> grad_of(const Tensor& t) const;

    // Zero-initialized, create-on-demand buffer. Backward functions use this
    // to accumulate into their inputs' gradients.
    std::vector<Real>& grad_buffer(const Tensor& t);

    bool has_grad(const Tensor& t) const { return find_grad(t) != nullptr; }

private:
    struct Node {
        const char* op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const void*, std::vector<Real>> grads_;
    bool consumed_ = false;
};

}  // namespace clp
