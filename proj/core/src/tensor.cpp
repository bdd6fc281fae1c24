#include "clp/tensor.hpp"

#include <sstream>

namespace clp {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ContractError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto s = std::make_shared<Storage>();
    int64_t n = shape_numel(shape);
    s->shape = std::move(shape);
    s->v.assign(static_cast<size_t>(n), Real(0));
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (Real& x : t.values_mut()) x = value;
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<Real> values, bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
        throw ContractError("from_values: " + std::to_string(values.size()) +
                            " values for shape " + shape_str(shape));
    }
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->v = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return from_values({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!s_) throw ContractError("shape() on undefined tensor");
    return s_->shape;
}

int64_t Tensor::dim(int64_t i) const {
    const Shape& sh = shape();
    if (i < 0) i += static_cast<int64_t>(sh.size());
    if (i < 0 || i >= static_cast<int64_t>(sh.size())) {
        throw ContractError("dim index out of range for shape " + shape_str(sh));
    }
    return sh[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const {
    if (!s_) throw ContractError("numel() on undefined tensor");
    return static_cast<int64_t>(s_->v.size());
}

std::span<const Real> Tensor::values() const {
    if (!s_) throw ContractError("values() on undefined tensor");
    return {s_->v.data(), s_->v.size()};
}

std::span<Real> Tensor::values_mut() {
    if (!s_) throw ContractError("values_mut() on undefined tensor");
    return {s_->v.data(), s_->v.size()};
}

Real Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a single-element tensor, got shape " +
                            shape_str(shape()));
    }
    return s_->v[0];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!s_) throw ContractError("set_requires_grad() on undefined tensor");
    s_->requires_grad = v;
}

Tensor Tensor::clone() const {
    if (!s_) return Tensor();
    auto s = std::make_shared<Storage>(*s_);
    return Tensor(std::move(s));
}

void Tape::record(const char* op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
    if (consumed_) {
        throw ContractError(std::string("tape already consumed; reset() before recording '") +
                            op + "'");
    }
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw ContractError("backward() on a consumed tape; reset() first");
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss");
    }
    consumed_ = true;
    grad_buffer(loss)[0] = Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (find_grad(it->output) == nullptr) continue;  // op not upstream of loss
        it->backward(*this);
    }
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    consumed_ = false;
}

const std::vector<Real>* Tape::find_grad(const Tensor& t) const {
    if (!t.defined()) throw ContractError("find_grad() on undefined tensor");
    auto it = grads_.find(t.key());
    return it == grads_.end() ? nullptr : &it->second;
}

std::vector<Real> Tape::grad_of(const Tensor& t) const {
    const std::vector<Real>* g = find_grad(t);
    if (g) return *g;
    return std::vector<Real>(static_cast<size_t>(t.numel()), Real(0));
}

std::vector<Real>& Tape::grad_buffer(const Tensor& t) {
    if (!t.defined()) throw ContractError("grad_buffer() on undefined tensor");
    auto [it, inserted] = grads_.try_emplace(t.key());
    if (inserted) it->second.assign(static_cast<size_t>(t.numel()), Real(0));
    return it->second;
}

}  // namespace clp
