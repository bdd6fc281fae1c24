#include "clp/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

namespace clp::ops {

namespace {

using MatRM = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

bool track(Tape* tape, std::initializer_list<const Tensor*> ins) {
    if (!tape) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rows when the tensor is viewed as a matrix over its last axis.
int64_t rows_over_last(const Tensor& t) {
    int64_t last = t.dim(-1);
    require(last > 0, "empty last axis");
    return t.numel() / last;
}

Real stable_sigmoid(Real x) {
    if (x >= Real(0)) {
        return Real(1) / (Real(1) + std::exp(-x));
    }
    Real e = std::exp(x);
    return e / (Real(1) + e);
}

constexpr Real kInvSqrt2 = Real(0.70710678118654752440);
constexpr Real kInvSqrt2Pi = Real(0.39894228040143267794);

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record("add", {a, b}, out, [a, b, out](Tape& t) {
            const auto& go = *t.find_grad(out);
            if (a.requires_grad()) {
                auto& ga = t.grad_buffer(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = t.grad_buffer(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record("mul", {a, b}, out, [a, b, out](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                auto& ga = t.grad_buffer(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto& gb = t.grad_buffer(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
            }
        });
    }
    return out;
}

Tensor affine(Tape* tape, const Tensor& x, Real scale, Real shift) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = scale * xv[i] + shift;
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record("affine", {x}, out, [x, out, scale](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += scale * go[i];
        });
    }
    return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record("sigmoid", {x}, out, [x, out](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto& gx = t.grad_buffer(x);
            auto ov = out.values();
            for (size_t i = 0; i < go.size(); ++i) {
                gx[i] += go[i] * ov[i] * (Real(1) - ov[i]);
            }
        });
    }
    return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = Real(0.5) * xv[i] * (Real(1) + std::erf(xv[i] * kInvSqrt2));
    }
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record("gelu", {x}, out, [x, out](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto& gx = t.grad_buffer(x);
            auto xv = x.values();
            for (size_t i = 0; i < go.size(); ++i) {
                Real cdf = Real(0.5) * (Real(1) + std::erf(xv[i] * kInvSqrt2));
                Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * xv[i] * xv[i]);
                gx[i] += go[i] * (cdf + xv[i] * pdf);
            }
        });
    }
    return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    require(a.ndim() >= 1, "matmul: lhs must have at least 1 axis");
    require(b.ndim() == 2, "matmul: rhs must be 2-D, got " + shape_str(b.shape()));
    int64_t k = a.dim(-1);
    require(k == b.dim(0), "matmul: inner dims " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
    require(k > 0 && b.dim(1) > 0, "matmul: empty inner/output axis");
    int64_t n = b.dim(1);
    int64_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out = Tensor::zeros(out_shape);
    {
        MapC am(a.values().data(), m, k);
        MapC bm(b.values().data(), k, n);
        MapM om(out.values_mut().data(), m, n);
        om.noalias() = am * bm;
    }
    if (track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record("matmul", {a, b}, out, [a, b, out, m, k, n](Tape& t) {
            MapC go(t.find_grad(out)->data(), m, n);
            if (a.requires_grad()) {
                MapM ga(t.grad_buffer(a).data(), m, k);
                MapC bm(b.values().data(), k, n);
                ga.noalias() += go * bm.transpose();
            }
            if (b.requires_grad()) {
                MapM gb(t.grad_buffer(b).data(), k, n);
                MapC am(a.values().data(), m, k);
                gb.noalias() += am.transpose() * go;
            }
        });
    }
    return out;
}

Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.ndim() >= 1, "linear: input must have at least 1 axis");
    require(w.ndim() == 2, "linear: weight must be 2-D");
    require(b.ndim() == 1, "linear: bias must be 1-D");
    int64_t in = x.dim(-1);
    int64_t outf = w.dim(1);
    require(in == w.dim(0), "linear: input " + shape_str(x.shape()) + " vs weight " +
                                shape_str(w.shape()));
    require(outf == b.dim(0), "linear: weight " + shape_str(w.shape()) + " vs bias " +
                                  shape_str(b.shape()));
    int64_t m = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    Tensor out = Tensor::zeros(out_shape);
    {
        MapC xm(x.values().data(), m, in);
        MapC wm(w.values().data(), in, outf);
        MapC bm(b.values().data(), 1, outf);
        MapM om(out.values_mut().data(), m, outf);
        om.noalias() = xm * wm;
        om.rowwise() += bm.row(0);
    }
    if (track(tape, {&x, &w, &b})) {
        out.set_requires_grad(true);
        tape->record("linear", {x, w, b}, out, [x, w, b, out, m, in, outf](Tape& t) {
            MapC go(t.find_grad(out)->data(), m, outf);
            if (x.requires_grad()) {
                MapM gx(t.grad_buffer(x).data(), m, in);
                MapC wm(w.values().data(), in, outf);
                gx.noalias() += go * wm.transpose();
            }
            if (w.requires_grad()) {
                MapM gw(t.grad_buffer(w).data(), in, outf);
                MapC xm(x.values().data(), m, in);
                gw.noalias() += xm.transpose() * go;
            }
            if (b.requires_grad()) {
                MapM gb(t.grad_buffer(b).data(), 1, outf);
                gb.row(0) += go.colwise().sum();
            }
        });
    }
    return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
    require(x.ndim() >= 1, "layer_norm: input must have at least 1 axis");
    int64_t d = x.dim(-1);
    require(gain.ndim() == 1 && gain.dim(0) == d, "layer_norm: gain must be [" +
                                                      std::to_string(d) + "]");
    require(bias.ndim() == 1 && bias.dim(0) == d, "layer_norm: bias must be [" +
                                                      std::to_string(d) + "]");
    int64_t rows = rows_over_last(x);
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    auto ov = out.values_mut();
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = xv.data() + r * d;
        Real* orow = ov.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double dev = xr[j] - mean;
            var += dev * dev;
        }
        var /= static_cast<double>(d);
        Real inv = Real(1) / std::sqrt(static_cast<Real>(var) + eps);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = (xr[j] - static_cast<Real>(mean)) * inv * gv[j] + bv[j];
        }
    }
    if (track(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        tape->record("layer_norm", {x, gain, bias}, out,
                     [x, gain, bias, out, rows, d, eps](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto xv = x.values();
            auto gv = gain.values();
            std::vector<Real>* gx = x.requires_grad() ? &t.grad_buffer(x) : nullptr;
            std::vector<Real>* gg = gain.requires_grad() ? &t.grad_buffer(gain) : nullptr;
            std::vector<Real>* gb = bias.requires_grad() ? &t.grad_buffer(bias) : nullptr;
            std::vector<Real> xhat(static_cast<size_t>(d));
            for (int64_t r = 0; r < rows; ++r) {
                const Real* xr = xv.data() + r * d;
                const Real* gor = go.data() + r * d;
                double mean = 0.0;
                for (int64_t j = 0; j < d; ++j) mean += xr[j];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    double dev = xr[j] - mean;
                    var += dev * dev;
                }
                var /= static_cast<double>(d);
                Real inv = Real(1) / std::sqrt(static_cast<Real>(var) + eps);
                double s1 = 0.0, s2 = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    xhat[j] = (xr[j] - static_cast<Real>(mean)) * inv;
                    Real dyh = gor[j] * gv[j];
                    s1 += dyh;
                    s2 += dyh * xhat[j];
                }
                if (gx) {
                    Real* gxr = gx->data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        Real dyh = gor[j] * gv[j];
                        gxr[j] += inv * (dyh - static_cast<Real>(s1) / d -
                                         xhat[j] * static_cast<Real>(s2) / d);
                    }
                }
                if (gg) {
                    for (int64_t j = 0; j < d; ++j) (*gg)[j] += gor[j] * xhat[j];
                }
                if (gb) {
                    for (int64_t j = 0; j < d; ++j) (*gb)[j] += gor[j];
                }
            }
        });
    }
    return out;
}

Tensor softmax(Tape* tape, const Tensor& x, int64_t axis) {
    int64_t nd = x.ndim();
    require(nd >= 1, "softmax: input must have at least 1 axis");
    if (axis < 0) axis += nd;
    require(axis >= 0 && axis < nd, "softmax: axis out of range");
    for (Real v : x.values()) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    int64_t alen = x.dim(axis);
    int64_t inner = 1;
    for (int64_t i = axis + 1; i < nd; ++i) inner *= x.dim(i);
    int64_t outer = x.numel() / (alen * inner);
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values_mut();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const Real* base = xv.data() + o * alen * inner + in;
            Real* obase = ov.data() + o * alen * inner + in;
            Real mx = base[0];
            for (int64_t j = 1; j < alen; ++j) mx = std::max(mx, base[j * inner]);
            double sum = 0.0;
            for (int64_t j = 0; j < alen; ++j) {
                Real e = std::exp(base[j * inner] - mx);
                obase[j * inner] = e;
                sum += e;
            }
            Real invsum = Real(1) / static_cast<Real>(sum);
            for (int64_t j = 0; j < alen; ++j) obase[j * inner] *= invsum;
        }
    }
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record("softmax", {x}, out, [x, out, outer, alen, inner](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto& gx = t.grad_buffer(x);
            auto ov = out.values();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    int64_t off = o * alen * inner + in;
                    double dot = 0.0;
                    for (int64_t j = 0; j < alen; ++j) {
                        dot += go[off + j * inner] * ov[off + j * inner];
                    }
                    for (int64_t j = 0; j < alen; ++j) {
                        gx[off + j * inner] += ov[off + j * inner] *
                                               (go[off + j * inner] - static_cast<Real>(dot));
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding(Tape* tape, const Tensor& table, std::span<const int32_t> ids, Shape id_shape) {
    require(table.ndim() == 2, "embedding: table must be 2-D");
    int64_t v = table.dim(0);
    int64_t d = table.dim(1);
    require(static_cast<int64_t>(ids.size()) == shape_numel(id_shape),
            "embedding: ids count does not match id_shape " + shape_str(id_shape));
    for (int32_t id : ids) {
        require(id >= 0 && id < v, "embedding: id " + std::to_string(id) +
                                       " outside table of " + std::to_string(v) + " rows");
    }
    Shape out_shape = id_shape;
    out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape);
    auto tv = table.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ids.size(); ++i) {
        const Real* src = tv.data() + static_cast<int64_t>(ids[i]) * d;
        Real* dst = ov.data() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (track(tape, {&table})) {
        out.set_requires_grad(true);
        std::vector<int32_t> ids_copy(ids.begin(), ids.end());
        tape->record("embedding", {table}, out,
                     [table, out, ids_copy = std::move(ids_copy), d](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto& gt = t.grad_buffer(table);
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                Real* dst = gt.data() + static_cast<int64_t>(ids_copy[i]) * d;
                const Real* src = go.data() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor add_seq_bias(Tape* tape, const Tensor& x, const Tensor& rows) {
    require(x.ndim() == 3, "add_seq_bias: input must be [batch, seq, dim]");
    require(rows.ndim() == 2, "add_seq_bias: bias must be [seq, dim]");
    int64_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
    require(rows.dim(0) == s && rows.dim(1) == d,
            "add_seq_bias: bias " + shape_str(rows.shape()) + " vs input " +
                shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto rv = rows.values();
    auto ov = out.values_mut();
    int64_t plane = s * d;
    for (int64_t bi = 0; bi < b; ++bi) {
        const Real* xp = xv.data() + bi * plane;
        Real* op = ov.data() + bi * plane;
        for (int64_t i = 0; i < plane; ++i) op[i] = xp[i] + rv[i];
    }
    if (track(tape, {&x, &rows})) {
        out.set_requires_grad(true);
        tape->record("add_seq_bias", {x, rows}, out, [x, rows, out, b, plane](Tape& t) {
            const auto& go = *t.find_grad(out);
            if (x.requires_grad()) {
                auto& gx = t.grad_buffer(x);
                for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (rows.requires_grad()) {
                auto& gr = t.grad_buffer(rows);
                for (int64_t bi = 0; bi < b; ++bi) {
                    const Real* gop = go.data() + bi * plane;
                    for (int64_t i = 0; i < plane; ++i) gr[i] += gop[i];
                }
            }
        });
    }
    return out;
}

namespace {

// Shared by forward and backward of causal_attention: computes the masked
// row-softmax attention matrix P (entries past the diagonal left at zero).
void causal_probs(const Eigen::Ref<const MatRM>& qh, const Eigen::Ref<const MatRM>& kh,
                  Real scale, MatRM& p) {
    int64_t tlen = qh.rows();
    p.noalias() = qh * kh.transpose();
    p *= scale;
    for (int64_t t = 0; t < tlen; ++t) {
        Real* row = p.row(t).data();
        Real mx = row[0];
        for (int64_t j = 1; j <= t; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j <= t; ++j) {
            Real e = std::exp(row[j] - mx);
            row[j] = e;
            sum += e;
        }
        Real inv = Real(1) / static_cast<Real>(sum);
        for (int64_t j = 0; j <= t; ++j) row[j] *= inv;
        for (int64_t j = t + 1; j < tlen; ++j) row[j] = Real(0);
    }
}

}  // namespace

Tensor causal_attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        int64_t n_heads) {
    require(q.ndim() == 3 && k.ndim() == 3 && v.ndim() == 3,
            "causal_attention: q/k/v must be [batch, seq, dim]");
    check_same_shape("causal_attention", q, k);
    check_same_shape("causal_attention", q, v);
    int64_t b = q.dim(0), tlen = q.dim(1), d = q.dim(2);
    require(n_heads > 0 && d % n_heads == 0,
            "causal_attention: dim " + std::to_string(d) + " not divisible by " +
                std::to_string(n_heads) + " heads");
    int64_t dh = d / n_heads;
    Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    Tensor out = Tensor::zeros(q.shape());
    {
        auto qv = q.values();
        auto kv = k.values();
        auto vv = v.values();
        auto ov = out.values_mut();
        MatRM p(tlen, tlen);
        for (int64_t bi = 0; bi < b; ++bi) {
            MapC qb(qv.data() + bi * tlen * d, tlen, d);
            MapC kb(kv.data() + bi * tlen * d, tlen, d);
            MapC vb(vv.data() + bi * tlen * d, tlen, d);
            MapM ob(ov.data() + bi * tlen * d, tlen, d);
            for (int64_t h = 0; h < n_heads; ++h) {
                causal_probs(qb.middleCols(h * dh, dh), kb.middleCols(h * dh, dh), scale, p);
                ob.middleCols(h * dh, dh).noalias() = p * vb.middleCols(h * dh, dh);
            }
        }
    }
    if (track(tape, {&q, &k, &v})) {
        out.set_requires_grad(true);
        tape->record("causal_attention", {q, k, v}, out,
                     [q, k, v, out, b, tlen, d, n_heads, dh, scale](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto qv = q.values();
            auto kv = k.values();
            auto vv = v.values();
            std::vector<Real>* gq = q.requires_grad() ? &t.grad_buffer(q) : nullptr;
            std::vector<Real>* gk = k.requires_grad() ? &t.grad_buffer(k) : nullptr;
            std::vector<Real>* gv = v.requires_grad() ? &t.grad_buffer(v) : nullptr;
            MatRM p(tlen, tlen), gp(tlen, tlen), gs(tlen, tlen);
            for (int64_t bi = 0; bi < b; ++bi) {
                MapC qb(qv.data() + bi * tlen * d, tlen, d);
                MapC kb(kv.data() + bi * tlen * d, tlen, d);
                MapC vb(vv.data() + bi * tlen * d, tlen, d);
                MapC gob(go.data() + bi * tlen * d, tlen, d);
                for (int64_t h = 0; h < n_heads; ++h) {
                    auto qh = qb.middleCols(h * dh, dh);
                    auto kh = kb.middleCols(h * dh, dh);
                    auto vh = vb.middleCols(h * dh, dh);
                    auto goh = gob.middleCols(h * dh, dh);
                    causal_probs(qh, kh, scale, p);
                    if (gv) {
                        MapM gvb(gv->data() + bi * tlen * d, tlen, d);
                        gvb.middleCols(h * dh, dh).noalias() += p.transpose() * goh;
                    }
                    if (!gq && !gk) continue;
                    gp.noalias() = goh * vh.transpose();
                    for (int64_t ti = 0; ti < tlen; ++ti) {
                        double dot = 0.0;
                        for (int64_t j = 0; j <= ti; ++j) dot += gp(ti, j) * p(ti, j);
                        for (int64_t j = 0; j <= ti; ++j) {
                            gs(ti, j) = p(ti, j) * (gp(ti, j) - static_cast<Real>(dot));
                        }
                        for (int64_t j = ti + 1; j < tlen; ++j) gs(ti, j) = Real(0);
                    }
                    if (gq) {
                        MapM gqb(gq->data() + bi * tlen * d, tlen, d);
                        gqb.middleCols(h * dh, dh).noalias() += scale * (gs * kh);
                    }
                    if (gk) {
                        MapM gkb(gk->data() + bi * tlen * d, tlen, d);
                        gkb.middleCols(h * dh, dh).noalias() += scale * (gs.transpose() * qh);
                    }
                }
            }
        });
    }
    return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int32_t> targets) {
    require(logits.ndim() >= 1, "cross_entropy: logits must have at least 1 axis");
    int64_t v = logits.dim(-1);
    int64_t rows = rows_over_last(logits);
    require(static_cast<int64_t>(targets.size()) == rows,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                std::to_string(rows) + " rows");
    for (int32_t tgt : targets) {
        require(tgt >= 0 && tgt < v, "cross_entropy: target " + std::to_string(tgt) +
                                         " outside vocab of " + std::to_string(v));
    }
    auto lv = logits.values();
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const Real* row = lv.data() + r * v;
        Real mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        double lse = static_cast<double>(mx) + std::log(sum);
        total += lse - static_cast<double>(row[targets[static_cast<size_t>(r)]]);
    }
    Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(rows)));
    if (track(tape, {&logits})) {
        out.set_requires_grad(true);
        std::vector<int32_t> tgt_copy(targets.begin(), targets.end());
        tape->record("cross_entropy", {logits}, out,
                     [logits, out, tgt_copy = std::move(tgt_copy), rows, v](Tape& t) {
            Real g = (*t.find_grad(out))[0] / static_cast<Real>(rows);
            auto& gl = t.grad_buffer(logits);
            auto lv = logits.values();
            for (int64_t r = 0; r < rows; ++r) {
                const Real* row = lv.data() + r * v;
                Real* grow = gl.data() + r * v;
                Real mx = row[0];
                for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                double sum = 0.0;
                for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
                Real inv = Real(1) / static_cast<Real>(sum);
                for (int64_t j = 0; j < v; ++j) {
                    grow[j] += g * std::exp(row[j] - mx) * inv;
                }
                grow[tgt_copy[static_cast<size_t>(r)]] -= g;
            }
        });
    }
    return out;
}

Tensor kl_divergence(Tape* tape, const Tensor& p, const Tensor& q) {
    check_same_shape("kl_divergence", p, q);
    require(p.ndim() >= 1, "kl_divergence: inputs must have at least 1 axis");
    int64_t v = p.dim(-1);
    int64_t rows = rows_over_last(p);
    auto pv = p.values();
    auto qv = q.values();
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const Real* pr = pv.data() + r * v;
        const Real* qr = qv.data() + r * v;
        double row = 0.0;
        for (int64_t j = 0; j < v; ++j) {
            if (pr[j] <= Real(0)) continue;  // 0 * log 0 := 0
            Real qf = std::max(qr[j], kKlFloor);
            row += static_cast<double>(pr[j]) *
                   (std::log(static_cast<double>(pr[j])) - std::log(static_cast<double>(qf)));
        }
        total += row;
    }
    Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(rows)));
    if (track(tape, {&p, &q})) {
        out.set_requires_grad(true);
        tape->record("kl_divergence", {p, q}, out, [p, q, out, rows, v](Tape& t) {
            Real g = (*t.find_grad(out))[0] / static_cast<Real>(rows);
            auto pv = p.values();
            auto qv = q.values();
            std::vector<Real>* gp = p.requires_grad() ? &t.grad_buffer(p) : nullptr;
            std::vector<Real>* gq = q.requires_grad() ? &t.grad_buffer(q) : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const Real* pr = pv.data() + r * v;
                const Real* qr = qv.data() + r * v;
                for (int64_t j = 0; j < v; ++j) {
                    if (pr[j] <= Real(0)) continue;
                    Real qf = std::max(qr[j], kKlFloor);
                    if (gp) {
                        (*gp)[r * v + j] +=
                            g * (std::log(pr[j]) - std::log(qf) + Real(1));
                    }
                    // Below the floor the clamped value is constant in q.
                    if (gq && qr[j] > kKlFloor) {
                        (*gq)[r * v + j] -= g * pr[j] / qr[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor gate_mix(Tape* tape, const Tensor& skip, const Tensor& transformed, const Tensor& gate) {
    check_same_shape("gate_mix", skip, transformed);
    require(gate.numel() == 1, "gate_mix: gate must be a scalar tensor");
    Real m = gate.values()[0];
    Tensor out = Tensor::zeros(skip.shape());
    auto sv = skip.values();
    auto tv = transformed.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = m * tv[i] + (Real(1) - m) * sv[i];
    }
    if (track(tape, {&skip, &transformed, &gate})) {
        out.set_requires_grad(true);
        tape->record("gate_mix", {skip, transformed, gate}, out,
                     [skip, transformed, gate, out, m](Tape& t) {
            const auto& go = *t.find_grad(out);
            auto sv = skip.values();
            auto tv = transformed.values();
            if (gate.requires_grad()) {
                double acc = 0.0;
                for (size_t i = 0; i < go.size(); ++i) {
                    acc += go[i] * (tv[i] - sv[i]);
                }
                t.grad_buffer(gate)[0] += static_cast<Real>(acc);
            }
            if (transformed.requires_grad()) {
                auto& gt = t.grad_buffer(transformed);
                for (size_t i = 0; i < go.size(); ++i) gt[i] += m * go[i];
            }
            if (skip.requires_grad()) {
                auto& gs = t.grad_buffer(skip);
                for (size_t i = 0; i < go.size(); ++i) gs[i] += (Real(1) - m) * go[i];
            }
        });
    }
    return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
    double total = 0.0;
    for (Real v : x.values()) total += v;
    Tensor out = Tensor::scalar(static_cast<Real>(total));
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record("sum", {x}, out, [x, out](Tape& t) {
            Real g = (*t.find_grad(out))[0];
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean(Tape* tape, const Tensor& x) {
    require(x.numel() > 0, "mean: empty tensor");
    double total = 0.0;
    for (Real v : x.values()) total += v;
    Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(x.numel())));
    if (track(tape, {&x})) {
        out.set_requires_grad(true);
        int64_t n = x.numel();
        tape->record("mean", {x}, out, [x, out, n](Tape& t) {
            Real g = (*t.find_grad(out))[0] / static_cast<Real>(n);
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

}  // namespace clp::ops
