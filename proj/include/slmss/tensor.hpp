// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Minimal dense-tensor core with reverse-mode autodiff on a dynamic tape.
// Row-major storage, trailing-dimension broadcasting, double by default.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slmss/common.hpp"
#include "slmss/rng.hpp"

namespace slmss {

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<real> data;
    std::vector<real> grad;  // lazily allocated
    bool requires_grad = false;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(numel_of(t.impl_->shape), real(0));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(std::vector<int> shape, real v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<real> values, bool requires_grad = false) {
        if (numel_of(shape) != values.size())
            throw ShapeError("tensor init: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(real v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, real std_dev = real(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.data()) v = static_cast<real>(rng.normal()) * std_dev;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const {
        const auto& s = impl_->shape;
        return s[i < 0 ? s.size() + i : static_cast<size_t>(i)];
    }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    size_t numel() const { return impl_->data.size(); }

    std::vector<real>& data() { return impl_->data; }
    const std::vector<real>& data() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }

    std::vector<real>& grad() {
        ensure_grad();
        return impl_->grad;
    }
    const std::vector<real>& grad_ref() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
    }

    real item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    // Identity of the underlying storage; used by weight-tying checks.
    const void* storage_id() const { return impl_.get(); }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape. One Graph per forward pass; ops record onto the innermost active
// graph of the current thread. Backward visits nodes once, in reverse
// creation order; leaf grads accumulate additively across uses.
// ---------------------------------------------------------------------------

class Graph {
public:
    Graph() : prev_(tls()) { tls() = this; }
    ~Graph() { tls() = prev_; }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* current() { return tls(); }

    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }

    void backward(Tensor loss) {
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad()) throw NumericError("backward: loss does not require grad");
        loss.ensure_grad();
        loss.grad()[0] = real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    static Graph*& tls() {
        thread_local Graph* g = nullptr;
        return g;
    }
    std::vector<std::function<void()>> nodes_;
    Graph* prev_;
};

namespace detail {

inline bool recording(const Tensor& a) { return Graph::current() && a.requires_grad(); }
inline bool recording(const Tensor& a, const Tensor& b) {
    return Graph::current() && (a.requires_grad() || b.requires_grad());
}

// --------------------------- raw matmul kernels ---------------------------
// ikj order; the compiler vectorizes the inner j loop. acc=false zeroes C.

inline void mm_nn(const real* __restrict__ a, const real* __restrict__ b, real* __restrict__ c,
                  int n, int k, int p, bool acc) {
    for (int i = 0; i < n; ++i) {
        real* ci = c + static_cast<size_t>(i) * p;
        if (!acc)
            for (int j = 0; j < p; ++j) ci[j] = real(0);
        const real* ai = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const real av = ai[kk];
            const real* bk = b + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) ci[j] += av * bk[j];
        }
    }
}

// C = A · Bᵀ with B stored [p,k]; row-by-row dot products.
inline void mm_nt(const real* __restrict__ a, const real* __restrict__ b, real* __restrict__ c,
                  int n, int k, int p, bool acc) {
    for (int i = 0; i < n; ++i) {
        const real* ai = a + static_cast<size_t>(i) * k;
        real* ci = c + static_cast<size_t>(i) * p;
        for (int j = 0; j < p; ++j) {
            const real* bj = b + static_cast<size_t>(j) * k;
            real s = 0;
            for (int kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
            ci[j] = acc ? ci[j] + s : s;
        }
    }
}

// C = Aᵀ · B with A stored [n,k], B [n,p], C [k,p]; rank-1 updates.
inline void mm_tn(const real* __restrict__ a, const real* __restrict__ b, real* __restrict__ c,
                  int n, int k, int p, bool acc) {
    if (!acc) std::fill(c, c + static_cast<size_t>(k) * p, real(0));
    for (int i = 0; i < n; ++i) {
        const real* ai = a + static_cast<size_t>(i) * k;
        const real* bi = b + static_cast<size_t>(i) * p;
        for (int kk = 0; kk < k; ++kk) {
            const real av = ai[kk];
            real* ck = c + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) ck[j] += av * bi[j];
        }
    }
}

// --------------------------- broadcasting helpers ---------------------------

inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b,
                                        const char* op) {
    const size_t r = std::max(a.size(), b.size());
    std::vector<int> out(r);
    for (size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` aligned to `out` (0 where broadcast).
inline std::vector<size_t> aligned_strides(const std::vector<int>& shape, const std::vector<int>& out) {
    std::vector<size_t> st(out.size(), 0);
    size_t s = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        const size_t oi = out.size() - shape.size() + i;
        st[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : s;
        s *= static_cast<size_t>(shape[i]);
    }
    return st;
}

// Odometer walk over `out_shape`, calling fn(out_index, a_index, b_index).
template <typename F>
inline void for_broadcast(const std::vector<int>& out_shape, const std::vector<size_t>& sa,
                          const std::vector<size_t>& sb, F&& fn) {
    const size_t n = numel_of(out_shape);
    const size_t r = out_shape.size();
    std::vector<int> idx(r, 0);
    size_t ia = 0, ib = 0;
    for (size_t lin = 0; lin < n; ++lin) {
        fn(lin, ia, ib);
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            ia += sa[d];
            ib += sb[d];
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdFn, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdFn fwd, BwdA bwd_a, BwdB bwd_b) {
    const auto out_shape = broadcast_shape(a.shape(), b.shape(), name);
    Tensor out = Tensor::zeros(out_shape);
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i], bd[i]);
    } else {
        const auto sa = aligned_strides(a.shape(), out_shape);
        const auto sb = aligned_strides(b.shape(), out_shape);
        for_broadcast(out_shape, sa, sb,
                      [&](size_t o, size_t ia, size_t ib) { od[o] = fwd(ad[ia], bd[ib]); });
    }
    if (recording(a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        std::vector<int> osh = out_shape;
        Graph::current()->record([ac, bc, oc, osh, bwd_a, bwd_b]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            const bool same = ac.shape() == bc.shape();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                if (same) {
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd_a(g[i], ac.data()[i], bc.data()[i]);
                } else {
                    const auto sa = aligned_strides(ac.shape(), osh);
                    const auto sb = aligned_strides(bc.shape(), osh);
                    for_broadcast(osh, sa, sb, [&](size_t o, size_t ia, size_t ib) {
                        ga[ia] += bwd_a(g[o], ac.data()[ia], bc.data()[ib]);
                    });
                }
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                if (same) {
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += bwd_b(g[i], ac.data()[i], bc.data()[i]);
                } else {
                    const auto sa = aligned_strides(ac.shape(), osh);
                    const auto sb = aligned_strides(bc.shape(), osh);
                    for_broadcast(osh, sa, sb, [&](size_t o, size_t ia, size_t ib) {
                        gb[ib] += bwd_b(g[o], ac.data()[ia], bc.data()[ib]);
                    });
                }
            }
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](real x, real y) { return x + y; },
        [](real g, real, real) { return g; }, [](real g, real, real) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](real g, real, real) { return g; }, [](real g, real, real) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](real g, real, real y) { return g * y; }, [](real g, real x, real) { return g * x; });
}

inline Tensor scale(const Tensor& a, real c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    auto& od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
    if (detail::recording(a)) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Graph::current()->record([ac, oc, c]() mutable {
            if (!oc.has_grad()) return;
            auto& ga = ac.grad();
            const auto& g = oc.grad_ref();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul: a[..,n,k] · b[..,k,p], batch dims broadcast.
// matmul_nt: a[..,n,k] · b[..,p,k]ᵀ (saves an explicit transpose for scores
// and tied output projections).
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor batched_mm(const Tensor& a, const Tensor& b, bool b_transposed, const char* name) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError(std::string(name) + ": operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int n = a.dim(-2), k = a.dim(-1);
    const int bk = b_transposed ? b.dim(-1) : b.dim(-2);
    const int p = b_transposed ? b.dim(-2) : b.dim(-1);
    if (k != bk)
        throw ShapeError(std::string(name) + ": inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

    std::vector<int> abatch(a.shape().begin(), a.shape().end() - 2);
    std::vector<int> bbatch(b.shape().begin(), b.shape().end() - 2);
    const auto batch = broadcast_shape(abatch, bbatch, name);
    std::vector<int> out_shape = batch;
    out_shape.push_back(n);
    out_shape.push_back(p);

    Tensor out = Tensor::zeros(out_shape);
    const size_t cells = numel_of(batch);
    const size_t a_cell = static_cast<size_t>(n) * k;
    const size_t b_cell = static_cast<size_t>(bk) * p;  // same count either layout
    const size_t o_cell = static_cast<size_t>(n) * p;

    // Per-cell offsets honoring batch broadcast.
    const auto sa = aligned_strides(abatch, batch);
    const auto sb = aligned_strides(bbatch, batch);
    std::vector<size_t> aoff(cells), boff(cells);
    {
        std::vector<int> idx(batch.size(), 0);
        size_t ia = 0, ib = 0;
        for (size_t c = 0; c < cells; ++c) {
            aoff[c] = ia * a_cell;
            boff[c] = ib * b_cell;
            for (int d = static_cast<int>(batch.size()) - 1; d >= 0; --d) {
                ia += sa[d];
                ib += sb[d];
                if (++idx[d] < batch[d]) break;
                idx[d] = 0;
                ia -= sa[d] * batch[d];
                ib -= sb[d] * batch[d];
            }
        }
    }

    for (size_t c = 0; c < cells; ++c) {
        const real* ap = a.data().data() + aoff[c];
        const real* bp = b.data().data() + boff[c];
        real* op = out.data().data() + c * o_cell;
        if (b_transposed)
            mm_nt(ap, bp, op, n, k, p, false);
        else
            mm_nn(ap, bp, op, n, k, p, false);
    }

    if (recording(a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Graph::current()->record([ac, bc, oc, aoff, boff, n, k, p, o_cell, b_transposed]() mutable {
            if (!oc.has_grad()) return;
            const real* g = oc.grad_ref().data();
            const size_t cells = aoff.size();
            if (ac.requires_grad()) {
                real* ga = ac.grad().data();
                for (size_t c = 0; c < cells; ++c) {
                    // dA = dC·Bᵀ (nn-layout B) or dC·B (nt-layout B)
                    if (b_transposed)
                        mm_nn(g + c * o_cell, bc.data().data() + boff[c], ga + aoff[c], n, p, k, true);
                    else
                        mm_nt(g + c * o_cell, bc.data().data() + boff[c], ga + aoff[c], n, p, k, true);
                }
            }
            if (bc.requires_grad()) {
                real* gb = bc.grad().data();
                for (size_t c = 0; c < cells; ++c) {
                    // dB = Aᵀ·dC (nn layout) or dCᵀ·A (nt layout)
                    if (b_transposed)
                        mm_tn(g + c * o_cell, ac.data().data() + aoff[c], gb + boff[c], n, p, k, true);
                    else
                        mm_tn(ac.data().data() + aoff[c], g + c * o_cell, gb + boff[c], n, k, p, true);
                }
            }
        });
    }
    return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) { return detail::batched_mm(a, b, false, "matmul"); }
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) { return detail::batched_mm(a, b, true, "matmul_nt"); }

// ---------------------------------------------------------------------------
// softmax along `axis` (negative counts from the end), max-subtracted.
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis = -1) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    const int n = x.dim(axis);
    size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= static_cast<size_t>(x.dim(i));
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));

    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * n * inner + in;
            real mx = -std::numeric_limits<real>::infinity();
            for (int i = 0; i < n; ++i) mx = std::max(mx, xd[base + i * inner]);
            real sum = 0;
            for (int i = 0; i < n; ++i) {
                const real e = std::exp(xd[base + i * inner] - mx);
                od[base + i * inner] = e;
                sum += e;
            }
            if (std::isnan(sum)) throw NumericError("softmax: NaN input");
            const real inv = real(1) / sum;
            for (int i = 0; i < n; ++i) od[base + i * inner] *= inv;
        }
    }
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc, n, inner, outer]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            const auto& y = oc.data();
            auto& gx = xc.grad();
            for (size_t o = 0; o < outer; ++o)
                for (size_t in = 0; in < inner; ++in) {
                    const size_t base = o * n * inner + in;
                    real dot = 0;
                    for (int i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                    for (int i = 0; i < n; ++i) {
                        const size_t k = base + i * inner;
                        gx[k] += y[k] * (g[k] - dot);
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension; gain/bias shaped [d].
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = real(1e-5)) {
    const int d = x.dim(-1);
    if (gain.numel() != static_cast<size_t>(d) || bias.numel() != static_cast<size_t>(d))
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
    const size_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<real>>(x.numel());
    auto inv_std = std::make_shared<std::vector<real>>(rows);
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t ro = 0; ro < rows; ++ro) {
        const size_t base = ro * d;
        real mean = 0;
        for (int i = 0; i < d; ++i) mean += xd[base + i];
        mean /= d;
        real var = 0;
        for (int i = 0; i < d; ++i) {
            const real c = xd[base + i] - mean;
            var += c * c;
        }
        var /= d;
        const real is = real(1) / std::sqrt(var + eps);
        (*inv_std)[ro] = is;
        for (int i = 0; i < d; ++i) {
            const real xh = (xd[base + i] - mean) * is;
            (*xhat)[base + i] = xh;
            od[base + i] = xh * gain.data()[i] + bias.data()[i];
        }
    }
    const bool rec = Graph::current() && (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    if (rec) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        Graph::current()->record([xc, gc, bc, oc, xhat, inv_std, d, rows]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            for (size_t ro = 0; ro < rows; ++ro) {
                const size_t base = ro * d;
                if (gc.requires_grad()) {
                    auto& gg = gc.grad();
                    for (int i = 0; i < d; ++i) gg[i] += g[base + i] * (*xhat)[base + i];
                }
                if (bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (int i = 0; i < d; ++i) gb[i] += g[base + i];
                }
                if (xc.requires_grad()) {
                    auto& gx = xc.grad();
                    real mean_dxh = 0, mean_dxh_xh = 0;
                    for (int i = 0; i < d; ++i) {
                        const real dxh = g[base + i] * gc.data()[i];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * (*xhat)[base + i];
                    }
                    mean_dxh /= d;
                    mean_dxh_xh /= d;
                    const real is = (*inv_std)[ro];
                    for (int i = 0; i < d; ++i) {
                        const real dxh = g[base + i] * gc.data()[i];
                        gx[base + i] += is * (dxh - mean_dxh - (*xhat)[base + i] * mean_dxh_xh);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations, dropout
// ---------------------------------------------------------------------------

inline Tensor gelu(const Tensor& x) {
    constexpr real inv_sqrt2 = real(0.70710678118654752440);
    constexpr real inv_sqrt2pi = real(0.39894228040143267794);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = real(0.5) * xd[i] * (real(1) + std::erf(xd[i] * inv_sqrt2));
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gx = xc.grad();
            const auto& xd = xc.data();
            for (size_t i = 0; i < g.size(); ++i) {
                const real cdf = real(0.5) * (real(1) + std::erf(xd[i] * inv_sqrt2));
                const real pdf = inv_sqrt2pi * std::exp(real(-0.5) * xd[i] * xd[i]);
                gx[i] += g[i] * (cdf + xd[i] * pdf);
            }
        });
    }
    return out;
}

inline Tensor dropout(const Tensor& x, real p, Rng& rng) {
    if (p <= real(0)) return x;
    if (p >= real(1)) throw NumericError("dropout: p must be < 1");
    auto mask = std::make_shared<std::vector<real>>(x.numel());
    const real keep = real(1) - p;
    const real scl = real(1) / keep;
    for (auto& m : *mask) m = (rng.uniform() < keep) ? scl : real(0);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * (*mask)[i];
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc, mask]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gx = xc.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup, row slicing
// ---------------------------------------------------------------------------

inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw DataError("embedding: token id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (size_t t = 0; t < ids.size(); ++t)
        std::memcpy(out.data().data() + t * d, table.data().data() + static_cast<size_t>(ids[t]) * d,
                    sizeof(real) * d);
    if (detail::recording(table)) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        auto idc = std::make_shared<std::vector<int>>(ids);
        Graph::current()->record([tc, oc, idc, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gt = tc.grad();
            for (size_t t = 0; t < idc->size(); ++t) {
                real* dst = gt.data() + static_cast<size_t>((*idc)[t]) * d;
                const real* src = g.data() + t * d;
                for (int i = 0; i < d; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// Slice `len` rows starting at `start` along the first axis.
inline Tensor slice_rows(const Tensor& x, int start, int len) {
    if (x.rank() < 1) throw ShapeError("slice_rows: rank-0 input");
    const int rows = x.dim(0);
    if (start < 0 || len < 0 || start + len > rows)
        throw ShapeError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of " + std::to_string(rows) + " rows");
    const size_t inner = x.numel() / rows;
    std::vector<int> oshape = x.shape();
    oshape[0] = len;
    Tensor out = Tensor::zeros(oshape);
    std::memcpy(out.data().data(), x.data().data() + start * inner, sizeof(real) * len * inner);
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc, start, inner]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gx = xc.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[start * inner + i] += g[i];
        });
    }
    return out;
}

// [T, h*dh] -> [h, T, dh]
inline Tensor split_heads(const Tensor& x, int heads) {
    if (x.rank() != 2 || x.dim(1) % heads != 0)
        throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " + std::to_string(heads) +
                         " heads");
    const int t = x.dim(0), d = x.dim(1), dh = d / heads;
    Tensor out = Tensor::zeros({heads, t, dh});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < t; ++i)
            std::memcpy(od.data() + (static_cast<size_t>(h) * t + i) * dh, xd.data() + static_cast<size_t>(i) * d + h * dh,
                        sizeof(real) * dh);
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc, heads, t, d, dh]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gx = xc.grad();
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < t; ++i) {
                    const real* src = g.data() + (static_cast<size_t>(h) * t + i) * dh;
                    real* dst = gx.data() + static_cast<size_t>(i) * d + h * dh;
                    for (int c = 0; c < dh; ++c) dst[c] += src[c];
                }
        });
    }
    return out;
}

// [h, T, dh] -> [T, h*dh]
inline Tensor merge_heads(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
    const int heads = x.dim(0), t = x.dim(1), dh = x.dim(2), d = heads * dh;
    Tensor out = Tensor::zeros({t, d});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < t; ++i)
            std::memcpy(od.data() + static_cast<size_t>(i) * d + h * dh, xd.data() + (static_cast<size_t>(h) * t + i) * dh,
                        sizeof(real) * dh);
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc, heads, t, d, dh]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad_ref();
            auto& gx = xc.grad();
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < t; ++i) {
                    const real* src = g.data() + static_cast<size_t>(i) * d + h * dh;
                    real* dst = gx.data() + (static_cast<size_t>(h) * t + i) * dh;
                    for (int c = 0; c < dh; ++c) dst[c] += src[c];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    real s = 0;
    for (real v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::recording(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Graph::current()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const real g = oc.grad_ref()[0];
            auto& gx = xc.grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), real(1) / static_cast<real>(x.numel())); }

// Mean squared difference; shapes must match exactly.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const size_t n = a.numel();
    real s = 0;
    for (size_t i = 0; i < n; ++i) {
        const real d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<real>(n));
    if (detail::recording(a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Graph::current()->record([ac, bc, oc, n]() mutable {
            if (!oc.has_grad()) return;
            const real g = oc.grad_ref()[0] * real(2) / static_cast<real>(n);
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (size_t i = 0; i < n; ++i) ga[i] += g * (ac.data()[i] - bc.data()[i]);
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (size_t i = 0; i < n; ++i) gb[i] -= g * (ac.data()[i] - bc.data()[i]);
            }
        });
    }
    return out;
}

// Mean negative log-softmax over positions whose target != ignore_index.
// logits [T, V]; empty effective set gives loss 0 with zero gradient.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -100) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [T,V], got " + shape_str(logits.shape()));
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(t) +
                         " positions");
    for (int tg : targets)
        if (tg != ignore_index && (tg < 0 || tg >= v))
            throw DataError("cross_entropy: target " + std::to_string(tg) + " out of range [0," + std::to_string(v) + ")");

    auto probs = std::make_shared<std::vector<real>>(logits.numel());
    const auto& xd = logits.data();
    real loss = 0;
    int count = 0;
    for (int i = 0; i < t; ++i) {
        const size_t base = static_cast<size_t>(i) * v;
        real mx = -std::numeric_limits<real>::infinity();
        for (int j = 0; j < v; ++j) mx = std::max(mx, xd[base + j]);
        real sum = 0;
        for (int j = 0; j < v; ++j) {
            const real e = std::exp(xd[base + j] - mx);
            (*probs)[base + j] = e;
            sum += e;
        }
        if (std::isnan(sum)) throw NumericError("cross_entropy: NaN logits");
        const real inv = real(1) / sum;
        for (int j = 0; j < v; ++j) (*probs)[base + j] *= inv;
        if (targets[i] != ignore_index) {
            loss -= std::log(std::max((*probs)[base + targets[i]], std::numeric_limits<real>::min()));
            ++count;
        }
    }
    Tensor out = Tensor::scalar(count > 0 ? loss / count : real(0));
    if (detail::recording(logits)) {
        out.set_requires_grad(true);
        Tensor lc = logits, oc = out;
        auto tgt = std::make_shared<std::vector<int>>(targets);
        Graph::current()->record([lc, oc, probs, tgt, t, v, count, ignore_index]() mutable {
            if (!oc.has_grad() || count == 0) return;
            const real g = oc.grad_ref()[0] / static_cast<real>(count);
            auto& gx = lc.grad();
            for (int i = 0; i < t; ++i) {
                if ((*tgt)[i] == ignore_index) continue;
                const size_t base = static_cast<size_t>(i) * v;
                for (int j = 0; j < v; ++j) gx[base + j] += g * (*probs)[base + j];
                gx[base + (*tgt)[i]] -= g;
            }
        });
    }
    return out;
}

}  // namespace slmss
