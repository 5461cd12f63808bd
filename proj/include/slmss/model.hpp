// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// The three neural pieces: mixture encoder with multi-layer feature fusion,
// causal AR decoder producing order-0 tokens, and a non-causal NAR model
// predicting each higher order in one pass. Pre-LN transformer blocks, GELU,
// learned positions. One parameter store; checkpoints carry named sections.
//
// Inputs per codebook order i are built as E_i = sum_j Emb(c_j; theta_j) + P
// + task_i, and order-i logits project onto theta_i itself (weight tying), so
// each embedding table doubles as its order's output projection.

#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "slmss/codec.hpp"
#include "slmss/container.hpp"
#include "slmss/optim.hpp"
#include "slmss/sot.hpp"

namespace slmss {

struct ModelConfig {
    int d_model = 128;
    int enc_layers = 4;
    int dec_layers = 4;
    int heads = 4;
    int ff_mult = 4;
    int m = 8;
    int codebook_size = 64;
    int max_len = 256;
    int latent_dim = 32;  // codec frame latent width feeding the encoder
    bool nar_cross_attention = true;

    int vocab_size() const { return codebook_size + 3; }
    int ff_dim() const { return ff_mult * d_model; }
};

struct SeqModel {
    ModelConfig cfg;
    ParamMap params;
    std::set<std::string> sections;  // subset of {"enc","ar","nar"}

    Vocab vocab() const { return Vocab{cfg.codebook_size}; }

    const Tensor& p(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw DataError("model: missing parameter " + name);
        return it->second;
    }
    bool has_section(const std::string& s) const { return sections.count(s) > 0; }
    void need_section(const std::string& s) const {
        if (!has_section(s))
            throw DataError("model: '" + s + "' section not present in this checkpoint");
    }
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

inline void add_ln(ParamMap& p, const std::string& pfx, int d) {
    p[pfx + ".g"] = Tensor::full({d}, real(1), true);
    p[pfx + ".b"] = Tensor::zeros({d}, true);
}

inline void add_attn(ParamMap& p, const std::string& pfx, int d, Rng& rng) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
        p[pfx + "." + w] = Tensor::randn({d, d}, rng, real(0.02), true);
}

inline void add_ff(ParamMap& p, const std::string& pfx, int d, int ff, Rng& rng) {
    p[pfx + ".w1"] = Tensor::randn({d, ff}, rng, real(0.02), true);
    p[pfx + ".b1"] = Tensor::zeros({ff}, true);
    p[pfx + ".w2"] = Tensor::randn({ff, d}, rng, real(0.02), true);
    p[pfx + ".b2"] = Tensor::zeros({d}, true);
}

}  // namespace detail

inline SeqModel make_model(const ModelConfig& cfg, uint64_t seed) {
    SeqModel m;
    m.cfg = cfg;
    m.sections = {"enc", "ar", "nar"};
    Rng rng = Rng::stream(seed, 0x6d6f64656c);
    const int d = cfg.d_model;
    auto& p = m.params;

    p["enc.embed.w"] = Tensor::randn({cfg.latent_dim, d}, rng, real(0.02), true);
    p["enc.embed.b"] = Tensor::zeros({d}, true);
    p["enc.pos"] = Tensor::randn({cfg.max_len, d}, rng, real(0.02), true);
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string pfx = "enc." + std::to_string(l);
        detail::add_ln(p, pfx + ".ln1", d);
        detail::add_attn(p, pfx + ".self", d, rng);
        detail::add_ln(p, pfx + ".ln2", d);
        detail::add_ff(p, pfx + ".ff", d, cfg.ff_dim(), rng);
    }
    p["enc.fusion.w"] = Tensor::zeros({cfg.enc_layers + 1}, true);
    detail::add_ln(p, "enc.fusion_ln", d);

    const int v = cfg.vocab_size();
    p["ar.embed"] = Tensor::randn({v, d}, rng, real(0.02), true);
    p["ar.pos"] = Tensor::randn({cfg.max_len, d}, rng, real(0.02), true);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string pfx = "ar." + std::to_string(l);
        detail::add_ln(p, pfx + ".ln1", d);
        detail::add_attn(p, pfx + ".self", d, rng);
        detail::add_ln(p, pfx + ".ln2", d);
        detail::add_attn(p, pfx + ".cross", d, rng);
        detail::add_ln(p, pfx + ".ln3", d);
        detail::add_ff(p, pfx + ".ff", d, cfg.ff_dim(), rng);
    }
    detail::add_ln(p, "ar.final_ln", d);
    p["ar.out_proj"] = Tensor::randn({v, d}, rng, real(0.02), true);

    for (int j = 0; j < cfg.m; ++j)
        p["nar.embed." + std::to_string(j)] = Tensor::randn({v, d}, rng, real(0.02), true);
    p["nar.pos"] = Tensor::randn({cfg.max_len, d}, rng, real(0.02), true);
    p["nar.task"] = Tensor::randn({cfg.m - 1, d}, rng, real(0.02), true);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string pfx = "nar." + std::to_string(l);
        detail::add_ln(p, pfx + ".ln1", d);
        detail::add_attn(p, pfx + ".self", d, rng);
        detail::add_ln(p, pfx + ".ln2", d);
        detail::add_attn(p, pfx + ".cross", d, rng);
        detail::add_ln(p, pfx + ".ln3", d);
        detail::add_ff(p, pfx + ".ff", d, cfg.ff_dim(), rng);
    }
    detail::add_ln(p, "nar.final_ln", d);
    return m;
}

inline int64_t count_params(const SeqModel& m) {
    int64_t n = 0;
    for (const auto& [name, t] : m.params) n += static_cast<int64_t>(t.numel());
    return n;
}

// ---------------------------------------------------------------------------
// Forward passes (tape-aware; pass dropout 0 / rng nullptr for inference)
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor maybe_dropout(Tensor x, real p, Rng* rng) {
    if (p <= real(0) || rng == nullptr) return x;
    return dropout(x, p, *rng);
}

inline Tensor ln_of(const SeqModel& m, const std::string& pfx, const Tensor& x) {
    return layer_norm(x, m.p(pfx + ".g"), m.p(pfx + ".b"));
}

inline Tensor causal_bias(int t) {
    Tensor b = Tensor::zeros({t, t});
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) b.data()[static_cast<size_t>(i) * t + j] = real(-1e9);
    return b;
}

// Multi-head attention of x over ctx. Row-vector convention throughout.
inline Tensor attention(const SeqModel& m, const std::string& pfx, const Tensor& x, const Tensor& ctx,
                        bool causal, real drop, Rng* rng) {
    const int heads = m.cfg.heads;
    const int dh = m.cfg.d_model / heads;
    Tensor q = split_heads(matmul(x, m.p(pfx + ".wq")), heads);    // [h,T,dh]
    Tensor k = split_heads(matmul(ctx, m.p(pfx + ".wk")), heads);  // [h,S,dh]
    Tensor v = split_heads(matmul(ctx, m.p(pfx + ".wv")), heads);
    Tensor scores = scale(matmul_nt(q, k), real(1) / std::sqrt(static_cast<real>(dh)));  // [h,T,S]
    if (causal) scores = add(scores, causal_bias(x.dim(0)));  // [T,T] broadcasts over heads
    Tensor att = maybe_dropout(softmax(scores, -1), drop, rng);
    return matmul(merge_heads(matmul(att, v)), m.p(pfx + ".wo"));
}

inline Tensor ff_block(const SeqModel& m, const std::string& pfx, const Tensor& x) {
    Tensor h = gelu(add(matmul(x, m.p(pfx + ".w1")), m.p(pfx + ".b1")));
    return add(matmul(h, m.p(pfx + ".w2")), m.p(pfx + ".b2"));
}

inline Tensor pos_slice(const SeqModel& m, const std::string& name, int t) {
    if (t > m.cfg.max_len)
        throw DataError("model: sequence length " + std::to_string(t) + " exceeds max_len " +
                        std::to_string(m.cfg.max_len));
    return slice_rows(m.p(name), 0, t);
}

}  // namespace detail

// H = layer_norm( sum_l softmax(fusion)_l * layer_output_l ), layer 0 being
// the embedded input itself.
inline Tensor encode_mixture(const SeqModel& m, const RvqCodec& codec, const std::vector<real>& mixture,
                             real drop = 0, Rng* rng = nullptr) {
    m.need_section("enc");
    if (mixture.empty()) throw DataError("encode_mixture: empty mixture");
    if (codec.latent_dim != m.cfg.latent_dim)
        throw DataError("encode_mixture: codec latent width " + std::to_string(codec.latent_dim) +
                        " does not match model latent_dim " + std::to_string(m.cfg.latent_dim));
    Tensor lat = analyze_frames(codec, mixture);  // [T, latent], constant
    const int t = lat.dim(0);
    Tensor x = add(add(matmul(lat, m.p("enc.embed.w")), m.p("enc.embed.b")),
                   detail::pos_slice(m, "enc.pos", t));
    x = detail::maybe_dropout(x, drop, rng);
    std::vector<Tensor> outs{x};
    for (int l = 0; l < m.cfg.enc_layers; ++l) {
        const std::string pfx = "enc." + std::to_string(l);
        Tensor n1 = detail::ln_of(m, pfx + ".ln1", x);
        x = add(x, detail::maybe_dropout(detail::attention(m, pfx + ".self", n1, n1, false, drop, rng), drop, rng));
        x = add(x, detail::maybe_dropout(detail::ff_block(m, pfx + ".ff", detail::ln_of(m, pfx + ".ln2", x)),
                                         drop, rng));
        outs.push_back(x);
    }
    Tensor w = softmax(m.p("enc.fusion.w"), -1);  // [L+1]
    Tensor fused;
    for (size_t l = 0; l < outs.size(); ++l) {
        Tensor term = mul(outs[l], slice_rows(w, static_cast<int>(l), 1));  // scalar broadcast
        fused = l == 0 ? term : add(fused, term);
    }
    return detail::ln_of(m, "enc.fusion_ln", fused);
}

// Teacher-forcing logits for every history position, [T, |V|].
inline Tensor ar_logits(const SeqModel& m, const std::vector<int>& history, const Tensor& H, real drop = 0,
                        Rng* rng = nullptr) {
    m.need_section("ar");
    const Vocab vb = m.vocab();
    if (history.empty() || history[0] != vb.sos())
        throw DataError("ar_logits: history must begin with SOS");
    if (static_cast<int>(history.size()) > m.cfg.max_len)
        throw DataError("ar_logits: history length " + std::to_string(history.size()) + " exceeds max_len " +
                        std::to_string(m.cfg.max_len));
    const int t = static_cast<int>(history.size());
    Tensor x = add(embedding(m.p("ar.embed"), history), detail::pos_slice(m, "ar.pos", t));
    x = detail::maybe_dropout(x, drop, rng);
    for (int l = 0; l < m.cfg.dec_layers; ++l) {
        const std::string pfx = "ar." + std::to_string(l);
        Tensor n1 = detail::ln_of(m, pfx + ".ln1", x);
        x = add(x, detail::maybe_dropout(detail::attention(m, pfx + ".self", n1, n1, true, drop, rng), drop, rng));
        x = add(x, detail::maybe_dropout(
                       detail::attention(m, pfx + ".cross", detail::ln_of(m, pfx + ".ln2", x), H, false, drop, rng),
                       drop, rng));
        x = add(x, detail::maybe_dropout(detail::ff_block(m, pfx + ".ff", detail::ln_of(m, pfx + ".ln3", x)),
                                         drop, rng));
    }
    x = detail::ln_of(m, "ar.final_ln", x);
    return matmul_nt(x, m.p("ar.out_proj"));  // [T, |V|]
}

// Next-token distribution o_n (post-softmax) given the history.
inline Tensor ar_forward(const SeqModel& m, const std::vector<int>& history, const Tensor& H) {
    Tensor logits = ar_logits(m, history, H);
    return softmax(slice_rows(logits, logits.dim(0) - 1, 1), -1);
}

// Teacher-forcing distributions for all positions at once, [T, |V|].
inline Tensor ar_forward_all(const SeqModel& m, const std::vector<int>& history, const Tensor& H) {
    return softmax(ar_logits(m, history, H), -1);
}

// Eq.-style input embedding for order i: sum of per-order embeddings of the
// lower-order sequences, plus shared positions, plus the task vector.
inline Tensor nar_input_embedding(const SeqModel& m, const std::vector<std::vector<int>>& lower_orders,
                                  int order_i) {
    m.need_section("nar");
    if (order_i < 1 || order_i >= m.cfg.m)
        throw DataError("nar: order " + std::to_string(order_i) + " outside [1," + std::to_string(m.cfg.m - 1) +
                        "]");
    if (static_cast<int>(lower_orders.size()) != order_i)
        throw DataError("nar: order " + std::to_string(order_i) + " needs " + std::to_string(order_i) +
                        " lower-order sequences, got " + std::to_string(lower_orders.size()));
    const size_t t = lower_orders[0].size();
    for (const auto& seq : lower_orders)
        if (seq.size() != t) throw DataError("nar: lower-order sequences disagree on length");
    if (static_cast<int>(t) > m.cfg.max_len)
        throw DataError("nar: sequence length " + std::to_string(t) + " exceeds max_len " +
                        std::to_string(m.cfg.max_len));
    Tensor e;
    for (int j = 0; j < order_i; ++j) {
        Tensor emb = embedding(m.p("nar.embed." + std::to_string(j)), lower_orders[j]);
        e = j == 0 ? emb : add(e, emb);
    }
    e = add(e, detail::pos_slice(m, "nar.pos", static_cast<int>(t)));
    return add(e, slice_rows(m.p("nar.task"), order_i - 1, 1));  // [1,d] broadcasts over T
}

// Transformer body over a prepared input embedding; exposed so the additivity
// of the embedding sum can be probed end to end.
inline Tensor nar_logits_from_embedding(const SeqModel& m, Tensor e, int order_i, const Tensor& H,
                                        real drop = 0, Rng* rng = nullptr) {
    m.need_section("nar");
    Tensor x = detail::maybe_dropout(e, drop, rng);
    for (int l = 0; l < m.cfg.dec_layers; ++l) {
        const std::string pfx = "nar." + std::to_string(l);
        Tensor n1 = detail::ln_of(m, pfx + ".ln1", x);
        x = add(x, detail::maybe_dropout(detail::attention(m, pfx + ".self", n1, n1, false, drop, rng), drop, rng));
        if (m.cfg.nar_cross_attention)
            x = add(x, detail::maybe_dropout(
                           detail::attention(m, pfx + ".cross", detail::ln_of(m, pfx + ".ln2", x), H, false, drop, rng),
                           drop, rng));
        x = add(x, detail::maybe_dropout(detail::ff_block(m, pfx + ".ff", detail::ln_of(m, pfx + ".ln3", x)),
                                         drop, rng));
    }
    x = detail::ln_of(m, "nar.final_ln", x);
    // Output projection IS the order's embedding table (tied storage).
    return matmul_nt(x, m.p("nar.embed." + std::to_string(order_i)));
}

inline Tensor nar_logits(const SeqModel& m, const std::vector<std::vector<int>>& lower_orders, int order_i,
                         const Tensor& H, real drop = 0, Rng* rng = nullptr) {
    return nar_logits_from_embedding(m, nar_input_embedding(m, lower_orders, order_i), order_i, H, drop, rng);
}

// Row-stochastic O_i over all T positions in one pass.
inline Tensor nar_forward(const SeqModel& m, const std::vector<std::vector<int>>& lower_orders, int order_i,
                          const Tensor& H) {
    return softmax(nar_logits(m, lower_orders, order_i, H), -1);
}

// ---------------------------------------------------------------------------
// Incremental AR inference with cached keys/values. Raw loops, no tape;
// matches ar_logits to float tolerance and turns rollout quadratic cost
// linear per emitted token.
// ---------------------------------------------------------------------------

struct ArCrossCache {
    int s = 0;                             // encoder length
    std::vector<std::vector<real>> k, v;   // per layer, s*d
};

struct ArCache {
    int t = 0;  // tokens consumed so far
    std::vector<std::vector<real>> self_k, self_v;  // per layer, t*d
    // Shared between beam hypotheses: the encoder never changes mid-decode,
    // so copying a cache copies only the self-attention history.
    std::shared_ptr<const ArCrossCache> cross;
};

namespace detail {

// y = x·W for [d_in] row times [d_in, d_out].
inline void vec_mat(const real* x, const Tensor& w, real* y) {
    const int din = w.dim(0), dout = w.dim(1);
    std::fill(y, y + dout, real(0));
    for (int i = 0; i < din; ++i) {
        const real xi = x[i];
        const real* wr = w.data().data() + static_cast<size_t>(i) * dout;
        for (int j = 0; j < dout; ++j) y[j] += xi * wr[j];
    }
}

inline void vec_ln(const SeqModel& m, const std::string& pfx, const real* x, real* y) {
    const int d = m.cfg.d_model;
    real mean = 0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    real var = 0;
    for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= d;
    const real inv = real(1) / std::sqrt(var + real(1e-5));
    const auto& g = m.p(pfx + ".g").data();
    const auto& b = m.p(pfx + ".b").data();
    for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * g[i] + b[i];
}

// Single-query attention over cached keys/values (n rows of width d, head-split).
inline void vec_attn_cached(const SeqModel& m, const std::string& pfx, const real* xn,
                            const std::vector<real>& ks, const std::vector<real>& vs, int n, real* out_d) {
    const int d = m.cfg.d_model;
    const int heads = m.cfg.heads;
    const int dh = d / heads;
    std::vector<real> q(d), att_out(d, real(0)), scores(n);
    vec_mat(xn, m.p(pfx + ".wq"), q.data());
    const real inv_sqrt = real(1) / std::sqrt(static_cast<real>(dh));
    for (int h = 0; h < heads; ++h) {
        const real* qh = q.data() + h * dh;
        real mx = -std::numeric_limits<real>::infinity();
        for (int i = 0; i < n; ++i) {
            const real* kh = ks.data() + static_cast<size_t>(i) * d + h * dh;
            real s = 0;
            for (int c = 0; c < dh; ++c) s += qh[c] * kh[c];
            scores[i] = s * inv_sqrt;
            mx = std::max(mx, scores[i]);
        }
        real sum = 0;
        for (int i = 0; i < n; ++i) {
            scores[i] = std::exp(scores[i] - mx);
            sum += scores[i];
        }
        const real inv = real(1) / sum;
        real* oh = att_out.data() + h * dh;
        for (int i = 0; i < n; ++i) {
            const real a = scores[i] * inv;
            const real* vh = vs.data() + static_cast<size_t>(i) * d + h * dh;
            for (int c = 0; c < dh; ++c) oh[c] += a * vh[c];
        }
    }
    vec_mat(att_out.data(), m.p(pfx + ".wo"), out_d);
}

}  // namespace detail

inline ArCache ar_make_cache(const SeqModel& m, const Tensor& H) {
    m.need_section("ar");
    auto cross = std::make_shared<ArCrossCache>();
    cross->s = H.dim(0);
    const int d = m.cfg.d_model;
    cross->k.resize(m.cfg.dec_layers);
    cross->v.resize(m.cfg.dec_layers);
    for (int l = 0; l < m.cfg.dec_layers; ++l) {
        const std::string pfx = "ar." + std::to_string(l) + ".cross";
        cross->k[l].resize(static_cast<size_t>(cross->s) * d);
        cross->v[l].resize(static_cast<size_t>(cross->s) * d);
        for (int i = 0; i < cross->s; ++i) {
            const real* hrow = H.data().data() + static_cast<size_t>(i) * d;
            detail::vec_mat(hrow, m.p(pfx + ".wk"), cross->k[l].data() + static_cast<size_t>(i) * d);
            detail::vec_mat(hrow, m.p(pfx + ".wv"), cross->v[l].data() + static_cast<size_t>(i) * d);
        }
    }
    ArCache c;
    c.self_k.resize(m.cfg.dec_layers);
    c.self_v.resize(m.cfg.dec_layers);
    c.cross = std::move(cross);
    return c;
}

// Feed one token; returns raw logits [|V|] for the next position.
inline std::vector<real> ar_step(const SeqModel& m, ArCache& cache, int token) {
    m.need_section("ar");
    const int d = m.cfg.d_model;
    const Vocab vb = m.vocab();
    if (token < 0 || token >= vb.size())
        throw DataError("ar_step: token " + std::to_string(token) + " outside vocabulary");
    if (cache.t == 0 && token != vb.sos()) throw DataError("ar_step: history must begin with SOS");
    if (cache.t >= m.cfg.max_len) throw DataError("ar_step: exceeded max_len " + std::to_string(m.cfg.max_len));

    std::vector<real> x(d), tmp(d), tmp2(d);
    {
        const real* emb = m.p("ar.embed").data().data() + static_cast<size_t>(token) * d;
        const real* pos = m.p("ar.pos").data().data() + static_cast<size_t>(cache.t) * d;
        for (int i = 0; i < d; ++i) x[i] = emb[i] + pos[i];
    }
    for (int l = 0; l < m.cfg.dec_layers; ++l) {
        const std::string pfx = "ar." + std::to_string(l);
        detail::vec_ln(m, pfx + ".ln1", x.data(), tmp.data());
        auto& ks = cache.self_k[l];
        auto& vs = cache.self_v[l];
        ks.resize(static_cast<size_t>(cache.t + 1) * d);
        vs.resize(static_cast<size_t>(cache.t + 1) * d);
        detail::vec_mat(tmp.data(), m.p(pfx + ".self.wk"), ks.data() + static_cast<size_t>(cache.t) * d);
        detail::vec_mat(tmp.data(), m.p(pfx + ".self.wv"), vs.data() + static_cast<size_t>(cache.t) * d);
        detail::vec_attn_cached(m, pfx + ".self", tmp.data(), ks, vs, cache.t + 1, tmp2.data());
        for (int i = 0; i < d; ++i) x[i] += tmp2[i];

        detail::vec_ln(m, pfx + ".ln2", x.data(), tmp.data());
        detail::vec_attn_cached(m, pfx + ".cross", tmp.data(), cache.cross->k[l], cache.cross->v[l],
                                cache.cross->s, tmp2.data());
        for (int i = 0; i < d; ++i) x[i] += tmp2[i];

        detail::vec_ln(m, pfx + ".ln3", x.data(), tmp.data());
        const int ff = m.cfg.ff_dim();
        std::vector<real> h(ff);
        detail::vec_mat(tmp.data(), m.p(pfx + ".ff.w1"), h.data());
        const auto& b1 = m.p(pfx + ".ff.b1").data();
        for (int i = 0; i < ff; ++i) {
            const real z = h[i] + b1[i];
            h[i] = real(0.5) * z * (real(1) + std::erf(z * real(0.70710678118654752440)));
        }
        detail::vec_mat(h.data(), m.p(pfx + ".ff.w2"), tmp2.data());
        const auto& b2 = m.p(pfx + ".ff.b2").data();
        for (int i = 0; i < d; ++i) x[i] += tmp2[i] + b2[i];
    }
    cache.t += 1;
    detail::vec_ln(m, "ar.final_ln", x.data(), tmp.data());
    const Tensor& proj = m.p("ar.out_proj");  // [V, d]
    std::vector<real> logits(vb.size());
    for (int r = 0; r < vb.size(); ++r) {
        const real* pr = proj.data().data() + static_cast<size_t>(r) * d;
        real s = 0;
        for (int i = 0; i < d; ++i) s += tmp[i] * pr[i];
        logits[r] = s;
    }
    return logits;
}

// ---------------------------------------------------------------------------
// Persistence. A checkpoint stores one or more sections; the config header
// carries everything needed to rebuild the shapes.
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    return {{"d_model", cfg.d_model}, {"enc_layers", cfg.enc_layers}, {"dec_layers", cfg.dec_layers},
            {"heads", cfg.heads},     {"ff_mult", cfg.ff_mult},       {"m", cfg.m},
            {"codebook_size", cfg.codebook_size}, {"max_len", cfg.max_len}, {"latent_dim", cfg.latent_dim},
            {"nar_cross_attention", cfg.nar_cross_attention}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.d_model = j.at("d_model");
    cfg.enc_layers = j.at("enc_layers");
    cfg.dec_layers = j.at("dec_layers");
    cfg.heads = j.at("heads");
    cfg.ff_mult = j.at("ff_mult");
    cfg.m = j.at("m");
    cfg.codebook_size = j.at("codebook_size");
    cfg.max_len = j.at("max_len");
    cfg.latent_dim = j.at("latent_dim");
    cfg.nar_cross_attention = j.at("nar_cross_attention");
    return cfg;
}

inline void save_model(const std::string& path, const SeqModel& m, const std::set<std::string>& sections,
                       const nlohmann::json& extra = nlohmann::json::object()) {
    Container ct;
    ct.config = model_config_json(m.cfg);
    ct.config["kind"] = "seqmodel";
    ct.config["sections"] = sections;
    for (auto& [k, v] : extra.items()) ct.config[k] = v;
    for (const auto& [name, t] : m.params) {
        const std::string section = name.substr(0, name.find('.'));
        if (sections.count(section)) ct.tensors[name] = t;
    }
    save_container(path, ct);
}

inline SeqModel load_model(const std::string& path) {
    Container ct = load_container(path);
    if (ct.config.value("kind", "") != "seqmodel")
        throw DataError("load_model: " + path + " is not a model checkpoint (kind='" +
                        ct.config.value("kind", "") + "')");
    SeqModel fresh = make_model(model_config_from_json(ct.config), 0);
    SeqModel m;
    m.cfg = fresh.cfg;
    m.sections = std::set<std::string>(ct.config.at("sections").begin(), ct.config.at("sections").end());
    for (auto& [name, t] : fresh.params) {
        const std::string section = name.substr(0, name.find('.'));
        if (!m.sections.count(section)) continue;
        auto it = ct.tensors.find(name);
        if (it == ct.tensors.end()) throw DataError("load_model: " + path + " missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw DataError("load_model: " + path + " tensor " + name + " has shape " +
                            shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        m.params[name] = it->second;
    }
    for (auto& [name, t] : m.params) t.set_requires_grad(true);
    return m;
}

// The parameters belonging to the given sections, for optimizer updates.
inline ParamMap section_params(const SeqModel& m, const std::set<std::string>& sections) {
    ParamMap out;
    for (const auto& [name, t] : m.params) {
        const std::string section = name.substr(0, name.find('.'));
        if (sections.count(section)) out[name] = t;
    }
    return out;
}

}  // namespace slmss
