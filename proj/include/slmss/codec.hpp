// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Residual vector quantization codec over fixed non-overlapping frames.
// Linear analysis/synthesis maps are trained by reconstruction loss; the
// per-order codebooks by k-means init plus EMA updates on the residuals
// each order leaves behind.

#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/container.hpp"
#include "slmss/optim.hpp"
#include "slmss/rng.hpp"
#include "slmss/tensor.hpp"

namespace slmss {

struct TokenGrid {
    std::vector<std::vector<int>> orders;  // m sequences, equal length T
    int frame_hop = 64;
    int sample_rate = 8000;
    int sample_count = 0;  // pre-padding length; 0 means T*hop

    int T() const { return orders.empty() ? 0 : static_cast<int>(orders[0].size()); }
};

// Entry 0 of every codebook is pinned to the zero vector and never trained.
// That keeps per-frame residual norms exactly non-increasing across orders
// (the argmin always has "add nothing" available) and gives silent frames a
// stable token.
struct RvqCodec {
    int frame_len = 64;
    int hop = 64;
    int latent_dim = 32;
    int m = 8;
    int codebook_size = 64;
    int sample_rate = 8000;
    Tensor analysis;                            // [frame_len, latent_dim]
    Tensor synthesis;                           // [latent_dim, frame_len]
    std::vector<Tensor> codebooks;              // m of [codebook_size, latent_dim]
    std::vector<std::vector<real>> ema_counts;  // m of [codebook_size]
};

struct CodecReport {
    real map_recon_rel_l2 = 0;      // pre-quantization
    real quant_err_over_norm = 0;   // ‖latent−recon(k=m)‖ / ‖latent‖, corpus level
    std::vector<real> utilization;  // per order, fraction of entries used
    bool degenerate_data = false;
};

inline RvqCodec make_codec(int m = 8, int codebook_size = 64, int sample_rate = 8000, uint64_t seed = 1,
                           int frame_len = 64, int latent_dim = 32) {
    if (m < 1 || m > 32) throw UsageError("codec: m must be in [1,32], got " + std::to_string(m));
    if (codebook_size < 1) throw UsageError("codec: codebook size must be positive");
    RvqCodec c;
    c.frame_len = frame_len;
    c.hop = frame_len;
    c.latent_dim = latent_dim;
    c.m = m;
    c.codebook_size = codebook_size;
    c.sample_rate = sample_rate;
    Rng rng = Rng::stream(seed, 0x636f646563);
    const real s = real(1) / std::sqrt(static_cast<real>(frame_len));
    c.analysis = Tensor::randn({frame_len, latent_dim}, rng, s);
    c.synthesis = Tensor::randn({latent_dim, frame_len}, rng, s);
    for (int i = 0; i < m; ++i) {
        Tensor book = Tensor::randn({codebook_size, latent_dim}, rng, real(0.1));
        std::fill_n(book.data().begin(), latent_dim, real(0));
        c.codebooks.push_back(book);
        c.ema_counts.emplace_back(codebook_size, real(0));
    }
    return c;
}

// [T, frame_len] frames with zero-padding on the final frame.
inline Tensor frames_of(const std::vector<real>& wav, int frame_len, int hop) {
    if (wav.empty()) throw DataError("codec: empty waveform");
    const int t = static_cast<int>((wav.size() + hop - 1) / hop);
    Tensor f = Tensor::zeros({t, frame_len});
    for (int i = 0; i < t; ++i) {
        const size_t start = static_cast<size_t>(i) * hop;
        const size_t n = std::min(static_cast<size_t>(frame_len), wav.size() - start);
        std::copy(wav.begin() + start, wav.begin() + start + n, f.data().begin() + static_cast<size_t>(i) * frame_len);
    }
    return f;
}

// Frame latents [T, latent_dim]; the encoder's frame embedder reuses this.
inline Tensor analyze_frames(const RvqCodec& c, const std::vector<real>& wav) {
    return matmul(frames_of(wav, c.frame_len, c.hop), c.analysis);
}

namespace detail {

// Nearest entry by squared L2, ties to the lowest id.
inline int nearest_entry(const real* r, const Tensor& book, int latent_dim) {
    const int n = book.dim(0);
    int best = 0;
    real best_d = std::numeric_limits<real>::infinity();
    for (int e = 0; e < n; ++e) {
        const real* be = book.data().data() + static_cast<size_t>(e) * latent_dim;
        real d = 0;
        for (int j = 0; j < latent_dim; ++j) {
            const real c = r[j] - be[j];
            d += c * c;
        }
        if (d < best_d) {
            best_d = d;
            best = e;
        }
    }
    return best;
}

}  // namespace detail

inline TokenGrid rvq_encode(const RvqCodec& c, const std::vector<real>& wav) {
    if (wav.empty()) throw DataError("rvq_encode: empty waveform");
    Tensor lat = analyze_frames(c, wav);
    const int t = lat.dim(0);
    TokenGrid g;
    g.frame_hop = c.hop;
    g.sample_rate = c.sample_rate;
    g.sample_count = static_cast<int>(wav.size());
    g.orders.assign(c.m, std::vector<int>(t));
    std::vector<real> r(c.latent_dim);
    for (int f = 0; f < t; ++f) {
        std::copy_n(lat.data().begin() + static_cast<size_t>(f) * c.latent_dim, c.latent_dim, r.begin());
        for (int i = 0; i < c.m; ++i) {
            const int e = detail::nearest_entry(r.data(), c.codebooks[i], c.latent_dim);
            g.orders[i][f] = e;
            const real* be = c.codebooks[i].data().data() + static_cast<size_t>(e) * c.latent_dim;
            for (int j = 0; j < c.latent_dim; ++j) r[j] -= be[j];
        }
    }
    return g;
}

inline TokenGrid reencode(const RvqCodec& c, const std::vector<real>& wav) { return rvq_encode(c, wav); }

inline std::vector<real> rvq_decode(const RvqCodec& c, const TokenGrid& g, int use_orders = -1) {
    if (use_orders == -1) use_orders = std::min<int>(c.m, static_cast<int>(g.orders.size()));
    if (use_orders < 1 || use_orders > c.m)
        throw DataError("rvq_decode: use_orders " + std::to_string(use_orders) + " outside [1," +
                        std::to_string(c.m) + "]");
    if (static_cast<int>(g.orders.size()) < use_orders)
        throw DataError("rvq_decode: grid has " + std::to_string(g.orders.size()) + " orders, need " +
                        std::to_string(use_orders));
    const int t = g.T();
    for (int i = 0; i < use_orders; ++i) {
        if (static_cast<int>(g.orders[i].size()) != t) throw DataError("rvq_decode: ragged token grid");
        for (int tok : g.orders[i])
            if (tok < 0 || tok >= c.codebook_size)
                throw DataError("rvq_decode: token " + std::to_string(tok) + " outside [0," +
                                std::to_string(c.codebook_size) + ")");
    }
    Tensor lat = Tensor::zeros({t, c.latent_dim});
    for (int f = 0; f < t; ++f) {
        real* lf = lat.data().data() + static_cast<size_t>(f) * c.latent_dim;
        for (int i = 0; i < use_orders; ++i) {
            const real* be = c.codebooks[i].data().data() + static_cast<size_t>(g.orders[i][f]) * c.latent_dim;
            for (int j = 0; j < c.latent_dim; ++j) lf[j] += be[j];
        }
    }
    Tensor rec = matmul(lat, c.synthesis);
    std::vector<real> wav(static_cast<size_t>(t) * c.hop);
    std::copy(rec.data().begin(), rec.data().end(), wav.begin());
    return wav;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// Fits entries 1..k-1; entry 0 stays the pinned zero vector (it still takes
// part in assignments). Seeds and iterates on deduplicated points: the
// synthetic corpus repeats a modest set of distinct frames thousands of
// times, and duplicate-weighted seeding would spend most entries on the
// most common frames instead of covering the set.
inline void kmeans_init(Tensor& book, const std::vector<real>& all_points, int dim, Rng& rng,
                        int iters = 25) {
    std::vector<real> points;
    {
        std::set<std::vector<int64_t>> seen;
        const int total = static_cast<int>(all_points.size()) / dim;
        std::vector<int64_t> key(dim);
        for (int i = 0; i < total; ++i) {
            const real* p = all_points.data() + static_cast<size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) key[j] = static_cast<int64_t>(std::llround(p[j] * real(1e7)));
            if (seen.insert(key).second) points.insert(points.end(), p, p + dim);
        }
    }
    const int k = book.dim(0);
    const int n = static_cast<int>(points.size()) / dim;
    std::fill_n(book.data().begin(), dim, real(0));
    // k-means++ style seeding off the zero entry: weight by squared distance
    std::vector<real> min_d(n, std::numeric_limits<real>::infinity());
    for (int i = 0; i < n; ++i) {
        const real* p = points.data() + static_cast<size_t>(i) * dim;
        real d = 0;
        for (int j = 0; j < dim; ++j) d += p[j] * p[j];
        min_d[i] = d;
    }
    for (int e = 1; e < k; ++e) {
        const real* prev = book.data().data() + static_cast<size_t>(e - 1) * dim;
        real total = 0;
        for (int i = 0; i < n; ++i) {
            const real* p = points.data() + static_cast<size_t>(i) * dim;
            real d = 0;
            for (int j = 0; j < dim; ++j) {
                const real c = p[j] - prev[j];
                d += c * c;
            }
            min_d[i] = std::min(min_d[i], d);
            total += min_d[i];
        }
        int pick = 0;
        if (total > 0) {
            real target = static_cast<real>(rng.uniform()) * total;
            real run = 0;
            for (int i = 0; i < n; ++i) {
                run += min_d[i];
                if (run >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        }
        std::copy_n(points.begin() + static_cast<size_t>(pick) * dim,
                    dim, book.data().begin() + static_cast<size_t>(e) * dim);
    }
    // Lloyd iterations
    std::vector<real> sums(static_cast<size_t>(k) * dim);
    std::vector<int> counts(k);
    for (int it = 0; it < iters; ++it) {
        std::fill(sums.begin(), sums.end(), real(0));
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const real* p = points.data() + static_cast<size_t>(i) * dim;
            const int e = nearest_entry(p, book, dim);
            ++counts[e];
            real* s = sums.data() + static_cast<size_t>(e) * dim;
            for (int j = 0; j < dim; ++j) s[j] += p[j];
        }
        for (int e = 1; e < k; ++e) {
            if (counts[e] == 0) continue;
            real* be = book.data().data() + static_cast<size_t>(e) * dim;
            const real* s = sums.data() + static_cast<size_t>(e) * dim;
            for (int j = 0; j < dim; ++j) be[j] = s[j] / counts[e];
        }
    }
}

}  // namespace detail

inline CodecReport train_codec(RvqCodec& c, const std::vector<std::vector<real>>& signals, int epochs,
                               uint64_t seed) {
    if (signals.size() < 100)
        throw DataError("train_codec: need at least 100 signals, got " + std::to_string(signals.size()));
    if (epochs < 1) throw UsageError("train_codec: epochs must be positive");

    // Gather all frames into one [N, frame_len] matrix.
    std::vector<real> all;
    for (const auto& s : signals) {
        Tensor f = frames_of(s, c.frame_len, c.hop);
        all.insert(all.end(), f.data().begin(), f.data().end());
    }
    const int n = static_cast<int>(all.size()) / c.frame_len;
    Tensor frames = Tensor::from({n, c.frame_len}, std::move(all));

    CodecReport report;
    real frame_norm = 0;
    for (real v : frames.data()) frame_norm += v * v;
    if (frame_norm == 0) {
        std::cerr << "train_codec: warning: all-zero training signals, seeding codebooks randomly\n";
        Rng rng = Rng::stream(seed, 0x646567656e);
        for (auto& book : c.codebooks) {
            for (auto& v : book.data()) v = static_cast<real>(rng.normal()) * real(0.1);
            std::fill_n(book.data().begin(), c.latent_dim, real(0));
        }
        report.degenerate_data = true;
        report.utilization.assign(c.m, real(0));
        return report;
    }

    // Phase 1: analysis/synthesis by minibatch reconstruction loss.
    c.analysis.set_requires_grad(true);
    c.synthesis.set_requires_grad(true);
    ParamMap params;
    params["analysis"] = c.analysis;
    params["synthesis"] = c.synthesis;
    OptimizerState opt;
    Rng shuffle_rng = Rng::stream(seed, 0x6d617073);
    const int batch = 256;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int ep = 0; ep < epochs; ++ep) {
        shuffle_rng.shuffle(order.begin(), order.end());
        for (int start = 0; start < n; start += batch) {
            const int bs = std::min(batch, n - start);
            Tensor fb = Tensor::zeros({bs, c.frame_len});
            for (int i = 0; i < bs; ++i)
                std::copy_n(frames.data().begin() + static_cast<size_t>(order[start + i]) * c.frame_len, c.frame_len,
                            fb.data().begin() + static_cast<size_t>(i) * c.frame_len);
            Graph g;
            Tensor loss = mse(matmul(matmul(fb, c.analysis), c.synthesis), fb);
            for (auto& [k, p] : params) p.zero_grad();
            g.backward(loss);
            adam_step(params, opt, real(1e-2));
        }
    }
    c.analysis.set_requires_grad(false);
    c.synthesis.set_requires_grad(false);

    {
        Tensor rec = matmul(matmul(frames, c.analysis), c.synthesis);
        real err = 0;
        for (size_t i = 0; i < rec.numel(); ++i) {
            const real d = rec.data()[i] - frames.data()[i];
            err += d * d;
        }
        report.map_recon_rel_l2 = std::sqrt(err / frame_norm);
    }

    // Phase 2: codebooks on residuals, order by order.
    Tensor latents = matmul(frames, c.analysis);
    std::vector<real> residuals(latents.data());
    const int dim = c.latent_dim;
    real latent_norm = 0;
    for (real v : residuals) latent_norm += v * v;

    Rng book_rng = Rng::stream(seed, 0x626f6f6b73);
    const real decay = real(0.99);
    report.utilization.assign(c.m, real(0));
    std::vector<real> sums(static_cast<size_t>(c.codebook_size) * dim);
    std::vector<real> batch_counts(c.codebook_size);
    std::vector<int> assign(n);
    for (int ord = 0; ord < c.m; ++ord) {
        Tensor& book = c.codebooks[ord];
        detail::kmeans_init(book, residuals, dim, book_rng);
        auto& ema = c.ema_counts[ord];
        std::vector<real> ema_sums(static_cast<size_t>(c.codebook_size) * dim);
        for (int e = 0; e < c.codebook_size; ++e) {
            ema[e] = real(1);
            std::copy_n(book.data().begin() + static_cast<size_t>(e) * dim, dim,
                        ema_sums.begin() + static_cast<size_t>(e) * dim);
        }
        // EMA refinement runs until assignments stop moving (bounded), not
        // just for `epochs` rounds: the codebooks are cheap to update and
        // reconstruction transparency depends on them converging.
        std::vector<int> prev_assign(n, -1);
        std::vector<real> dist(n);
        int stable = 0;
        const int max_rounds = std::max(epochs, 60);
        for (int ep = 0; ep < max_rounds && stable < 3; ++ep) {
            std::fill(sums.begin(), sums.end(), real(0));
            std::fill(batch_counts.begin(), batch_counts.end(), real(0));
            bool moved = false;
            for (int i = 0; i < n; ++i) {
                const real* r = residuals.data() + static_cast<size_t>(i) * dim;
                const int e = detail::nearest_entry(r, book, dim);
                if (e != prev_assign[i]) moved = true;
                prev_assign[i] = e;
                assign[i] = e;
                batch_counts[e] += 1;
                real* s = sums.data() + static_cast<size_t>(e) * dim;
                real d = 0;
                const real* be = book.data().data() + static_cast<size_t>(e) * dim;
                for (int j = 0; j < dim; ++j) {
                    s[j] += r[j];
                    const real df = r[j] - be[j];
                    d += df * df;
                }
                dist[i] = d;
            }
            stable = moved ? 0 : stable + 1;
            real dist_total = 0;
            for (int i = 0; i < n; ++i) dist_total += dist[i];
            // Reseeds a dead entry from a random residual, weighted by squared
            // distance so unused capacity chases the remaining error.
            auto reseed_pick = [&]() {
                if (dist_total <= 0) return static_cast<int>(book_rng.uniform_int(static_cast<uint64_t>(n)));
                real target = static_cast<real>(book_rng.uniform()) * dist_total;
                for (int i = 0; i < n; ++i) {
                    target -= dist[i];
                    if (target <= 0) return i;
                }
                return n - 1;
            };
            for (int e = 1; e < c.codebook_size; ++e) {
                ema[e] = decay * ema[e] + (real(1) - decay) * batch_counts[e];
                real* es = ema_sums.data() + static_cast<size_t>(e) * dim;
                const real* s = sums.data() + static_cast<size_t>(e) * dim;
                real* be = book.data().data() + static_cast<size_t>(e) * dim;
                for (int j = 0; j < dim; ++j) {
                    es[j] = decay * es[j] + (real(1) - decay) * s[j];
                    be[j] = es[j] / std::max(ema[e], real(1e-8));
                }
                if (batch_counts[e] < 2) {
                    const real* r = residuals.data() + static_cast<size_t>(reseed_pick()) * dim;
                    for (int j = 0; j < dim; ++j) be[j] = r[j];
                    ema[e] = real(1);
                    for (int j = 0; j < dim; ++j) es[j] = r[j];
                    stable = 0;
                }
            }
        }
        // Final assignment fixes this order's tokens; residuals move to the next.
        std::vector<bool> used(c.codebook_size, false);
        for (int i = 0; i < n; ++i) {
            real* r = residuals.data() + static_cast<size_t>(i) * dim;
            const int e = detail::nearest_entry(r, book, dim);
            used[e] = true;
            const real* be = book.data().data() + static_cast<size_t>(e) * dim;
            for (int j = 0; j < dim; ++j) r[j] -= be[j];
        }
        int used_count = 0;
        for (bool u : used) used_count += u ? 1 : 0;
        report.utilization[ord] = static_cast<real>(used_count) / c.codebook_size;
    }

    real resid_norm = 0;
    for (real v : residuals) resid_norm += v * v;
    report.quant_err_over_norm = latent_norm > 0 ? std::sqrt(resid_norm / latent_norm) : real(0);
    return report;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_codec(const std::string& path, const RvqCodec& c) {
    Container ct;
    ct.config = {{"kind", "rvq_codec"}, {"frame_len", c.frame_len}, {"hop", c.hop},
                 {"latent_dim", c.latent_dim}, {"m", c.m}, {"codebook_size", c.codebook_size},
                 {"sample_rate", c.sample_rate}};
    ct.tensors["analysis"] = c.analysis;
    ct.tensors["synthesis"] = c.synthesis;
    for (int i = 0; i < c.m; ++i) {
        ct.tensors["codebook." + std::to_string(i)] = c.codebooks[i];
        Tensor counts = Tensor::zeros({c.codebook_size});
        counts.data() = c.ema_counts[i];
        ct.tensors["ema_counts." + std::to_string(i)] = counts;
    }
    save_container(path, ct);
}

inline RvqCodec load_codec(const std::string& path) {
    Container ct = load_container(path);
    if (ct.config.value("kind", "") != "rvq_codec")
        throw DataError("load_codec: " + path + " is not a codec checkpoint (kind='" +
                        ct.config.value("kind", "") + "')");
    RvqCodec c;
    c.frame_len = ct.config.at("frame_len");
    c.hop = ct.config.at("hop");
    c.latent_dim = ct.config.at("latent_dim");
    c.m = ct.config.at("m");
    c.codebook_size = ct.config.at("codebook_size");
    c.sample_rate = ct.config.at("sample_rate");
    auto need = [&](const std::string& name) {
        auto it = ct.tensors.find(name);
        if (it == ct.tensors.end()) throw DataError("load_codec: " + path + " missing tensor " + name);
        return it->second;
    };
    c.analysis = need("analysis");
    c.synthesis = need("synthesis");
    for (int i = 0; i < c.m; ++i) {
        c.codebooks.push_back(need("codebook." + std::to_string(i)));
        c.ema_counts.push_back(need("ema_counts." + std::to_string(i)).data());
    }
    return c;
}

// ---------------------------------------------------------------------------
// TokenGrid JSON-lines: {"id", "sample_count", "frame_hop", "orders"}
// ---------------------------------------------------------------------------

inline void write_token_grids(const std::string& path,
                              const std::vector<std::pair<std::string, TokenGrid>>& grids) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("token grids: cannot open " + path + " for writing");
    for (const auto& [id, g] : grids) {
        nlohmann::json j{{"id", id}, {"sample_count", g.sample_count}, {"frame_hop", g.frame_hop},
                         {"orders", g.orders}};
        f << j.dump() << '\n';
    }
}

inline std::vector<std::pair<std::string, TokenGrid>> read_token_grids(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("token grids: cannot open " + path);
    std::vector<std::pair<std::string, TokenGrid>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            TokenGrid g;
            g.sample_count = j.at("sample_count");
            g.frame_hop = j.at("frame_hop");
            g.orders = j.at("orders").get<std::vector<std::vector<int>>>();
            out.emplace_back(j.at("id").get<std::string>(), std::move(g));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("token grids " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace slmss
