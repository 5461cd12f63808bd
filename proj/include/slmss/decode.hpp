// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Hybrid progressive inference: constrained beam search or temperature
// sampling rolls out order-0 tokens, the non-causal model fills orders
// 1..m-1 in exactly m-1 passes, then segmentation and codec synthesis turn
// the sequence back into per-speaker audio.
//
// The beam core is generic over a "logit source" (copyable state + step
// function) so the decoding constraints can be exercised against scripted
// logits, not just trained models.

#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "slmss/metrics.hpp"
#include "slmss/model.hpp"
#include "slmss/sot.hpp"
#include "slmss/synthdata.hpp"

namespace slmss {

struct DecodeConfig {
    std::string mode = "beam";  // "beam" or "sample"
    int beam_size = 4;
    real temperature = 1;
    int ngram_block_n = 3;  // 0 disables
    int min_len = 4;        // content tokens required before EOS/SC may end a segment
    int max_len = 256;      // emitted tokens after SOS, EOS included
    uint64_t seed = 0;

    void validate() const {
        if (mode != "beam" && mode != "sample") throw UsageError("decode: mode must be beam or sample");
        if (beam_size < 1) throw UsageError("decode: beam_size must be >= 1");
        if (!(temperature > 0)) throw UsageError("decode: temperature must be > 0");
        if (max_len < 2) throw UsageError("decode: max_len must be >= 2");
    }
};

struct DecodeLog {
    int forced_eos = 0;           // hit the length cap, EOS appended
    int masked_fallbacks = 0;     // every candidate masked, used unconstrained argmax
    int short_segments = 0;       // segments under min_len (possible only via the above)
};

namespace detail {

// Per-hypothesis constraint state, cheap to copy when a beam branches.
struct ConstraintState {
    int segment_content = 0;                 // content tokens since the last boundary
    std::vector<int> window;                 // last n-1 content tokens, reset at SC
    std::set<std::vector<int>> seen_ngrams;  // all content n-grams in the hypothesis

    void push(int token, const Vocab& vb, int n) {
        if (vb.is_special(token)) {
            segment_content = 0;
            window.clear();  // n-grams never span a speaker change
            return;
        }
        segment_content += 1;
        if (n <= 0) return;
        window.push_back(token);
        if (static_cast<int>(window.size()) == n) {
            seen_ngrams.insert(window);
            window.erase(window.begin());
        }
    }

    bool blocked(int token, const Vocab& vb, int n) const {
        if (n <= 0 || vb.is_special(token)) return false;
        if (static_cast<int>(window.size()) < n - 1) return false;
        std::vector<int> cand = window;
        cand.push_back(token);
        return seen_ngrams.count(cand) > 0;
    }
};

inline void apply_constraints(std::vector<real>& logits, const ConstraintState& cs, const Vocab& vb,
                              const DecodeConfig& cfg) {
    const real neg_inf = -std::numeric_limits<real>::infinity();
    if (cs.segment_content < cfg.min_len) {
        logits[vb.eos()] = neg_inf;
        logits[vb.sc()] = neg_inf;
    }
    logits[vb.sos()] = neg_inf;  // SOS is never a continuation
    for (int t = 0; t < vb.codebook_size; ++t)
        if (cs.blocked(t, vb, cfg.ngram_block_n)) logits[t] = neg_inf;
}

inline std::vector<real> log_softmax(std::vector<real> logits) {
    real mx = -std::numeric_limits<real>::infinity();
    for (real v : logits) mx = std::max(mx, v);
    real sum = 0;
    for (real v : logits) sum += std::exp(v - mx);
    const real lse = mx + std::log(sum);
    for (auto& v : logits) v -= lse;
    return logits;
}

template <typename State>
struct Hypothesis {
    std::vector<int> tokens;  // starts with SOS
    State state;
    ConstraintState cs;
    std::vector<real> next_logits;  // raw logits for the next position
    real logp = 0;
    bool finished = false;

    real normalized() const {
        const int len = static_cast<int>(tokens.size()) - 1;  // emitted after SOS
        return logp / std::max(1, len);
    }
};

}  // namespace detail

// Generic constrained rollout. step(state, token) consumes one token and
// returns raw logits for the next position; State must be copyable.
template <typename State>
std::vector<int> decode_core(State init_state, const std::function<std::vector<real>(State&, int)>& step,
                             const Vocab& vb, const DecodeConfig& cfg, DecodeLog* log = nullptr,
                             real* best_score = nullptr) {
    cfg.validate();
    DecodeLog local_log;
    DecodeLog& lg = log ? *log : local_log;
    using Hyp = detail::Hypothesis<State>;

    Hyp root;
    root.tokens = {vb.sos()};
    root.state = std::move(init_state);
    root.next_logits = step(root.state, vb.sos());

    Rng rng = Rng::stream(cfg.seed, 0x6465636f6465);
    const bool sampling = cfg.mode == "sample";
    const int width = sampling ? 1 : cfg.beam_size;

    std::vector<Hyp> live{std::move(root)};
    std::vector<Hyp> finished;

    auto scaled = [&](const std::vector<real>& raw) {
        std::vector<real> out = raw;
        if (cfg.temperature != real(1))
            for (auto& v : out) v /= cfg.temperature;
        return out;
    };

    for (int emitted = 0; emitted < cfg.max_len && !live.empty(); ++emitted) {
        struct Cand {
            int parent;
            int token;
            real logp;
            real step_lp;
        };
        std::vector<Cand> cands;
        for (size_t h = 0; h < live.size(); ++h) {
            std::vector<real> logits = scaled(live[h].next_logits);
            detail::apply_constraints(logits, live[h].cs, vb, cfg);
            bool any = false;
            for (real v : logits)
                if (v > -std::numeric_limits<real>::infinity()) any = true;
            if (!any) {
                // Escape hatch: everything masked, take the unconstrained argmax.
                lg.masked_fallbacks += 1;
                std::vector<real> raw = scaled(live[h].next_logits);
                raw[vb.sos()] = -std::numeric_limits<real>::infinity();
                int best = 0;
                for (int v = 1; v < vb.size(); ++v)
                    if (raw[v] > raw[best]) best = v;
                std::vector<real> lp = detail::log_softmax(raw);
                cands.push_back({static_cast<int>(h), best, live[h].logp + lp[best], lp[best]});
                continue;
            }
            std::vector<real> lp = detail::log_softmax(logits);
            if (sampling) {
                std::vector<real> probs(lp.size());
                for (size_t v = 0; v < lp.size(); ++v) probs[v] = std::exp(lp[v]);
                real r = rng.uniform();
                int picked = static_cast<int>(lp.size()) - 1;
                for (size_t v = 0; v < probs.size(); ++v) {
                    r -= probs[v];
                    if (r <= 0) {
                        picked = static_cast<int>(v);
                        break;
                    }
                }
                cands.push_back({static_cast<int>(h), picked, live[h].logp + lp[picked], lp[picked]});
            } else {
                for (int v = 0; v < vb.size(); ++v)
                    if (lp[v] > -std::numeric_limits<real>::infinity())
                        cands.push_back({static_cast<int>(h), v, live[h].logp + lp[v], lp[v]});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        if (static_cast<int>(cands.size()) > width) cands.resize(width);

        std::vector<Hyp> next;
        // The last child of each parent steals the parent's state instead of
        // copying the whole attention cache.
        std::vector<int> children_left(live.size(), 0);
        for (const auto& c : cands) children_left[c.parent] += 1;
        for (const auto& c : cands) {
            Hyp child;
            children_left[c.parent] -= 1;
            if (children_left[c.parent] == 0) {
                child = std::move(live[c.parent]);
            } else {
                child = live[c.parent];
            }
            child.tokens.push_back(c.token);
            child.logp = c.logp;
            if (c.token == vb.eos()) {
                if (child.cs.segment_content < cfg.min_len) lg.short_segments += 1;
                child.finished = true;
                finished.push_back(std::move(child));
            } else {
                if (child.cs.segment_content < cfg.min_len && vb.is_special(c.token)) lg.short_segments += 1;
                child.cs.push(c.token, vb, cfg.ngram_block_n);
                child.next_logits = step(child.state, c.token);
                next.push_back(std::move(child));
            }
        }
        live = std::move(next);
        if (!sampling && static_cast<int>(finished.size()) >= cfg.beam_size) break;
    }

    for (auto& h : live) {
        // Length cap reached: close the sequence with a forced EOS.
        lg.forced_eos += 1;
        if (h.cs.segment_content < cfg.min_len) lg.short_segments += 1;
        std::vector<real> lp = detail::log_softmax(scaled(h.next_logits));
        h.logp += lp[vb.eos()];
        h.tokens.push_back(vb.eos());
        h.finished = true;
        finished.push_back(std::move(h));
    }

    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i)
        if (finished[i].normalized() > finished[best].normalized()) best = i;
    if (best_score) *best_score = finished[best].normalized();
    return finished[best].tokens;
}

// Order-0 rollout from a trained model via the incremental cache.
inline std::vector<int> ar_decode(const SeqModel& m, const Tensor& H, const DecodeConfig& cfg,
                                  DecodeLog* log = nullptr, real* best_score = nullptr) {
    if (H.dim(0) < 1) throw DataError("ar_decode: empty encoder output");
    DecodeConfig eff = cfg;
    eff.max_len = std::min(cfg.max_len, m.cfg.max_len - 1);  // SOS occupies one position
    std::function<std::vector<real>(ArCache&, int)> step = [&m](ArCache& c, int tok) {
        return ar_step(m, c, tok);
    };
    return decode_core<ArCache>(ar_make_cache(m, H), step, m.vocab(), eff, log, best_score);
}

// Fill orders 1..m-1, one forward pass each. Specials are copied straight
// from order 0; the argmax at content positions never considers specials.
inline SotSequence nar_decode(const SeqModel& m, const std::vector<int>& order0, const Tensor& H,
                              int* forward_passes = nullptr) {
    m.need_section("nar");
    const Vocab vb = m.vocab();
    SotSequence seq;
    seq.orders.push_back(order0);
    seq.speaker_count = 0;
    for (int t : order0)
        if (t == vb.sc()) seq.speaker_count += 1;
    if (!order0.empty()) seq.speaker_count += 1;
    int passes = 0;
    for (int i = 1; i < m.cfg.m; ++i) {
        Tensor logits = nar_logits(m, seq.orders, i, H);
        passes += 1;
        const int t_len = logits.dim(0);
        const int v = logits.dim(1);
        std::vector<int> row(t_len);
        for (int t = 0; t < t_len; ++t) {
            if (vb.is_special(order0[t])) {
                row[t] = order0[t];
                continue;
            }
            const real* lr = logits.data().data() + static_cast<size_t>(t) * v;
            int best = 0;
            for (int c = 1; c < vb.codebook_size; ++c)
                if (lr[c] > lr[best]) best = c;
            row[t] = best;
        }
        seq.orders.push_back(std::move(row));
    }
    if (forward_passes) *forward_passes = passes;
    return seq;
}

struct SeparationResult {
    std::vector<std::vector<real>> waveforms;  // per speaker, FIFO order preserved
    std::vector<TokenGrid> grids;
    SotSequence sot;
    RepairReport repairs;
    real logprob = 0;  // length-normalized decode score
    DecodeLog log;
};

inline SeparationResult separate(const SeqModel& ar_model, const SeqModel& nar_model, const RvqCodec& codec,
                                 const std::vector<real>& mixture, const DecodeConfig& cfg) {
    SeparationResult res;
    Tensor h_ar = encode_mixture(ar_model, codec, mixture);
    std::vector<int> order0 = ar_decode(ar_model, h_ar, cfg, &res.log, &res.logprob);
    const Vocab vb = ar_model.vocab();
    bool has_content = false;
    for (int t : order0)
        if (!vb.is_special(t)) has_content = true;
    if (!has_content) {
        std::cerr << "separate: decoder produced no content tokens, returning empty result\n";
        res.sot.orders.assign(ar_model.cfg.m, order0);
        return res;
    }
    Tensor h_nar = &ar_model == &nar_model ? h_ar : encode_mixture(nar_model, codec, mixture);
    res.sot = nar_decode(nar_model, order0, h_nar);
    SplitResult split = split_sot(res.sot, vb, codec.hop, codec.sample_rate);
    res.grids = std::move(split.grids);
    res.repairs = split.report;
    for (const auto& g : res.grids) res.waveforms.push_back(rvq_decode(codec, g));
    return res;
}

struct TempSweepRow {
    real temperature = 1;
    real ter_percent = 0;
    real ser_percent = 0;
    real lps_mean = 0;
    bool best = false;
};

// Sample-mode decoding quality across AR temperatures; the row with the
// lowest symbol error rate is marked best.
inline std::vector<TempSweepRow> sweep_temperature(const SeqModel& ar_model, const SeqModel& nar_model,
                                                   const RvqCodec& codec,
                                                   const std::vector<MixtureSample>& eval_set,
                                                   const std::vector<real>& temps,
                                                   const DecodeConfig& base_cfg) {
    std::vector<TempSweepRow> rows;
    for (real temp : temps) {
        DecodeConfig cfg = base_cfg;
        cfg.mode = "sample";
        cfg.temperature = temp;
        EvalReport report;
        for (size_t i = 0; i < eval_set.size(); ++i) {
            cfg.seed = base_cfg.seed + i;
            SeparationResult res = separate(ar_model, nar_model, codec, eval_set[i].mixture, cfg);
            eval_sample(report, codec, eval_set[i], res.waveforms);
        }
        TempSweepRow row;
        row.temperature = temp;
        row.ter_percent = report.ter_rate.percent();
        row.ser_percent = report.ser_rate.percent();
        row.lps_mean = report.lps_mean();
        rows.push_back(row);
    }
    if (!rows.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < rows.size(); ++i)
            if (rows[i].ser_percent < rows[best].ser_percent) best = i;
        rows[best].best = true;
    }
    return rows;
}

}  // namespace slmss
