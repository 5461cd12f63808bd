// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Token- and symbol-level scoring. Corpus rates are pooled: total edit
// operations over total reference length, not a mean of per-sample rates.
// Speaker order is never trusted; outputs are matched to references by the
// assignment that minimizes total edit distance (exhaustive, fine for <= 4).

#pragma once

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/codec.hpp"
#include "slmss/synthdata.hpp"

namespace slmss {

struct EditOps {
    int64_t distance = 0;
    int64_t subs = 0;
    int64_t ins = 0;
    int64_t dels = 0;
};

// Unit-cost Levenshtein turning a into b, with a deterministic breakdown
// (diagonal preferred, then deletion, then insertion on ties).
inline EditOps edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const size_t la = a.size(), lb = b.size();
    std::vector<int64_t> dp((la + 1) * (lb + 1));
    auto at = [&](size_t i, size_t j) -> int64_t& { return dp[i * (lb + 1) + j]; };
    for (size_t i = 0; i <= la; ++i) at(i, 0) = static_cast<int64_t>(i);
    for (size_t j = 0; j <= lb; ++j) at(0, j) = static_cast<int64_t>(j);
    for (size_t i = 1; i <= la; ++i)
        for (size_t j = 1; j <= lb; ++j) {
            const int64_t sub = at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
            at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }
    EditOps ops;
    ops.distance = at(la, lb);
    size_t i = la, j = lb;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1)) {
            if (a[i - 1] != b[j - 1]) ++ops.subs;
            --i, --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++ops.dels;
            --i;
        } else {
            ++ops.ins;
            --j;
        }
    }
    return ops;
}

// Length-normalized Levenshtein similarity in [0,1]; two empty streams are
// identical by convention.
inline real lps(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() && b.empty()) return 1;
    return real(1) - static_cast<real>(edit_distance(a, b).distance) /
                         static_cast<real>(std::max(a.size(), b.size()));
}

// Best injective matching of outputs to references, minimizing total cost.
// cost[r][o] scores output o against reference r; an unmatched reference
// costs unmatched_ref[r], an unmatched output costs unmatched_out[o].
// Returns per-reference output index (-1 for unmatched), lowest-index
// assignment on ties.
inline std::vector<int> best_assignment(const std::vector<std::vector<int64_t>>& cost,
                                        const std::vector<int64_t>& unmatched_ref,
                                        const std::vector<int64_t>& unmatched_out) {
    const int nr = static_cast<int>(unmatched_ref.size());
    const int no = static_cast<int>(unmatched_out.size());
    if (nr > 8 || no > 8) throw UsageError("best_assignment: exhaustive matching supports at most 8 speakers");
    std::vector<int> pick(nr, -1), best(nr, -1);
    int64_t best_total = std::numeric_limits<int64_t>::max();
    std::vector<bool> used(no, false);
    auto rec = [&](auto&& self, int r, int64_t acc) -> void {
        if (r == nr) {
            int64_t total = acc;
            for (int o = 0; o < no; ++o)
                if (!used[o]) total += unmatched_out[o];
            if (total < best_total) {  // strict: earlier (lexicographically lower) assignment wins ties
                best_total = total;
                best = pick;
            }
            return;
        }
        for (int o = 0; o < no; ++o) {
            if (used[o]) continue;
            used[o] = true;
            pick[r] = o;
            self(self, r + 1, acc + cost[r][o]);
            used[o] = false;
        }
        pick[r] = -1;
        self(self, r + 1, acc + unmatched_ref[r]);
    };
    rec(rec, 0, 0);
    return best;
}

struct PooledRate {
    int64_t errors = 0;
    int64_t ref_len = 0;
    real percent() const { return ref_len == 0 ? real(0) : real(100) * errors / ref_len; }
    void add(const PooledRate& o) {
        errors += o.errors;
        ref_len += o.ref_len;
    }
};

// Generic pooled edit-distance rate between matched streams. Unmatched
// references count as deletions, unmatched outputs as insertions.
inline PooledRate pooled_stream_error(const std::vector<std::vector<int>>& outputs,
                                      const std::vector<std::vector<int>>& refs,
                                      std::vector<int>* assignment_out = nullptr) {
    std::vector<std::vector<int64_t>> cost(refs.size(), std::vector<int64_t>(outputs.size()));
    std::vector<int64_t> unmatched_ref(refs.size()), unmatched_out(outputs.size());
    for (size_t r = 0; r < refs.size(); ++r) {
        unmatched_ref[r] = static_cast<int64_t>(refs[r].size());
        for (size_t o = 0; o < outputs.size(); ++o)
            cost[r][o] = edit_distance(outputs[o], refs[r]).distance;
    }
    for (size_t o = 0; o < outputs.size(); ++o) unmatched_out[o] = static_cast<int64_t>(outputs[o].size());
    std::vector<int> assign = best_assignment(cost, unmatched_ref, unmatched_out);
    PooledRate rate;
    std::vector<bool> used(outputs.size(), false);
    for (size_t r = 0; r < refs.size(); ++r) {
        rate.ref_len += static_cast<int64_t>(refs[r].size());
        if (assign[r] >= 0) {
            rate.errors += cost[r][assign[r]];
            used[assign[r]] = true;
        } else {
            rate.errors += unmatched_ref[r];
        }
    }
    for (size_t o = 0; o < outputs.size(); ++o)
        if (!used[o]) rate.errors += unmatched_out[o];
    if (assignment_out) *assignment_out = assign;
    return rate;
}

// Token error rate: re-encode each separated waveform, compare order-0
// tokens against the reference speakers' order-0 tokens.
inline PooledRate ter(const RvqCodec& codec, const std::vector<std::vector<real>>& separated,
                      const std::vector<TokenGrid>& reference_grids) {
    std::vector<std::vector<int>> outputs, refs;
    for (const auto& w : separated)
        outputs.push_back(w.empty() ? std::vector<int>{} : rvq_encode(codec, w).orders.at(0));
    for (const auto& g : reference_grids) {
        if (g.T() == 0) {
            std::cerr << "ter: skipping zero-length reference\n";
            continue;
        }
        refs.push_back(g.orders.at(0));
    }
    return pooled_stream_error(outputs, refs);
}

// Symbol error rate: read symbols out of each separated waveform with the
// reference speaker's matched filter, then pool edit distances.
inline PooledRate ser(const MixtureSample& ref_sample, const std::vector<std::vector<real>>& separated,
                      std::vector<int>* assignment_out = nullptr) {
    const int rate = ref_sample.sample_rate;
    std::vector<std::vector<std::vector<int>>> decoded(ref_sample.refs.size());
    std::vector<std::vector<int64_t>> cost(ref_sample.refs.size(), std::vector<int64_t>(separated.size()));
    std::vector<int64_t> unmatched_ref(ref_sample.refs.size()), unmatched_out(separated.size(), 0);
    for (size_t r = 0; r < ref_sample.refs.size(); ++r) {
        const int onset = static_cast<int>(std::lround(ref_sample.onsets[r] * rate));
        unmatched_ref[r] = static_cast<int64_t>(ref_sample.symbols[r].size());
        decoded[r].resize(separated.size());
        for (size_t o = 0; o < separated.size(); ++o) {
            decoded[r][o] = decode_symbols(ref_sample.profiles[r], separated[o], onset, rate, ref_sample.gain);
            cost[r][o] = edit_distance(decoded[r][o], ref_sample.symbols[r]).distance;
        }
    }
    // An unmatched output's cost is how many symbols the best-reading filter
    // hallucinates from it; approximate with the first profile's readout.
    for (size_t o = 0; o < separated.size(); ++o)
        unmatched_out[o] = decoded.empty() ? 0 : static_cast<int64_t>(decoded[0][o].size());
    std::vector<int> assign = best_assignment(cost, unmatched_ref, unmatched_out);
    PooledRate out;
    std::vector<bool> used(separated.size(), false);
    for (size_t r = 0; r < ref_sample.refs.size(); ++r) {
        out.ref_len += unmatched_ref[r];
        if (assign[r] >= 0) {
            out.errors += cost[r][assign[r]];
            used[assign[r]] = true;
        } else {
            out.errors += unmatched_ref[r];
        }
    }
    for (size_t o = 0; o < separated.size(); ++o)
        if (!used[o]) out.errors += unmatched_out[o];
    if (assignment_out) *assignment_out = assign;
    return out;
}

struct EvalReport {
    int64_t samples = 0;
    PooledRate ter_rate;
    PooledRate ser_rate;
    real lps_sum = 0;
    int64_t lps_count = 0;
    int64_t correct_speaker_counts = 0;
    int64_t swapped_assignments = 0;
    real recon_rel_l2_sum = 0;
    int64_t recon_count = 0;
    int64_t repairs = 0;

    real lps_mean() const { return lps_count == 0 ? real(0) : lps_sum / lps_count; }
    real speaker_count_accuracy() const {
        return samples == 0 ? real(0) : static_cast<real>(correct_speaker_counts) / samples;
    }
    real recon_rel_l2_mean() const { return recon_count == 0 ? real(0) : recon_rel_l2_sum / recon_count; }

    nlohmann::json to_json() const {
        return {{"samples", samples},
                {"ter_percent", ter_rate.percent()},
                {"ser_percent", ser_rate.percent()},
                {"lps", lps_mean()},
                {"speaker_count_accuracy", speaker_count_accuracy()},
                {"recon_rel_l2", recon_rel_l2_mean()},
                {"swapped_assignments", swapped_assignments},
                {"repairs", repairs}};
    }
    std::string table() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "samples %lld | TER %.2f%% | SER %.2f%% | LPS %.4f | spk-acc %.3f | recon %.4f",
                      static_cast<long long>(samples), ter_rate.percent(), ser_rate.percent(), lps_mean(),
                      speaker_count_accuracy(), recon_rel_l2_mean());
        return buf;
    }
};

// Scores one separation against its reference sample and folds the result
// into the running report.
inline void eval_sample(EvalReport& report, const RvqCodec& codec, const MixtureSample& ref,
                        const std::vector<std::vector<real>>& separated) {
    report.samples += 1;
    if (static_cast<int>(separated.size()) == static_cast<int>(ref.refs.size()))
        report.correct_speaker_counts += 1;

    std::vector<TokenGrid> ref_grids;
    for (const auto& r : ref.refs) ref_grids.push_back(rvq_encode(codec, r));
    report.ter_rate.add(ter(codec, separated, ref_grids));

    std::vector<int> assign;
    report.ser_rate.add(ser(ref, separated, &assign));
    for (size_t r = 0; r < assign.size(); ++r)
        if (assign[r] >= 0 && assign[r] != static_cast<int>(r)) {
            report.swapped_assignments += 1;
            break;
        }
    const int rate = ref.sample_rate;
    for (size_t r = 0; r < assign.size(); ++r) {
        if (assign[r] < 0) continue;
        const auto& sep = separated[assign[r]];
        const int onset = static_cast<int>(std::lround(ref.onsets[r] * rate));
        report.lps_sum += lps(decode_symbols(ref.profiles[r], sep, onset, rate, ref.gain), ref.symbols[r]);
        report.lps_count += 1;
        real num = 0, den = 0;
        const size_t n = std::min(sep.size(), ref.refs[r].size());
        for (size_t i = 0; i < n; ++i) {
            num += (sep[i] - ref.refs[r][i]) * (sep[i] - ref.refs[r][i]);
            den += ref.refs[r][i] * ref.refs[r][i];
        }
        for (size_t i = n; i < ref.refs[r].size(); ++i) den += ref.refs[r][i] * ref.refs[r][i];
        for (size_t i = n; i < sep.size(); ++i) num += sep[i] * sep[i];
        if (den > 0) {
            report.recon_rel_l2_sum += std::sqrt(num / den);
            report.recon_count += 1;
        }
    }
}

}  // namespace slmss
