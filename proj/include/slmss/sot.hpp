// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Serialized output: concatenate several speakers' token grids into one
// multi-order sequence bracketed by SOS/EOS with SC between speakers,
// speakers ordered first-in-first-out by onset. Splitting inverts this and
// tolerates malformed model predictions, logging every repair.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/codec.hpp"
#include "slmss/common.hpp"

namespace slmss {

struct Vocab {
    int codebook_size = 64;
    int sos() const { return codebook_size; }
    int sc() const { return codebook_size + 1; }
    int eos() const { return codebook_size + 2; }
    int size() const { return codebook_size + 3; }
    bool is_special(int t) const { return t >= codebook_size; }
};

struct SotSequence {
    std::vector<std::vector<int>> orders;  // m sequences, equal length
    int speaker_count = 0;
};

struct SotInput {
    TokenGrid grid;
    real onset = 0;  // seconds
    int speaker_index = 0;
};

inline SotSequence build_sot(std::vector<SotInput> inputs, const Vocab& vocab) {
    if (inputs.empty()) throw DataError("build_sot: no speakers");
    const int m = static_cast<int>(inputs[0].grid.orders.size());
    for (const auto& in : inputs) {
        if (static_cast<int>(in.grid.orders.size()) != m)
            throw DataError("build_sot: grids disagree on order count: " + std::to_string(m) + " vs " +
                            std::to_string(in.grid.orders.size()));
        if (in.grid.frame_hop != inputs[0].grid.frame_hop)
            throw DataError("build_sot: grids disagree on frame hop");
        for (const auto& ord : in.grid.orders) {
            if (static_cast<int>(ord.size()) != in.grid.T())
                throw DataError("build_sot: ragged grid");
            for (int t : ord)
                if (t < 0 || t >= vocab.codebook_size)
                    throw DataError("build_sot: token " + std::to_string(t) + " outside codebook range [0," +
                                    std::to_string(vocab.codebook_size) + ")");
        }
    }
    std::sort(inputs.begin(), inputs.end(), [](const SotInput& a, const SotInput& b) {
        if (a.onset != b.onset) return a.onset < b.onset;
        return a.speaker_index < b.speaker_index;
    });
    SotSequence seq;
    seq.speaker_count = static_cast<int>(inputs.size());
    seq.orders.assign(m, {});
    for (int i = 0; i < m; ++i) {
        auto& out = seq.orders[i];
        out.push_back(vocab.sos());
        for (size_t s = 0; s < inputs.size(); ++s) {
            if (s > 0) out.push_back(vocab.sc());
            const auto& toks = inputs[s].grid.orders[i];
            out.insert(out.end(), toks.begin(), toks.end());
        }
        out.push_back(vocab.eos());
    }
    return seq;
}

struct RepairReport {
    int inserted_sos = 0;        // sequence did not start with SOS
    int inserted_eos = 0;        // sequence had no EOS
    int dropped_tokens = 0;      // stray specials in order-0 content, tokens after EOS
    int padded_positions = 0;    // short higher orders padded with token 0
    int special_replaced = 0;    // specials inside higher-order content replaced with token 0
    int empty_segments = 0;      // speaker with no content

    int total() const {
        return inserted_sos + inserted_eos + dropped_tokens + padded_positions + special_replaced +
               empty_segments;
    }
    bool clean() const { return total() == 0; }
};

struct SplitResult {
    std::vector<TokenGrid> grids;
    RepairReport report;
};

// Segments the sequence on order-0's structure; higher orders follow the
// positions order-0 assigned to each speaker. Derives the speaker count from
// the SC tokens, so it never needs to be told how many speakers to expect.
inline SplitResult split_sot(const SotSequence& seq, const Vocab& vocab, int frame_hop = 64,
                             int sample_rate = 8000) {
    if (seq.orders.empty()) throw DataError("split_sot: sequence has no orders");
    const auto& c0 = seq.orders[0];
    SplitResult res;

    size_t pos = 0;
    if (!c0.empty() && c0[0] == vocab.sos()) {
        pos = 1;
    } else {
        res.report.inserted_sos += 1;
    }

    // per-speaker absolute positions of content tokens, per order-0
    std::vector<std::vector<size_t>> segments(1);
    bool saw_eos = false;
    for (; pos < c0.size(); ++pos) {
        const int t = c0[pos];
        if (t == vocab.eos()) {
            saw_eos = true;
            res.report.dropped_tokens += static_cast<int>(c0.size() - pos - 1);
            break;
        }
        if (t == vocab.sc()) {
            segments.emplace_back();
        } else if (t == vocab.sos()) {
            res.report.dropped_tokens += 1;  // stray SOS inside content
        } else {
            segments.back().push_back(pos);
        }
    }
    if (!saw_eos) res.report.inserted_eos += 1;

    const int m = static_cast<int>(seq.orders.size());
    for (const auto& positions : segments) {
        TokenGrid g;
        g.frame_hop = frame_hop;
        g.sample_rate = sample_rate;
        g.sample_count = static_cast<int>(positions.size()) * frame_hop;
        g.orders.assign(m, std::vector<int>(positions.size()));
        for (int i = 0; i < m; ++i) {
            const auto& ci = seq.orders[i];
            for (size_t k = 0; k < positions.size(); ++k) {
                const size_t p = positions[k];
                if (i == 0) {
                    g.orders[0][k] = ci[p];
                } else if (p >= ci.size()) {
                    g.orders[i][k] = 0;
                    res.report.padded_positions += 1;
                } else if (vocab.is_special(ci[p])) {
                    g.orders[i][k] = 0;
                    res.report.special_replaced += 1;
                } else {
                    g.orders[i][k] = ci[p];
                }
            }
        }
        if (positions.empty()) res.report.empty_segments += 1;
        res.grids.push_back(std::move(g));
    }
    return res;
}

// Every invariant violation with its position; empty result means valid.
inline std::vector<std::string> validate_sot(const SotSequence& seq, const Vocab& vocab) {
    std::vector<std::string> out;
    if (seq.orders.empty()) {
        out.push_back("sequence has no orders");
        return out;
    }
    const size_t len = seq.orders[0].size();
    for (size_t i = 0; i < seq.orders.size(); ++i) {
        const auto& c = seq.orders[i];
        const std::string tag = "order " + std::to_string(i);
        if (c.size() != len) {
            out.push_back(tag + ": order length mismatch (" + std::to_string(c.size()) + " vs " +
                          std::to_string(len) + ")");
            continue;
        }
        if (c.empty()) {
            out.push_back(tag + ": empty");
            continue;
        }
        if (c.front() != vocab.sos()) out.push_back(tag + ": missing SOS at position 0");
        if (c.back() != vocab.eos()) out.push_back(tag + ": missing EOS at final position");
        int sc_count = 0;
        for (size_t p = 1; p + 1 < c.size(); ++p) {
            const int t = c[p];
            if (t == vocab.sos()) out.push_back(tag + ": SOS at position " + std::to_string(p));
            if (t == vocab.eos()) out.push_back(tag + ": EOS before final position at " + std::to_string(p));
            if (t == vocab.sc()) ++sc_count;
            if (t > vocab.eos() || t < 0)
                out.push_back(tag + ": token " + std::to_string(t) + " outside vocabulary at position " +
                              std::to_string(p));
            if (i > 0 && vocab.is_special(t) != vocab.is_special(seq.orders[0][p]))
                out.push_back(tag + ": special positions diverge from order 0 at position " + std::to_string(p));
        }
        if (sc_count != seq.speaker_count - 1)
            out.push_back(tag + ": " + std::to_string(sc_count) + " SC tokens for speaker_count " +
                          std::to_string(seq.speaker_count));
        // empty segments: specials adjacent with no content between
        int prev_special_pos = 0;
        for (size_t p = 1; p < c.size(); ++p) {
            if (c[p] == vocab.sc() || (p + 1 == c.size() && c[p] == vocab.eos())) {
                if (static_cast<int>(p) - prev_special_pos <= 1)
                    out.push_back(tag + ": empty speaker segment at position " + std::to_string(p));
                prev_special_pos = static_cast<int>(p);
            }
        }
    }
    return out;
}

// JSON-lines: {"id": string, "orders": [[int,...],...]}
inline void write_sot_sequences(const std::string& path,
                                const std::vector<std::pair<std::string, SotSequence>>& seqs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("sot file: cannot open " + path + " for writing");
    for (const auto& [id, s] : seqs) {
        nlohmann::json j{{"id", id}, {"orders", s.orders}};
        f << j.dump() << '\n';
    }
}

inline std::vector<std::pair<std::string, SotSequence>> read_sot_sequences(const std::string& path,
                                                                           const Vocab& vocab) {
    std::ifstream f(path);
    if (!f) throw DataError("sot file: cannot open " + path);
    std::vector<std::pair<std::string, SotSequence>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            SotSequence s;
            s.orders = j.at("orders").get<std::vector<std::vector<int>>>();
            int sc = 0;
            if (!s.orders.empty())
                for (int t : s.orders[0]) sc += t == vocab.sc() ? 1 : 0;
            s.speaker_count = sc + 1;
            out.emplace_back(j.at("id").get<std::string>(), std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("sot file " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace slmss
