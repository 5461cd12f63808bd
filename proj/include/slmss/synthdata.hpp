// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Synthetic multi-speaker mixtures with exact ground truth. Each speaker is a
// harmonic tone whose amplitude and pitch offset switch per symbol slot, so a
// matched-filter decoder can read the "transcript" back out of clean audio
// with zero errors. That oracle is what makes symbol error rate meaningful.

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/codec.hpp"
#include "slmss/rng.hpp"
#include "slmss/sot.hpp"
#include "slmss/wav.hpp"

namespace slmss {

constexpr int kSymbolAlphabet = 16;  // 4 amplitude levels x 4 pitch offsets

// Symbol slots hold 1024 samples (7.8125 symbols/s at 8 kHz, nominally 8).
// The power-of-two length keeps slot boundaries on codec frame boundaries,
// and together with the frequency grid below it makes every content frame
// one of finitely many waveforms, which is what lets a small residual
// quantizer reconstruct these signals transparently.
constexpr int kNominalSymbolsPerSecond = 8;

// All fundamentals and symbol offsets are multiples of this. At hop 64 and
// 8 kHz a partial at 31.25*j Hz advances its phase by exactly j*pi/2 per
// frame, so each tone visits at most 4 distinct frame phases and the corpus
// contains only a few hundred distinct codec frames in total. That is what
// lets a 64-entry-per-order residual quantizer reconstruct references
// transparently enough for symbol readout.
constexpr real kFreqGridHz = real(31.25);

// Low-level per-slot noise riding on every content slot. It is far too weak
// to disturb symbol readout, but it gives the codec's higher quantizer
// orders a continuous error floor to keep shaving, so reconstruction
// improves at every order instead of saturating once the tone inventory is
// covered.
constexpr real kBreathStd = real(0.01);

struct SpeakerProfile {
    int speaker_id = 0;
    real fundamental = 120;                      // Hz
    std::array<real, 4> harmonics{1, 0, 0, 0};   // weights of partials 1..4
    std::array<real, kSymbolAlphabet> sym_amp{};
    std::array<real, kSymbolAlphabet> sym_off{};  // Hz added to the fundamental
};

struct MixtureSample {
    std::string id;
    std::vector<real> mixture;
    std::vector<std::vector<real>> refs;  // onset-shifted, post-gain; mixture == sum of refs
    std::vector<std::vector<int>> symbols;
    std::vector<real> onsets;  // seconds, frame-aligned
    std::vector<SpeakerProfile> profiles;
    int sample_rate = 8000;
    real duration = 2;
    real gain = 1;  // peak normalization factor applied to mixture and refs alike
};

// Slot length: the multiple of the 64-sample frame hop closest to one
// nominal symbol period. 1024 samples at 8 kHz.
inline int slot_samples(int sample_rate) {
    const int hop = 64;
    const int frames = (sample_rate / kNominalSymbolsPerSecond + hop / 2) / hop;
    if (frames < 1)
        throw UsageError("slot_samples: sample rate too low: " + std::to_string(sample_rate));
    return frames * hop;
}

// The slot waveform for one symbol, phase reset at the slot start.
inline void render_slot(const SpeakerProfile& p, int symbol, int rate, real* out, int n) {
    const real f = p.fundamental + p.sym_off[symbol];
    const real amp = p.sym_amp[symbol];
    for (int i = 0; i < n; ++i) {
        real v = 0;
        for (int h = 0; h < 4; ++h)
            v += p.harmonics[h] * std::sin(real(2 * M_PI) * f * (h + 1) * i / rate);
        out[i] = amp * v;
    }
}

// Full-length reference: silence until the onset, then one slot per symbol.
// `breath` adds kBreathStd white noise inside content slots (never in the
// silent lead-in or tail).
inline std::vector<real> render_symbols(const SpeakerProfile& p, const std::vector<int>& symbols,
                                        int onset_samples, int total_samples, int rate,
                                        Rng* breath = nullptr) {
    std::vector<real> out(total_samples, real(0));
    const int slot = slot_samples(rate);
    for (size_t s = 0; s < symbols.size(); ++s) {
        const int start = onset_samples + static_cast<int>(s) * slot;
        const int n = std::min(slot, total_samples - start);
        if (n <= 0) break;
        render_slot(p, symbols[s], rate, out.data() + start, n);
        if (breath != nullptr)
            for (int i = 0; i < n; ++i) out[start + i] += kBreathStd * static_cast<real>(breath->normal());
    }
    return out;
}

// Matched-filter symbol readout: per slot, the template with the smallest
// L2 distance wins. Distance (not correlation) because a quarter of the
// alphabet differs only by amplitude. `gain` is the sample's peak
// normalization factor, undone before matching. Slots with no energy emit
// nothing.
inline std::vector<int> decode_symbols(const SpeakerProfile& p, const std::vector<real>& wav,
                                       int onset_samples, int rate, real gain = 1) {
    const int slot = slot_samples(rate);
    std::vector<std::vector<real>> templates(kSymbolAlphabet, std::vector<real>(slot));
    for (int s = 0; s < kSymbolAlphabet; ++s) {
        render_slot(p, s, rate, templates[s].data(), slot);
        for (auto& v : templates[s]) v *= gain;
    }
    std::vector<int> out;
    for (int start = onset_samples; start + slot <= static_cast<int>(wav.size()); start += slot) {
        real energy = 0;
        for (int i = 0; i < slot; ++i) energy += wav[start + i] * wav[start + i];
        if (std::sqrt(energy / slot) < real(1e-4)) continue;  // silence, nothing to read
        int best = 0;
        real best_dist = std::numeric_limits<real>::infinity();
        for (int s = 0; s < kSymbolAlphabet; ++s) {
            real dist = 0;
            for (int i = 0; i < slot; ++i) {
                const real d = wav[start + i] - templates[s][i];
                dist += d * d;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = s;
            }
        }
        out.push_back(best);
    }
    return out;
}

// Timbres come from a fixed palette rather than a continuum. Together with
// the gridded frequencies this keeps the set of distinct codec frames finite.
// Every speaker shares one timbre; speakers differ by fundamental and by
// their symbol-to-(amplitude, offset) permutation. One palette keeps the
// distinct-frame inventory small enough for transparent quantization.
inline const std::array<real, 4>& harmonic_palette() {
    static const std::array<real, 4> k{real(1), real(0.7), real(0.4), real(0.2)};
    return k;
}

// Fundamentals sit on grid indices 3..9 (93.75 .. 281.25 Hz). Four grid
// steps (125 Hz) of separation keep two speakers' total frequencies disjoint
// even after the largest symbol offset; three-speaker samples settle for
// three steps because the grid only spans seven values. The whole index set
// is drawn jointly from the enumerated feasible subsets: sequential sampling
// can dead-end (index 6 has no 4-step partner inside the grid).
inline std::vector<int> draw_fundamental_indices(Rng& rng, int speakers, int min_gap_steps) {
    const int lo = 3, hi = 9;
    std::vector<std::vector<int>> feasible;
    std::vector<int> cur;
    auto extend = [&](auto&& self, int next) -> void {
        if (static_cast<int>(cur.size()) == speakers) {
            feasible.push_back(cur);
            return;
        }
        for (int j = next; j <= hi; ++j) {
            cur.push_back(j);
            self(self, j + min_gap_steps);
            cur.pop_back();
        }
    };
    extend(extend, lo);
    if (feasible.empty())
        throw UsageError("draw_fundamental_indices: no " + std::to_string(speakers) +
                         "-speaker set with gap " + std::to_string(min_gap_steps));
    const auto pick_at = static_cast<size_t>(rng.uniform() * feasible.size());
    std::vector<int> pick = feasible[std::min(feasible.size() - 1, pick_at)];
    for (int i = speakers - 1; i > 0; --i)
        std::swap(pick[i], pick[static_cast<int>(rng.uniform() * (i + 1))]);
    return pick;
}

inline SpeakerProfile draw_profile(Rng& rng, int speaker_id, int fundamental_index) {
    SpeakerProfile p;
    p.speaker_id = speaker_id;
    p.fundamental = kFreqGridHz * fundamental_index;
    const auto& palette = harmonic_palette();
    real norm = 0;
    for (real w : palette) norm += w;
    for (int h = 0; h < 4; ++h) p.harmonics[h] = palette[h] / norm;

    // 4 amplitude levels x 4 pitch offsets, assigned to symbols by a
    // per-speaker permutation so the code itself is speaker-specific.
    // Near-geometric levels make every adjacent pair the same relative step,
    // and they are small enough that a two-speaker mixture never clips, so
    // peak normalization stays at unity and references keep their exact
    // template waveforms.
    const std::array<real, 4> amps{real(0.16), real(0.23), real(0.34), real(0.49)};
    const std::array<real, 4> offs{kFreqGridHz * 0, kFreqGridHz * 1, kFreqGridHz * 2,
                                   kFreqGridHz * 3};
    std::array<int, kSymbolAlphabet> perm{};
    for (int i = 0; i < kSymbolAlphabet; ++i) perm[i] = i;
    for (int i = kSymbolAlphabet - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<int>(rng.uniform() * (i + 1))]);
    for (int s = 0; s < kSymbolAlphabet; ++s) {
        p.sym_amp[s] = amps[perm[s] / 4];
        p.sym_off[s] = offs[perm[s] % 4];
    }
    return p;
}

// One deterministic sample; everything derives from (seed, index).
inline MixtureSample make_sample(uint64_t seed, int64_t index, int speakers, real duration = 2,
                                 int rate = 8000, int frame_hop = 64) {
    if (speakers < 1 || speakers > 3) throw UsageError("make_sample: speakers must be 1..3");
    Rng rng = Rng::stream(seed, 0x73616d70 + static_cast<uint64_t>(index));
    MixtureSample s;
    s.id = "sample_" + std::to_string(index);
    s.sample_rate = rate;
    s.duration = duration;
    const int total = static_cast<int>(std::lround(duration * rate));
    const int slot = slot_samples(rate);
    // Every speaker must fit at least one complete symbol slot after its
    // onset, and onsets of different speakers sit at least 0.1s apart.
    const int max_onset = total - slot;
    if (max_onset < 0)
        throw UsageError("make_sample: duration " + std::to_string(duration) +
                         "s holds no complete symbol slot");
    if (static_cast<real>(max_onset) / rate < real(0.1) * (speakers - 1))
        throw UsageError("make_sample: duration " + std::to_string(duration) + "s too short for " +
                         std::to_string(speakers) + " staggered onsets");

    const int min_gap_steps = speakers >= 3 ? 3 : 4;
    const std::vector<int> f0_indices = draw_fundamental_indices(rng, speakers, min_gap_steps);
    for (int k = 0; k < speakers; ++k) s.profiles.push_back(draw_profile(rng, k, f0_indices[k]));
    for (int k = 0; k < speakers; ++k) {
        // Onset in [0, 0.5]s (clamped to the clip), frame-aligned, at least
        // 0.1s from other onsets so first-in-first-out order is never
        // ambiguous.
        real onset;
        for (int attempt = 0;; ++attempt) {
            const int max_frames =
                std::min(static_cast<int>(std::lround(real(0.5) * rate)), max_onset) / frame_hop;
            const int f = static_cast<int>(rng.uniform() * (max_frames + 1));
            onset = static_cast<real>(std::min(f, max_frames) * frame_hop) / rate;
            bool ok = true;
            for (real o : s.onsets)
                if (std::abs(o - onset) < real(0.1)) ok = false;
            if (ok) break;
            if (attempt > 1000) throw NumericError("make_sample: cannot place onsets");
        }
        s.onsets.push_back(onset);
        const int onset_samples = static_cast<int>(std::lround(onset * rate));
        const int n_sym = (total - onset_samples) / slot;  // complete slots until clip end
        std::vector<int> syms(n_sym);
        for (auto& v : syms) v = static_cast<int>(rng.uniform() * kSymbolAlphabet);
        s.symbols.push_back(syms);
        s.refs.push_back(render_symbols(s.profiles[k], syms, onset_samples, total, rate, &rng));
    }

    s.mixture.assign(total, real(0));
    for (const auto& r : s.refs)
        for (int i = 0; i < total; ++i) s.mixture[i] += r[i];
    real peak = 0;
    for (real v : s.mixture) peak = std::max(peak, std::abs(v));
    if (peak > real(0.99)) {
        s.gain = real(0.99) / peak;
        for (auto& v : s.mixture) v *= s.gain;
        for (auto& r : s.refs)
            for (auto& v : r) v *= s.gain;
    }
    return s;
}

inline nlohmann::json profile_json(const SpeakerProfile& p) {
    return {{"speaker_id", p.speaker_id},
            {"fundamental", p.fundamental},
            {"harmonics", std::vector<real>(p.harmonics.begin(), p.harmonics.end())},
            {"sym_amp", std::vector<real>(p.sym_amp.begin(), p.sym_amp.end())},
            {"sym_off", std::vector<real>(p.sym_off.begin(), p.sym_off.end())}};
}

inline SpeakerProfile profile_from_json(const nlohmann::json& j) {
    SpeakerProfile p;
    p.speaker_id = j.at("speaker_id");
    p.fundamental = j.at("fundamental");
    for (int i = 0; i < 4; ++i) p.harmonics[i] = j.at("harmonics").at(i);
    for (int i = 0; i < kSymbolAlphabet; ++i) {
        p.sym_amp[i] = j.at("sym_amp").at(i);
        p.sym_off[i] = j.at("sym_off").at(i);
    }
    return p;
}

// Writes WAVs plus a JSON-lines manifest; returns the manifest path.
inline std::string write_dataset(const std::string& dir, const std::vector<MixtureSample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "wav");
    const std::string manifest_path = (fs::path(dir) / "manifest.jsonl").string();
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw DataError("write_dataset: cannot open " + manifest_path);
    for (const auto& s : samples) {
        const std::string mix_rel = "wav/" + s.id + "_mix.wav";
        write_wav((fs::path(dir) / mix_rel).string(), s.mixture, s.sample_rate);
        std::vector<std::string> ref_rels;
        for (size_t k = 0; k < s.refs.size(); ++k) {
            ref_rels.push_back("wav/" + s.id + "_ref" + std::to_string(k) + ".wav");
            write_wav((fs::path(dir) / ref_rels.back()).string(), s.refs[k], s.sample_rate);
        }
        nlohmann::json j{{"id", s.id},
                         {"mixture_path", mix_rel},
                         {"refs", ref_rels},
                         {"symbols", s.symbols},
                         {"onsets", s.onsets},
                         {"sample_rate", s.sample_rate},
                         {"duration", s.duration},
                         {"gain", s.gain}};
        j["profiles"] = nlohmann::json::array();
        for (const auto& p : s.profiles) j["profiles"].push_back(profile_json(p));
        out << j.dump() << "\n";
    }
    return manifest_path;
}

inline std::vector<MixtureSample> read_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw DataError("read_dataset: cannot open " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<MixtureSample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(manifest_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        MixtureSample s;
        s.id = j.at("id");
        s.sample_rate = j.at("sample_rate");
        s.duration = j.at("duration");
        s.gain = j.value("gain", real(1));
        s.mixture = read_wav((base / j.at("mixture_path").get<std::string>()).string()).samples;
        for (const auto& r : j.at("refs"))
            s.refs.push_back(read_wav((base / r.get<std::string>()).string()).samples);
        s.symbols = j.at("symbols").get<std::vector<std::vector<int>>>();
        s.onsets = j.at("onsets").get<std::vector<real>>();
        for (const auto& p : j.at("profiles")) s.profiles.push_back(profile_from_json(p));
        out.push_back(std::move(s));
    }
    return out;
}

struct DatasetPaths {
    std::string train_manifest;
    std::string eval_manifest;
};

inline DatasetPaths gen_dataset(const std::string& dir, uint64_t seed, int n_train, int n_eval,
                                int speakers = 2, real duration = 2, int rate = 8000) {
    if (n_train < 1) throw UsageError("gen_dataset: n_train must be >= 1");
    namespace fs = std::filesystem;
    std::vector<MixtureSample> train, eval_set;
    for (int i = 0; i < n_train; ++i) train.push_back(make_sample(seed, i, speakers, duration, rate));
    // Eval indices continue after train so the two splits never share a sample.
    for (int i = 0; i < n_eval; ++i)
        eval_set.push_back(make_sample(seed, n_train + i, speakers, duration, rate));
    DatasetPaths p;
    p.train_manifest = write_dataset((fs::path(dir) / "train").string(), train);
    p.eval_manifest = write_dataset((fs::path(dir) / "eval").string(), eval_set);
    return p;
}

// Per-speaker token grids plus the serialized target the models train on.
inline std::pair<std::vector<real>, SotSequence> make_training_pair(const RvqCodec& codec,
                                                                    const MixtureSample& sample,
                                                                    int expected_m = 0) {
    if (expected_m > 0 && codec.m != expected_m)
        throw UsageError("make_training_pair: codec has m=" + std::to_string(codec.m) + ", expected " +
                         std::to_string(expected_m));
    std::vector<SotInput> inputs;
    for (size_t k = 0; k < sample.refs.size(); ++k) {
        SotInput in;
        in.grid = rvq_encode(codec, sample.refs[k]);
        in.onset = sample.onsets[k];
        in.speaker_index = static_cast<int>(k);
        inputs.push_back(std::move(in));
    }
    Vocab vb{codec.codebook_size};
    return {sample.mixture, build_sot(std::move(inputs), vb)};
}

}  // namespace slmss
