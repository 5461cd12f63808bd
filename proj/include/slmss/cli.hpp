// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Command-line front end over the whole pipeline: dataset generation, codec
// and model training, separation, evaluation, and the two ablations. Every
// command reads an option schema whose defaults can be overridden first by a
// key=value config file (--config) and then by flags, is deterministic given
// its seed, and maps errors onto exit codes 1 (usage), 2 (data), 3 (numeric).

#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slmss/config.hpp"
#include "slmss/decode.hpp"
#include "slmss/metrics.hpp"
#include "slmss/synthdata.hpp"
#include "slmss/trainer.hpp"
#include "slmss/wav.hpp"

namespace slmss {

struct CliOption {
    std::string key;  // flag spelling without the leading --
    std::string def;
    std::string help;
    bool boolean = false;
    bool required = false;
};

struct CliCommand {
    std::string name;
    std::string summary;
    std::vector<CliOption> options;
    std::function<void(const KvConfig&, std::ostream&)> run;
};

namespace detail {

inline std::string num_str(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string require_str(const KvConfig& cfg, const std::string& key, const std::string& cmd,
                               const std::string& what) {
    const std::string v = cfg.str(key);
    if (v.empty()) throw UsageError(cmd + ": --" + key + " is required (" + what + ")");
    return v;
}

// Recursive content hash of a directory, stable across filesystems: files in
// sorted relative-path order, each contributing its path and bytes.
inline uint64_t dir_checksum(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 14695981039346656037ull;
    for (const auto& p : files) {
        const std::string rel = fs::relative(p, dir).generic_string();
        h = fnv1a(rel.data(), rel.size(), h);
        std::ifstream f(p, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return h;
}

inline std::vector<CliOption> decode_options() {
    return {
        {"mode", "beam", "decoding mode, beam or sample"},
        {"beam-size", "4", "beam width in beam mode"},
        {"temperature", "1", "softmax temperature in sample mode"},
        {"min-len", "4", "content tokens required before EOS or a speaker change"},
        {"ngram-n", "3", "blocked content n-gram length, 0 disables"},
        {"max-len", "256", "cap on emitted tokens per decode"},
        {"seed", "0", "sampling seed"},
    };
}

inline DecodeConfig decode_config_from(const KvConfig& cfg) {
    DecodeConfig dc;
    dc.mode = cfg.str("mode");
    dc.beam_size = static_cast<int>(cfg.i64("beam-size"));
    dc.temperature = static_cast<real>(cfg.num("temperature"));
    dc.min_len = static_cast<int>(cfg.i64("min-len"));
    dc.ngram_block_n = static_cast<int>(cfg.i64("ngram-n"));
    dc.max_len = static_cast<int>(cfg.i64("max-len"));
    dc.seed = static_cast<uint64_t>(cfg.i64("seed"));
    dc.validate();
    return dc;
}

inline std::vector<std::vector<real>> ref_signals(const std::vector<MixtureSample>& samples) {
    std::vector<std::vector<real>> out;
    for (const auto& s : samples)
        for (const auto& r : s.refs) out.push_back(r);
    return out;
}

inline int common_sample_rate(const std::vector<MixtureSample>& samples, const std::string& cmd) {
    if (samples.empty()) throw DataError(cmd + ": empty dataset");
    for (const auto& s : samples)
        if (s.sample_rate != samples[0].sample_rate)
            throw DataError(cmd + ": mixed sample rates in dataset (" + std::to_string(samples[0].sample_rate) +
                            " and " + std::to_string(s.sample_rate) + ")");
    return samples[0].sample_rate;
}

inline void merge_report(EvalReport& into, const EvalReport& from) {
    into.samples += from.samples;
    into.ter_rate.add(from.ter_rate);
    into.ser_rate.add(from.ser_rate);
    into.lps_sum += from.lps_sum;
    into.lps_count += from.lps_count;
    into.correct_speaker_counts += from.correct_speaker_counts;
    into.swapped_assignments += from.swapped_assignments;
    into.recon_rel_l2_sum += from.recon_rel_l2_sum;
    into.recon_count += from.recon_count;
    into.repairs += from.repairs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

inline void cmd_gen_data(const KvConfig& cfg, std::ostream& os) {
    namespace fs = std::filesystem;
    const std::string out = detail::require_str(cfg, "out", "gen-data", "output dataset directory");
    if (fs::exists(out) && !fs::is_empty(out) && !cfg.flag("force", false))
        throw DataError("gen-data: output directory " + out +
                        " already contains files (pass --force to overwrite)");
    const DatasetPaths p = gen_dataset(out, static_cast<uint64_t>(cfg.i64("seed")),
                                       static_cast<int>(cfg.i64("n-train")), static_cast<int>(cfg.i64("n-eval")),
                                       static_cast<int>(cfg.i64("speakers")), static_cast<real>(cfg.num("duration")),
                                       static_cast<int>(cfg.i64("rate")));
    os << "train manifest: " << p.train_manifest << "\n";
    os << "eval manifest: " << p.eval_manifest << "\n";
    os << "checksum: " << detail::u64_hex(detail::dir_checksum(out)) << "\n";
}

// ---------------------------------------------------------------------------
// train-codec

inline void cmd_train_codec(const KvConfig& cfg, std::ostream& os) {
    const std::string data = detail::require_str(cfg, "data", "train-codec", "training manifest");
    const std::string out = detail::require_str(cfg, "out", "train-codec", "codec checkpoint path");
    const std::vector<MixtureSample> samples = read_dataset(data);
    const int rate = detail::common_sample_rate(samples, "train-codec");
    RvqCodec codec = make_codec(static_cast<int>(cfg.i64("codec.m")),
                                static_cast<int>(cfg.i64("codec.codebook-size")), rate,
                                static_cast<uint64_t>(cfg.i64("seed")),
                                static_cast<int>(cfg.i64("codec.frame-len")),
                                static_cast<int>(cfg.i64("codec.latent-dim")));
    const CodecReport report = train_codec(codec, detail::ref_signals(samples),
                                           static_cast<int>(cfg.i64("epochs")),
                                           static_cast<uint64_t>(cfg.i64("seed")));
    if (report.degenerate_data)
        throw DataError("train-codec: training frames are degenerate (collapsed variance)");
    for (size_t i = 0; i < report.utilization.size(); ++i)
        if (!(report.utilization[i] > 0))
            throw DataError("train-codec: order " + std::to_string(i) + " uses no codebook entries");
    save_codec(out, codec);
    os << "signals: " << samples.size() * samples[0].refs.size() << "\n";
    os << "map recon rel l2: " << detail::num_str(report.map_recon_rel_l2) << "\n";
    os << "quantization err over norm: " << detail::num_str(report.quant_err_over_norm) << "\n";
    os << "utilization:";
    for (real u : report.utilization) os << ' ' << detail::num_str(u);
    os << "\n";
    os << "wrote " << out << "\n";
}

// ---------------------------------------------------------------------------
// train-ar / train-nar

inline void cmd_train_model(const KvConfig& cfg, std::ostream& os, TrainTask task) {
    const std::string cmd = task == TrainTask::kAr ? "train-ar" : "train-nar";
    const std::string data = detail::require_str(cfg, "data", cmd, "training manifest");
    const std::string out = detail::require_str(cfg, "out", cmd, "checkpoint directory");
    if (cfg.str("codec").empty())
        throw UsageError(cmd + ": a trained codec checkpoint is required first (--codec, from train-codec)");
    const RvqCodec codec = load_codec(cfg.str("codec"));

    const std::vector<MixtureSample> train_set = read_dataset(data);
    std::vector<MixtureSample> eval_set;
    if (!cfg.str("eval").empty()) eval_set = read_dataset(cfg.str("eval"));
    const int rate = detail::common_sample_rate(train_set, cmd);
    if (rate != codec.sample_rate)
        throw DataError(cmd + ": dataset sample rate " + std::to_string(rate) + " does not match codec rate " +
                        std::to_string(codec.sample_rate));

    ModelConfig mc;
    mc.d_model = static_cast<int>(cfg.i64("model.d-model"));
    mc.enc_layers = static_cast<int>(cfg.i64("model.enc-layers"));
    mc.dec_layers = static_cast<int>(cfg.i64("model.dec-layers"));
    mc.heads = static_cast<int>(cfg.i64("model.heads"));
    mc.ff_mult = static_cast<int>(cfg.i64("model.ff-mult"));
    mc.max_len = static_cast<int>(cfg.i64("model.max-len"));
    mc.m = codec.m;
    mc.codebook_size = codec.codebook_size;
    mc.latent_dim = codec.latent_dim;
    SeqModel model = make_model(mc, static_cast<uint64_t>(cfg.i64("model.seed")));

    TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.i64("train.epochs"));
    tc.base_lr = static_cast<real>(cfg.num("train.base-lr"));
    tc.warmup = static_cast<real>(cfg.num("train.warmup"));
    tc.batch_size = static_cast<int>(cfg.i64("train.batch-size"));
    tc.seed = static_cast<uint64_t>(cfg.i64("train.seed"));
    tc.grad_clip = static_cast<real>(cfg.num("train.grad-clip"));
    tc.eval_every = static_cast<int>(cfg.i64("train.eval-every"));
    tc.dropout = static_cast<real>(cfg.num("train.dropout"));
    tc.m = codec.m;
    tc.checkpoint_dir = out;
    if (task == TrainTask::kNar) tc.ablate_task_embedding = cfg.flag("ablate-task-embedding", false);

    const bool resume = cfg.flag("resume", false);
    const TrainResult res = task == TrainTask::kAr ? train_ar(model, codec, train_set, eval_set, tc, resume)
                                                   : train_nar(model, codec, train_set, eval_set, tc, resume);
    if (!std::filesystem::exists(res.last_path))
        throw DataError(cmd + ": final checkpoint " + res.last_path + " was not written");
    load_model(res.last_path);  // smoke: the written container reads back

    os << "steps: " << res.rows.size() << "\n";
    os << "final loss: " << detail::real_str(res.rows.back().train_loss) << "\n";
    if (std::isfinite(res.best_metric)) {
        os << "best eval metric: " << detail::real_str(res.best_metric) << "\n";
        os << "best checkpoint: " << res.best_path << "\n";
    }
    os << "last checkpoint: " << res.last_path << "\n";
    os << "loss csv: " << res.csv_path << "\n";
}

// ---------------------------------------------------------------------------
// separate

inline void cmd_separate(const KvConfig& cfg, std::ostream& os) {
    namespace fs = std::filesystem;
    const std::string mix_path = detail::require_str(cfg, "mixture", "separate", "input mixture WAV");
    const std::string codec_path = detail::require_str(cfg, "codec", "separate", "codec checkpoint");
    const std::string ar_path = detail::require_str(cfg, "ar", "separate", "order-0 model checkpoint");
    const std::string nar_path = detail::require_str(cfg, "nar", "separate", "higher-order model checkpoint");
    const std::string out = detail::require_str(cfg, "out", "separate", "output directory");

    const RvqCodec codec = load_codec(codec_path);
    const SeqModel ar_model = load_model(ar_path);
    SeqModel nar_storage;
    const SeqModel* nar_model = &ar_model;
    if (nar_path != ar_path) {
        nar_storage = load_model(nar_path);
        nar_model = &nar_storage;
    }

    const WavData wav = read_wav(mix_path);
    if (wav.sample_rate != codec.sample_rate)
        throw DataError("separate: mixture sample rate " + std::to_string(wav.sample_rate) +
                        " does not match codec rate " + std::to_string(codec.sample_rate));

    const DecodeConfig dc = detail::decode_config_from(cfg);
    const SeparationResult res = separate(ar_model, *nar_model, codec, wav.samples, dc);

    fs::create_directories(out);
    const std::string stem = fs::path(mix_path).stem().string();
    for (size_t k = 0; k < res.waveforms.size(); ++k)
        write_wav((fs::path(out) / ("spk" + std::to_string(k) + ".wav")).string(), res.waveforms[k],
                  codec.sample_rate);
    const std::string tokens_path = (fs::path(out) / "tokens.jsonl").string();
    std::ofstream tf(tokens_path, std::ios::trunc);
    if (!tf) throw DataError("separate: cannot open " + tokens_path);
    tf << nlohmann::json{{"id", stem}, {"orders", res.sot.orders}}.dump() << "\n";
    for (size_t k = 0; k < res.grids.size(); ++k)
        tf << nlohmann::json{{"id", stem + "/spk" + std::to_string(k)}, {"orders", res.grids[k].orders}}.dump()
           << "\n";
    tf.close();

    os << "speakers: " << res.waveforms.size() << "\n";
    os << "logprob: " << detail::real_str(res.logprob) << "\n";
    os << "repairs: " << res.repairs.total() << "\n";
    if (res.repairs.inserted_sos) os << "  inserted-sos: " << res.repairs.inserted_sos << "\n";
    if (res.repairs.inserted_eos) os << "  inserted-eos: " << res.repairs.inserted_eos << "\n";
    if (res.repairs.dropped_tokens) os << "  dropped-tokens: " << res.repairs.dropped_tokens << "\n";
    if (res.repairs.padded_positions) os << "  padded-positions: " << res.repairs.padded_positions << "\n";
    if (res.repairs.special_replaced) os << "  special-replaced: " << res.repairs.special_replaced << "\n";
    if (res.repairs.empty_segments) os << "  empty-segments: " << res.repairs.empty_segments << "\n";
    os << "wrote " << out << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

inline void cmd_evaluate(const KvConfig& cfg, std::ostream& os) {
    const std::string data = detail::require_str(cfg, "data", "evaluate", "evaluation manifest");
    const std::string codec_path = detail::require_str(cfg, "codec", "evaluate", "codec checkpoint");
    const std::string ar_path = detail::require_str(cfg, "ar", "evaluate", "order-0 model checkpoint");
    const std::string nar_path = detail::require_str(cfg, "nar", "evaluate", "higher-order model checkpoint");
    const std::string out = detail::require_str(cfg, "out", "evaluate", "report JSON path");
    const int workers = std::max(1, static_cast<int>(cfg.i64("workers")));

    const RvqCodec codec = load_codec(codec_path);
    const SeqModel ar_model = load_model(ar_path);
    SeqModel nar_storage;
    const SeqModel* nar_model = &ar_model;
    if (nar_path != ar_path) {
        nar_storage = load_model(nar_path);
        nar_model = &nar_storage;
    }
    const std::vector<MixtureSample> samples = read_dataset(data);
    if (samples.empty()) throw DataError("evaluate: empty dataset " + data);
    const DecodeConfig base = detail::decode_config_from(cfg);

    const int w = std::min<int>(workers, static_cast<int>(samples.size()));
    std::vector<EvalReport> pipe_parts(w), gt_parts(w);
    std::vector<std::exception_ptr> errors(w);
    auto work = [&](int wi) {
        try {
            const size_t n = samples.size();
            const size_t lo = n * wi / w, hi = n * (wi + 1) / w;
            for (size_t i = lo; i < hi; ++i) {
                DecodeConfig dc = base;
                dc.seed = base.seed + i;  // per-sample stream, stable under any worker count
                const SeparationResult res = separate(ar_model, *nar_model, codec, samples[i].mixture, dc);
                eval_sample(pipe_parts[wi], codec, samples[i], res.waveforms);
                pipe_parts[wi].repairs += res.repairs.total();
                std::vector<std::vector<real>> roundtrip;
                for (const auto& r : samples[i].refs)
                    roundtrip.push_back(rvq_decode(codec, rvq_encode(codec, r)));
                eval_sample(gt_parts[wi], codec, samples[i], roundtrip);
            }
        } catch (...) {
            errors[wi] = std::current_exception();
        }
    };
    if (w == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int wi = 0; wi < w; ++wi) pool.emplace_back(work, wi);
        for (auto& t : pool) t.join();
    }
    for (int wi = 0; wi < w; ++wi)
        if (errors[wi]) std::rethrow_exception(errors[wi]);

    EvalReport pipeline, gt;
    for (int wi = 0; wi < w; ++wi) {
        detail::merge_report(pipeline, pipe_parts[wi]);
        detail::merge_report(gt, gt_parts[wi]);
    }

    std::ofstream f(out, std::ios::trunc);
    if (!f) throw DataError("evaluate: cannot open " + out);
    f << nlohmann::json{{"pipeline", pipeline.to_json()}, {"gt_roundtrip", gt.to_json()}}.dump(2) << "\n";
    if (!f) throw DataError("evaluate: write failed for " + out);

    os << "pipeline     " << pipeline.table() << "\n";
    os << "gt-roundtrip " << gt.table() << "\n";
    os << "wrote " << out << "\n";
}

// ---------------------------------------------------------------------------
// ablate

inline void cmd_ablate(const KvConfig& cfg, std::ostream& os) {
    const std::string what = detail::require_str(cfg, "what", "ablate", "codebooks or temperature");
    const std::string data = detail::require_str(cfg, "data", "ablate", "evaluation manifest");
    const std::string codec_path = detail::require_str(cfg, "codec", "ablate", "codec checkpoint");
    const std::string out = detail::require_str(cfg, "out", "ablate", "output CSV path");
    const RvqCodec codec = load_codec(codec_path);
    const std::vector<MixtureSample> samples = read_dataset(data);
    if (samples.empty()) throw DataError("ablate: empty dataset " + data);

    std::ofstream f(out, std::ios::trunc);
    if (!f) throw DataError("ablate: cannot open " + out);

    if (what == "codebooks") {
        const bool retrain = cfg.flag("retrain", false);
        std::vector<std::vector<real>> train_signals;
        if (retrain) {
            const std::string td =
                detail::require_str(cfg, "train-data", "ablate", "training manifest for --retrain");
            train_signals = detail::ref_signals(read_dataset(td));
        }
        f << "k,ter_percent,ser_percent,lps\n";
        os << "k  TER%  SER%  LPS\n";
        for (int k = 1; k <= codec.m; ++k) {
            RvqCodec staged;
            const RvqCodec* use = &codec;
            if (retrain) {
                staged = make_codec(k, codec.codebook_size, codec.sample_rate,
                                    static_cast<uint64_t>(cfg.i64("codec-seed")), codec.frame_len,
                                    codec.latent_dim);
                train_codec(staged, train_signals, static_cast<int>(cfg.i64("epochs")),
                            static_cast<uint64_t>(cfg.i64("codec-seed")));
                use = &staged;
            }
            EvalReport rep;
            for (const auto& s : samples) {
                std::vector<std::vector<real>> roundtrip;
                for (const auto& r : s.refs)
                    roundtrip.push_back(rvq_decode(*use, rvq_encode(*use, r), retrain ? -1 : k));
                eval_sample(rep, *use, s, roundtrip);
            }
            f << k << ',' << detail::real_str(rep.ter_rate.percent()) << ','
              << detail::real_str(rep.ser_rate.percent()) << ',' << detail::real_str(rep.lps_mean()) << "\n";
            char line[128];
            std::snprintf(line, sizeof line, "%d  %.2f  %.2f  %.4f", k, rep.ter_rate.percent(),
                          rep.ser_rate.percent(), rep.lps_mean());
            os << line << "\n";
        }
    } else if (what == "temperature") {
        const std::string ar_path = detail::require_str(cfg, "ar", "ablate", "order-0 model checkpoint");
        const std::string nar_path = detail::require_str(cfg, "nar", "ablate", "higher-order model checkpoint");
        const SeqModel ar_model = load_model(ar_path);
        SeqModel nar_storage;
        const SeqModel* nar_model = &ar_model;
        if (nar_path != ar_path) {
            nar_storage = load_model(nar_path);
            nar_model = &nar_storage;
        }
        std::vector<real> temps;
        std::stringstream ss(cfg.str("temps"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                size_t used = 0;
                temps.push_back(static_cast<real>(std::stod(item, &used)));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw UsageError("ablate: --temps expects comma-separated numbers, got '" + item + "'");
            }
        }
        if (temps.empty()) throw UsageError("ablate: --temps is empty");
        const std::vector<TempSweepRow> rows =
            sweep_temperature(ar_model, *nar_model, codec, samples, temps, detail::decode_config_from(cfg));
        f << "temperature,ter_percent,ser_percent,lps,best\n";
        os << "T    TER%  SER%  LPS  best\n";
        for (const auto& r : rows) {
            f << detail::num_str(r.temperature) << ',' << detail::real_str(r.ter_percent) << ','
              << detail::real_str(r.ser_percent) << ',' << detail::real_str(r.lps_mean) << ','
              << (r.best ? 1 : 0) << "\n";
            char line[128];
            std::snprintf(line, sizeof line, "%-4g %.2f  %.2f  %.4f  %s", static_cast<double>(r.temperature),
                          r.ter_percent, r.ser_percent, r.lps_mean, r.best ? "*" : "");
            os << line << "\n";
        }
    } else {
        throw UsageError("ablate: --what must be codebooks or temperature, got '" + what + "'");
    }
    f.close();
    os << "wrote " << out << "\n";
}

// ---------------------------------------------------------------------------
// registry, parsing, entry point

inline std::vector<CliOption> train_model_options(bool nar) {
    const TrainConfig tc;
    const ModelConfig mc;
    std::vector<CliOption> opts = {
        {"config", "", "key=value config file, flags take precedence"},
        {"data", "", "training manifest from gen-data", false, true},
        {"eval", "", "held-out manifest for per-epoch evaluation"},
        {"codec", "", "trained codec checkpoint from train-codec", false, true},
        {"out", "", "checkpoint directory", false, true},
        {"resume", "false", "continue from the checkpoints in --out", true},
        {"model.d-model", std::to_string(mc.d_model), "transformer width"},
        {"model.enc-layers", std::to_string(mc.enc_layers), "encoder layers"},
        {"model.dec-layers", std::to_string(mc.dec_layers), "decoder layers"},
        {"model.heads", std::to_string(mc.heads), "attention heads"},
        {"model.ff-mult", std::to_string(mc.ff_mult), "feed-forward width multiplier"},
        {"model.max-len", std::to_string(mc.max_len), "positional window in frames/tokens"},
        {"model.seed", "1", "parameter initialization seed"},
        {"train.epochs", std::to_string(tc.epochs), "training epochs"},
        {"train.base-lr", detail::num_str(tc.base_lr), "peak learning rate"},
        {"train.warmup", detail::num_str(tc.warmup), "warmup fraction of total steps"},
        {"train.batch-size", std::to_string(tc.batch_size), "samples per optimizer step"},
        {"train.seed", "0", "data order and task sampling seed"},
        {"train.grad-clip", detail::num_str(tc.grad_clip), "global gradient norm cap, 0 disables"},
        {"train.eval-every", std::to_string(tc.eval_every), "epochs between evaluations"},
        {"train.dropout", detail::num_str(tc.dropout), "dropout probability"},
    };
    if (nar)
        opts.push_back({"ablate-task-embedding", "false", "freeze the codebook-order task vectors at zero", true});
    return opts;
}

inline const std::vector<CliCommand>& cli_commands() {
    static const std::vector<CliCommand> cmds = [] {
        std::vector<CliCommand> v;
        v.push_back({"gen-data",
                     "generate a synthetic mixture dataset with ground-truth references",
                     {
                         {"config", "", "key=value config file, flags take precedence"},
                         {"seed", "0", "dataset seed"},
                         {"n-train", "100", "training mixtures"},
                         {"n-eval", "20", "evaluation mixtures"},
                         {"speakers", "2", "speakers per mixture"},
                         {"duration", "2", "clip length in seconds"},
                         {"rate", "8000", "sample rate in Hz"},
                         {"out", "", "output dataset directory", false, true},
                         {"force", "false", "overwrite a non-empty output directory", true},
                     },
                     cmd_gen_data});
        v.push_back({"train-codec",
                     "fit the residual quantizer codec on a dataset's reference signals",
                     {
                         {"config", "", "key=value config file, flags take precedence"},
                         {"data", "", "training manifest from gen-data", false, true},
                         {"out", "", "codec checkpoint path", false, true},
                         {"codec.m", "8", "quantizer orders"},
                         {"codec.codebook-size", "64", "entries per codebook"},
                         {"codec.frame-len", "64", "analysis frame length in samples"},
                         {"codec.latent-dim", "32", "latent width per frame"},
                         {"epochs", "30", "codebook refinement rounds"},
                         {"seed", "1", "initialization seed"},
                     },
                     cmd_train_codec});
        v.push_back({"train-ar", "train the order-0 autoregressive model", train_model_options(false),
                     [](const KvConfig& c, std::ostream& o) { cmd_train_model(c, o, TrainTask::kAr); }});
        v.push_back({"train-nar", "train the higher-order non-autoregressive model", train_model_options(true),
                     [](const KvConfig& c, std::ostream& o) { cmd_train_model(c, o, TrainTask::kNar); }});
        std::vector<CliOption> sep = {
            {"config", "", "key=value config file, flags take precedence"},
            {"mixture", "", "input mixture WAV", false, true},
            {"codec", "", "codec checkpoint", false, true},
            {"ar", "", "order-0 model checkpoint", false, true},
            {"nar", "", "higher-order model checkpoint", false, true},
            {"out", "", "output directory for per-speaker WAVs and tokens", false, true},
        };
        for (const auto& o : detail::decode_options()) sep.push_back(o);
        v.push_back({"separate", "separate one mixture into per-speaker WAVs and token files", sep,
                     cmd_separate});
        std::vector<CliOption> ev = {
            {"config", "", "key=value config file, flags take precedence"},
            {"data", "", "evaluation manifest from gen-data", false, true},
            {"codec", "", "codec checkpoint", false, true},
            {"ar", "", "order-0 model checkpoint", false, true},
            {"nar", "", "higher-order model checkpoint", false, true},
            {"out", "", "report JSON path", false, true},
            {"workers", "1", "worker threads over samples"},
        };
        for (const auto& o : detail::decode_options()) ev.push_back(o);
        v.push_back({"evaluate", "run separation over an eval split and write a metrics report", ev,
                     cmd_evaluate});
        std::vector<CliOption> ab = {
            {"config", "", "key=value config file, flags take precedence"},
            {"what", "", "ablation: codebooks or temperature", false, true},
            {"data", "", "evaluation manifest from gen-data", false, true},
            {"codec", "", "codec checkpoint", false, true},
            {"out", "", "output CSV path", false, true},
            {"retrain", "false", "codebooks: retrain a codec per order count instead of truncating", true},
            {"train-data", "", "codebooks with --retrain: training manifest"},
            {"epochs", "30", "codebooks with --retrain: codebook refinement rounds"},
            {"codec-seed", "1", "codebooks with --retrain: codec initialization seed"},
            {"ar", "", "temperature: order-0 model checkpoint"},
            {"nar", "", "temperature: higher-order model checkpoint"},
            {"temps", "0.5,0.9,1,1.1,1.5", "temperature: comma-separated sweep values"},
        };
        for (const auto& o : detail::decode_options()) ab.push_back(o);
        v.push_back({"ablate", "reproduce the codebook-count and temperature ablation trends", ab, cmd_ablate});
        return v;
    }();
    return cmds;
}

inline void print_command_help(const CliCommand& cmd, std::ostream& os) {
    os << "usage: slmss " << cmd.name << " [--flag value]...\n";
    os << cmd.summary << "\n\nflags:\n";
    for (const auto& o : cmd.options) {
        const std::string head = "--" + o.key;
        os << "  " << head;
        for (size_t p = head.size(); p < 26; ++p) os << ' ';
        os << o.help;
        if (o.required)
            os << " (required)";
        else
            os << " (default: " << (o.def.empty() ? "none" : o.def) << ")";
        os << "\n";
    }
}

inline void print_global_help(std::ostream& os) {
    os << "usage: slmss <command> [--flag value]...\n\ncommands:\n";
    for (const auto& c : cli_commands()) {
        os << "  " << c.name;
        for (size_t p = c.name.size(); p < 14; ++p) os << ' ';
        os << c.summary << "\n";
    }
    os << "\nrun 'slmss <command> --help' for the command's flags and defaults\n";
}

inline KvConfig parse_command_args(const CliCommand& cmd, const std::vector<std::string>& args) {
    KvConfig merged;
    for (const auto& o : cmd.options) merged.set(o.key, o.def);
    KvConfig flags;
    size_t i = 0;
    while (i < args.size()) {
        std::string a = args[i];
        if (a.rfind("--", 0) != 0)
            throw UsageError(cmd.name + ": expected a --flag, got '" + a + "'");
        a = a.substr(2);
        std::string val;
        bool has_val = false;
        const size_t eq = a.find('=');
        if (eq != std::string::npos) {
            val = a.substr(eq + 1);
            a = a.substr(0, eq);
            has_val = true;
        }
        const CliOption* opt = nullptr;
        for (const auto& o : cmd.options)
            if (o.key == a) opt = &o;
        if (!opt) throw UsageError(cmd.name + ": unknown flag '--" + a + "'");
        if (opt->boolean) {
            if (!has_val) val = "true";
        } else if (!has_val) {
            if (i + 1 >= args.size()) throw UsageError(cmd.name + ": flag '--" + a + "' expects a value");
            val = args[++i];
        }
        flags.set(a, val);
        ++i;
    }
    if (flags.has("config") && !flags.str("config").empty())
        merged.overlay_checked(KvConfig::from_file(flags.str("config")), flags.str("config"));
    merged.overlay_checked(flags, cmd.name);
    return merged;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& os = std::cout,
                    std::ostream& err = std::cerr) {
    try {
        if (args.empty()) {
            print_global_help(err);
            return 1;
        }
        if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
            print_global_help(os);
            return 0;
        }
        const CliCommand* cmd = nullptr;
        for (const auto& c : cli_commands())
            if (c.name == args[0]) cmd = &c;
        if (!cmd) throw UsageError("unknown command '" + args[0] + "' (run slmss --help)");
        for (size_t i = 1; i < args.size(); ++i)
            if (args[i] == "--help" || args[i] == "-h") {
                print_command_help(*cmd, os);
                return 0;
            }
        const KvConfig cfg = parse_command_args(*cmd, {args.begin() + 1, args.end()});
        cmd->run(cfg, os);
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace slmss
