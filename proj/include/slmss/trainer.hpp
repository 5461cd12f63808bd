// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Teacher-forced training for the order-0 autoregressive model and the
// higher-order non-autoregressive model: linear-warmup cosine schedule,
// global-norm gradient clipping, per-epoch held-out evaluation with a
// best-checkpoint copy, and a train state (optimizer moments + RNG words +
// counters) that resumes bitwise-identically at any optimizer step.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/common.hpp"
#include "slmss/container.hpp"
#include "slmss/decode.hpp"
#include "slmss/metrics.hpp"
#include "slmss/optim.hpp"
#include "slmss/synthdata.hpp"

namespace slmss {

struct TrainConfig {
    int epochs = 30;
    real base_lr = real(5e-5);
    real warmup = real(0.1);  // fraction of total optimizer steps spent ramping up
    int batch_size = 8;
    uint64_t seed = 0;
    int m = 8;
    real grad_clip = real(1);
    int eval_every = 1;  // epochs between held-out evaluations
    std::string checkpoint_dir;
    real dropout = 0;
    bool ablate_task_embedding = false;  // freeze the task vectors at zero

    void validate() const {
        if (epochs < 1) throw UsageError("train: epochs must be >= 1");
        if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
        if (!(base_lr > 0)) throw UsageError("train: base_lr must be > 0");
        if (warmup < 0 || warmup >= 1) throw UsageError("train: warmup fraction must be in [0,1)");
        if (grad_clip < 0) throw UsageError("train: grad_clip must be >= 0");
        if (eval_every < 1) throw UsageError("train: eval_every must be >= 1");
        if (m < 1) throw UsageError("train: m must be >= 1");
        if (dropout < 0 || dropout >= 1) throw UsageError("train: dropout must be in [0,1)");
    }
};

struct TrainState {
    int64_t epoch = 0;        // completed epochs
    int64_t global_step = 0;  // completed optimizer steps
    OptimizerState opt;
    std::array<uint64_t, 4> rng_state{};
    real best_metric = std::numeric_limits<real>::infinity();  // lower is better
};

struct LossRow {
    int64_t step = 0;  // 1-based optimizer step count
    real lr = 0;
    real train_loss = 0;
    real eval_metric = std::numeric_limits<real>::quiet_NaN();  // set on epoch-end rows
};

struct TrainResult {
    std::vector<LossRow> rows;
    real best_metric = std::numeric_limits<real>::infinity();
    std::string best_path;
    std::string last_path;
    std::string state_path;
    std::string csv_path;
};

enum class TrainTask { kAr, kNar };

namespace detail {

inline std::string u64_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string real_str(real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

inline void save_train_state(const std::string& path, const TrainState& st, const std::string& task) {
    Container ct;
    ct.config = {{"kind", "trainstate"},
                 {"task", task},
                 {"epoch", st.epoch},
                 {"global_step", st.global_step},
                 {"adam_step", st.opt.step},
                 // As a string: the metric starts at infinity, which JSON
                 // numbers cannot represent.
                 {"best_metric", detail::real_str(st.best_metric)}};
    // RNG words as hex strings: JSON numbers cannot hold a full u64.
    std::vector<std::string> words;
    for (uint64_t w : st.rng_state) words.push_back(detail::u64_hex(w));
    ct.config["rng_state"] = words;
    for (const auto& [name, m] : st.opt.m) {
        Tensor t = Tensor::zeros({static_cast<int>(m.size())});
        t.data() = m;
        ct.tensors["adam.m." + name] = t;
    }
    for (const auto& [name, v] : st.opt.v) {
        Tensor t = Tensor::zeros({static_cast<int>(v.size())});
        t.data() = v;
        ct.tensors["adam.v." + name] = t;
    }
    save_container(path, ct);
}

inline TrainState load_train_state(const std::string& path, const std::string& expect_task) {
    Container ct = load_container(path);
    if (ct.config.value("kind", "") != "trainstate")
        throw DataError("load_train_state: " + path + " is not a train state (kind='" +
                        ct.config.value("kind", "") + "')");
    const std::string task = ct.config.value("task", "");
    if (task != expect_task)
        throw DataError("load_train_state: " + path + " trains task '" + task + "', expected '" +
                        expect_task + "'");
    TrainState st;
    st.epoch = ct.config.at("epoch");
    st.global_step = ct.config.at("global_step");
    st.opt.step = ct.config.at("adam_step");
    st.best_metric =
        static_cast<real>(std::strtod(ct.config.at("best_metric").get<std::string>().c_str(), nullptr));
    const auto words = ct.config.at("rng_state").get<std::vector<std::string>>();
    if (words.size() != 4) throw DataError("load_train_state: " + path + ": malformed rng_state");
    for (size_t i = 0; i < 4; ++i) st.rng_state[i] = std::stoull(words[i], nullptr, 16);
    for (auto& [name, t] : ct.tensors) {
        if (name.rfind("adam.m.", 0) == 0)
            st.opt.m[name.substr(7)] = t.data();
        else if (name.rfind("adam.v.", 0) == 0)
            st.opt.v[name.substr(7)] = t.data();
        else
            throw DataError("load_train_state: " + path + ": unexpected tensor " + name);
    }
    return st;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("train: cannot open " + path + " for writing");
    f << "step,lr,train_loss,eval_metric\n";
    for (const auto& r : rows) {
        f << r.step << ',' << detail::real_str(r.lr) << ',' << detail::real_str(r.train_loss) << ',';
        if (!std::isnan(r.eval_metric)) f << detail::real_str(r.eval_metric);
        f << '\n';
    }
    if (!f) throw DataError("train: write failed for " + path);
}

// Drives one model (AR: encoder + decoder on order 0; NAR: encoder + decoder
// on a sampled higher order) through the schedule. step()/evaluate()/save()/
// load() are public so callers can checkpoint at any optimizer step; run()
// is the stock loop with per-epoch evaluation and checkpoints.
class Trainer {
public:
    Trainer(SeqModel& model, const RvqCodec& codec, const std::vector<MixtureSample>& train_set,
            const std::vector<MixtureSample>& eval_set, const TrainConfig& cfg, TrainTask task)
        : model_(model), codec_(codec), cfg_(cfg), task_(task), rng_(Rng::stream(cfg.seed, 0x747261696e)) {
        cfg_.validate();
        if (train_set.empty()) throw UsageError("train: empty training set");
        if (task_ == TrainTask::kNar && cfg_.m < 2)
            throw UsageError("train: the higher-order model needs m >= 2");
        if (model_.cfg.m != cfg_.m)
            throw UsageError("train: model has m=" + std::to_string(model_.cfg.m) + ", config wants m=" +
                             std::to_string(cfg_.m));
        if (codec_.latent_dim != model_.cfg.latent_dim)
            throw DataError("train: codec latent width " + std::to_string(codec_.latent_dim) +
                            " does not match model latent_dim " + std::to_string(model_.cfg.latent_dim));
        model_.need_section("enc");
        model_.need_section(task_ == TrainTask::kAr ? "ar" : "nar");

        for (size_t i = 0; i < train_set.size(); ++i) pairs_.push_back(make_pair_checked(train_set[i], i));
        for (size_t i = 0; i < eval_set.size(); ++i) eval_pairs_.push_back(make_pair_checked(eval_set[i], i));

        steps_per_epoch_ = (static_cast<int64_t>(pairs_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
        total_steps_ = steps_per_epoch_ * cfg_.epochs;
        sched_.base_lr = cfg_.base_lr;
        sched_.total_steps = total_steps_;
        sched_.warmup_steps = static_cast<int64_t>(std::llround(static_cast<double>(cfg_.warmup) *
                                                                static_cast<double>(total_steps_)));
        if (sched_.warmup_steps >= total_steps_)
            throw UsageError("train: warmup spans all " + std::to_string(total_steps_) + " steps");

        if (!cfg_.checkpoint_dir.empty()) std::filesystem::create_directories(cfg_.checkpoint_dir);
        params_ = section_params(model_, {"enc", task_ == TrainTask::kAr ? "ar" : "nar"});
        if (task_ == TrainTask::kNar && cfg_.ablate_task_embedding) {
            auto& task_table = model_.params.at("nar.task");
            std::fill(task_table.data().begin(), task_table.data().end(), real(0));
            params_.erase("nar.task");  // frozen at zero, never updated
        }
        state_.rng_state = rng_.save_state();
    }

    // One optimizer step over the next minibatch. Gradients from every
    // sample accumulate on one tape; the batch loss is the mean of the
    // per-sample token-mean cross-entropies.
    real step() {
        if (state_.global_step >= total_steps_)
            throw UsageError("train: schedule exhausted at step " + std::to_string(state_.global_step));
        const int64_t epoch = state_.global_step / steps_per_epoch_;
        const int64_t in_epoch = state_.global_step % steps_per_epoch_;
        ensure_permutation(epoch);

        const int64_t n = static_cast<int64_t>(pairs_.size());
        const int64_t start = in_epoch * cfg_.batch_size;
        const int64_t count = std::min<int64_t>(cfg_.batch_size, n - start);
        const real lr = lr_at(sched_, state_.global_step);

        for (auto& [name, p] : params_) p.zero_grad();
        real loss_val;
        real grad_norm;
        try {
            Graph g;
            // One task order per batch, drawn before the forwards so the RNG
            // stream is identical whether or not dropout consumes draws.
            const int order_i =
                task_ == TrainTask::kNar ? 1 + static_cast<int>(rng_.uniform_int(model_.cfg.m - 1)) : 0;
            Tensor total;
            for (int64_t b = 0; b < count; ++b) {
                const TrainPair& p = pairs_[perm_[start + b]];
                Tensor one = scale(sample_loss(p, order_i), real(1) / static_cast<real>(count));
                total = b == 0 ? one : add(total, one);
            }
            loss_val = total.data()[0];
            if (!std::isfinite(loss_val)) throw NumericError("non-finite loss");
            g.backward(total);
            grad_norm = clip_grad_norm(params_, cfg_.grad_clip);
            if (!std::isfinite(grad_norm)) throw NumericError("non-finite gradient norm");
            adam_step(params_, state_.opt, lr);
        } catch (const NumericError& e) {
            // Op-level NaN guards can fire mid-forward; attach the step context.
            throw NumericError("train: " + std::string(e.what()) + " at step " +
                               std::to_string(state_.global_step + 1) + " (lr " + detail::real_str(lr) +
                               ", last grad norm " + detail::real_str(last_grad_norm_) + ")");
        }
        last_grad_norm_ = grad_norm;
        state_.global_step += 1;
        state_.epoch = state_.global_step / steps_per_epoch_;
        state_.rng_state = rng_.save_state();
        rows_.push_back({state_.global_step, lr, loss_val, std::numeric_limits<real>::quiet_NaN()});
        return loss_val;
    }

    // Held-out metric, lower is better. AR: pooled token error rate of
    // greedy unconstrained rollouts against the serialized targets. NAR:
    // mean teacher-forced cross-entropy over all higher orders.
    real evaluate() {
        if (eval_pairs_.empty()) throw UsageError("train: evaluate() without an eval set");
        if (task_ == TrainTask::kAr) {
            PooledRate pooled;
            for (const auto& p : eval_pairs_) {
                Tensor h = encode_mixture(model_, codec_, p.mixture);
                const auto& c0 = p.sot.orders[0];
                DecodeConfig dc;
                dc.beam_size = 1;
                dc.ngram_block_n = 0;
                dc.min_len = 0;
                dc.max_len = std::min(model_.cfg.max_len - 1, static_cast<int>(c0.size()) + 7);
                const std::vector<int> out = ar_decode(model_, h, dc);
                const std::vector<int> out_tail(out.begin() + 1, out.end());
                const std::vector<int> ref_tail(c0.begin() + 1, c0.end());
                pooled.add({edit_distance(out_tail, ref_tail).distance,
                            static_cast<int64_t>(ref_tail.size())});
            }
            return pooled.percent();
        }
        real sum = 0;
        int64_t terms = 0;
        for (const auto& p : eval_pairs_) {
            Tensor h = encode_mixture(model_, codec_, p.mixture);
            for (int i = 1; i < model_.cfg.m; ++i) {
                sum += nar_order_loss(p, i, h).data()[0];
                terms += 1;
            }
        }
        return sum / static_cast<real>(terms);
    }

    // Full schedule: remaining steps, with evaluation and checkpoints at
    // epoch boundaries (best checkpoint on strict metric improvement).
    TrainResult run() {
        while (state_.global_step < total_steps_) {
            step();
            if (state_.global_step % steps_per_epoch_ != 0) continue;
            const int64_t epoch = state_.global_step / steps_per_epoch_;  // just completed
            const bool last = epoch == cfg_.epochs;
            if (!eval_pairs_.empty() && (epoch % cfg_.eval_every == 0 || last)) {
                const real metric = evaluate();
                rows_.back().eval_metric = metric;
                if (metric < state_.best_metric) {
                    state_.best_metric = metric;
                    if (!cfg_.checkpoint_dir.empty())
                        save_model(path_of("best.ckpt"), model_, sections(), progress_json());
                }
            }
            if (!cfg_.checkpoint_dir.empty()) save(cfg_.checkpoint_dir);
        }
        TrainResult res;
        res.rows = rows_;
        res.best_metric = state_.best_metric;
        if (!cfg_.checkpoint_dir.empty()) {
            res.best_path = std::isfinite(state_.best_metric) ? path_of("best.ckpt") : "";
            res.last_path = path_of("last.ckpt");
            res.state_path = path_of("state.ckpt");
            res.csv_path = path_of("loss.csv");
        }
        return res;
    }

    // Writes model + train state + the loss rows so far.
    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        save_model(join(dir, "last.ckpt"), model_, sections(), progress_json());
        save_train_state(join(dir, "state.ckpt"), state_, task_name());
        write_loss_csv(join(dir, "loss.csv"), rows_);
    }

    // Restores model + train state; continuation is bitwise-identical to an
    // uninterrupted run because epoch permutations derive from (seed, epoch)
    // and every other draw comes from the serialized RNG.
    void load(const std::string& dir) {
        SeqModel loaded = load_model(join(dir, "last.ckpt"));
        if (model_config_json(loaded.cfg) != model_config_json(model_.cfg))
            throw DataError("train: checkpoint model config does not match the constructed model");
        model_ = std::move(loaded);
        state_ = load_train_state(join(dir, "state.ckpt"), task_name());
        rng_.load_state(state_.rng_state);
        params_ = section_params(model_, {"enc", task_ == TrainTask::kAr ? "ar" : "nar"});
        if (task_ == TrainTask::kNar && cfg_.ablate_task_embedding) params_.erase("nar.task");
        perm_epoch_ = -1;
    }

    const TrainState& state() const { return state_; }
    const std::vector<LossRow>& rows() const { return rows_; }
    int64_t total_steps() const { return total_steps_; }
    int64_t steps_per_epoch() const { return steps_per_epoch_; }
    const LrSchedule& schedule() const { return sched_; }

private:
    struct TrainPair {
        std::vector<real> mixture;
        SotSequence sot;
    };

    TrainPair make_pair_checked(const MixtureSample& s, size_t index) {
        auto [mixture, sot] = make_training_pair(codec_, s, cfg_.m);
        const int frames = static_cast<int>((mixture.size() + codec_.hop - 1) / codec_.hop);
        if (frames > model_.cfg.max_len)
            throw DataError("train: sample " + std::to_string(index) + " has " + std::to_string(frames) +
                            " frames, model max_len is " + std::to_string(model_.cfg.max_len));
        if (static_cast<int>(sot.orders[0].size()) > model_.cfg.max_len)
            throw DataError("train: sample " + std::to_string(index) + " serializes to " +
                            std::to_string(sot.orders[0].size()) + " tokens, model max_len is " +
                            std::to_string(model_.cfg.max_len));
        return {std::move(mixture), std::move(sot)};
    }

    void ensure_permutation(int64_t epoch) {
        if (perm_epoch_ == epoch) return;
        perm_.resize(pairs_.size());
        std::iota(perm_.begin(), perm_.end(), 0);
        // Keyed by (seed, epoch), not drawn from the flowing RNG, so a
        // mid-epoch resume can rebuild the order without replaying steps.
        Rng r = Rng::stream(cfg_.seed, 0x7065726d + static_cast<uint64_t>(epoch));
        r.shuffle(perm_.begin(), perm_.end());
        perm_epoch_ = epoch;
    }

    Tensor sample_loss(const TrainPair& p, int order_i) {
        Tensor h = encode_mixture(model_, codec_, p.mixture, cfg_.dropout, &rng_);
        if (task_ == TrainTask::kAr) {
            const auto& c0 = p.sot.orders[0];
            const std::vector<int> input(c0.begin(), c0.end() - 1);
            const std::vector<int> target(c0.begin() + 1, c0.end());
            return cross_entropy(ar_logits(model_, input, h, cfg_.dropout, &rng_), target);
        }
        return nar_order_loss(p, order_i, h, cfg_.dropout, &rng_);
    }

    Tensor nar_order_loss(const TrainPair& p, int order_i, const Tensor& h, real drop = 0,
                          Rng* rng = nullptr) {
        const std::vector<std::vector<int>> lower(p.sot.orders.begin(), p.sot.orders.begin() + order_i);
        Tensor logits = nar_logits(model_, lower, order_i, h, drop, rng);
        const Vocab vb = model_.vocab();
        std::vector<int> target = p.sot.orders[order_i];
        for (auto& t : target)
            if (vb.is_special(t)) t = -100;  // cross_entropy ignore_index
        return cross_entropy(logits, target);
    }

    std::set<std::string> sections() const {
        return {"enc", task_ == TrainTask::kAr ? "ar" : "nar"};
    }
    std::string task_name() const { return task_ == TrainTask::kAr ? "ar" : "nar"; }
    static std::string join(const std::string& dir, const std::string& name) {
        return (std::filesystem::path(dir) / name).string();
    }
    std::string path_of(const std::string& name) const { return join(cfg_.checkpoint_dir, name); }
    nlohmann::json progress_json() const {
        return {{"epoch", state_.epoch}, {"global_step", state_.global_step}};
    }

    SeqModel& model_;
    const RvqCodec& codec_;
    TrainConfig cfg_;
    TrainTask task_;
    Rng rng_;
    std::vector<TrainPair> pairs_;
    std::vector<TrainPair> eval_pairs_;
    std::vector<size_t> perm_;
    int64_t perm_epoch_ = -1;
    int64_t steps_per_epoch_ = 0;
    int64_t total_steps_ = 0;
    LrSchedule sched_;
    ParamMap params_;
    TrainState state_;
    std::vector<LossRow> rows_;
    real last_grad_norm_ = 0;
};

inline TrainResult train_ar(SeqModel& model, const RvqCodec& codec,
                            const std::vector<MixtureSample>& train_set,
                            const std::vector<MixtureSample>& eval_set, const TrainConfig& cfg,
                            bool resume = false) {
    Trainer tr(model, codec, train_set, eval_set, cfg, TrainTask::kAr);
    if (resume) tr.load(cfg.checkpoint_dir);
    return tr.run();
}

inline TrainResult train_nar(SeqModel& model, const RvqCodec& codec,
                             const std::vector<MixtureSample>& train_set,
                             const std::vector<MixtureSample>& eval_set, const TrainConfig& cfg,
                             bool resume = false) {
    Trainer tr(model, codec, train_set, eval_set, cfg, TrainTask::kNar);
    if (resume) tr.load(cfg.checkpoint_dir);
    return tr.run();
}

}  // namespace slmss
