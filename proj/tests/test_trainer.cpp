// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "slmss/trainer.hpp"

namespace slmss {
namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("slmss_trainer_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

ModelConfig trainer_model_config(int m) {
    ModelConfig mc;
    mc.d_model = 32;
    mc.enc_layers = 1;
    mc.dec_layers = 1;
    mc.heads = 2;
    mc.ff_mult = 2;
    mc.m = m;
    mc.codebook_size = 16;
    mc.max_len = 160;
    mc.latent_dim = 8;
    return mc;
}

// 0.512 s = exactly 64 codec frames; one-speaker serialization is 66 tokens.
std::vector<MixtureSample> mini_set(uint64_t seed, int n, int speakers = 1) {
    std::vector<MixtureSample> v;
    for (int i = 0; i < n; ++i) v.push_back(make_sample(seed, i, speakers, real(0.512)));
    return v;
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    TrainConfig bad = cfg;
    bad.epochs = 0;
    EXPECT_THROW(bad.validate(), UsageError);
    bad = cfg;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), UsageError);
    bad = cfg;
    bad.warmup = real(1);
    EXPECT_THROW(bad.validate(), UsageError);
    bad = cfg;
    bad.base_lr = 0;
    EXPECT_THROW(bad.validate(), UsageError);
}

TEST(Trainer, WarmupMustNotSpanAllSteps) {
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 1);
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.m = 2;
    cfg.warmup = real(0.99);  // 1 step per epoch -> warmup would cover everything
    EXPECT_THROW(Trainer(m, codec, mini_set(3, 4), {}, cfg, TrainTask::kAr), UsageError);
}

TEST(Trainer, LossFallsWithinEachOfTheFirstEpochs) {
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 2);
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 4;
    cfg.m = 2;
    cfg.seed = 7;
    Trainer tr(m, codec, mini_set(11, 24, 2), {}, cfg, TrainTask::kAr);
    TrainResult res = tr.run();
    const int64_t spe = tr.steps_per_epoch();
    ASSERT_EQ(static_cast<int64_t>(res.rows.size()), spe * 3);
    for (int e = 0; e < 3; ++e) {
        const real first = res.rows[e * spe].train_loss;
        const real last = res.rows[(e + 1) * spe - 1].train_loss;
        EXPECT_LT(last, first) << "epoch " << e;
    }
}

TEST(Trainer, LrTrajectoryMatchesScheduleExactly) {
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 3);
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.m = 2;
    Trainer tr(m, codec, mini_set(13, 6), {}, cfg, TrainTask::kAr);
    TrainResult res = tr.run();
    for (size_t i = 0; i < res.rows.size(); ++i)
        EXPECT_EQ(res.rows[i].lr, lr_at(tr.schedule(), static_cast<int64_t>(i))) << "row " << i;
}

TEST(Trainer, FixedSeedGivesIdenticalLossCurves) {
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 4;
    cfg.m = 2;
    cfg.seed = 21;
    std::vector<std::vector<LossRow>> curves;
    for (int run = 0; run < 2; ++run) {
        SeqModel m = make_model(mc, 4);
        Trainer tr(m, codec, mini_set(17, 8), {}, cfg, TrainTask::kAr);
        curves.push_back(tr.run().rows);
    }
    ASSERT_EQ(curves[0].size(), curves[1].size());
    for (size_t i = 0; i < curves[0].size(); ++i) {
        EXPECT_EQ(curves[0][i].train_loss, curves[1][i].train_loss) << "row " << i;
        EXPECT_EQ(curves[0][i].lr, curves[1][i].lr) << "row " << i;
    }
}

TEST(Trainer, OverfitReachesFullTeacherForcedAccuracy) {
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 5);
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    std::vector<MixtureSample> data = mini_set(19, 2);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.base_lr = real(2e-3);
    cfg.batch_size = 2;
    cfg.m = 2;
    cfg.seed = 3;
    Trainer tr(m, codec, data, {}, cfg, TrainTask::kAr);
    tr.run();

    for (const auto& s : data) {
        auto [mixture, sot] = make_training_pair(codec, s, 2);
        Tensor h = encode_mixture(m, codec, mixture);
        const auto& c0 = sot.orders[0];
        const std::vector<int> input(c0.begin(), c0.end() - 1);
        Tensor logits = ar_logits(m, input, h);
        const int v = logits.dim(1);
        for (int t = 0; t < logits.dim(0); ++t) {
            const real* row = logits.data().data() + static_cast<size_t>(t) * v;
            int best = 0;
            for (int c = 1; c < v; ++c)
                if (row[c] > row[best]) best = c;
            EXPECT_EQ(best, c0[t + 1]) << "position " << t;
        }
    }
}

TEST(Trainer, EveryNarEmbeddingTableTrainsWithinOneEpoch) {
    const int m_orders = 4;
    ModelConfig mc = trainer_model_config(m_orders);
    SeqModel m = make_model(mc, 6);
    RvqCodec codec = make_codec(m_orders, 16, 8000, 5, 64, 8);
    std::vector<Tensor> before;
    for (int j = 0; j < m_orders; ++j) {
        const Tensor& t = m.p("nar.embed." + std::to_string(j));
        Tensor copy = Tensor::zeros(t.shape());
        copy.data() = t.data();
        before.push_back(copy);
    }
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 1;  // 24 batches -> 24 independent task draws
    cfg.m = m_orders;
    cfg.seed = 9;
    Trainer tr(m, codec, mini_set(23, 24), {}, cfg, TrainTask::kNar);
    tr.run();
    for (int j = 0; j < m_orders; ++j) {
        const Tensor& after = m.p("nar.embed." + std::to_string(j));
        real delta = 0;
        for (size_t i = 0; i < after.data().size(); ++i)
            delta = std::max(delta, std::abs(after.data()[i] - before[j].data()[i]));
        EXPECT_GT(delta, real(0)) << "embedding table " << j << " never trained";
    }
}

TEST(Trainer, TaskEmbeddingAblationHurtsHeldOutLoss) {
    const int m_orders = 3;
    RvqCodec codec = make_codec(m_orders, 16, 8000, 5, 64, 8);
    std::vector<MixtureSample> train_set = mini_set(29, 12);
    std::vector<MixtureSample> eval_set;
    for (int i = 0; i < 4; ++i) eval_set.push_back(make_sample(29, 100 + i, 1, real(0.512)));
    for (uint64_t seed : {1u, 2u, 3u}) {
        real metric[2];
        for (int ablate = 0; ablate < 2; ++ablate) {
            ModelConfig mc = trainer_model_config(m_orders);
            SeqModel m = make_model(mc, seed);
            TrainConfig cfg;
            cfg.epochs = 12;
            cfg.base_lr = real(1e-3);
            cfg.batch_size = 4;
            cfg.m = m_orders;
            cfg.seed = seed;
            cfg.ablate_task_embedding = ablate == 1;
            Trainer tr(m, codec, train_set, eval_set, cfg, TrainTask::kNar);
            tr.run();
            metric[ablate] = tr.evaluate();
        }
        EXPECT_LT(metric[0], metric[1]) << "seed " << seed;
    }
}

TEST(Trainer, ResumeContinuesBitwiseIdentically) {
    TempDir dir;
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    std::vector<MixtureSample> data = mini_set(31, 8);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 2;
    cfg.m = 2;
    cfg.seed = 12;

    // Uninterrupted reference run: 15 steps.
    SeqModel ma = make_model(mc, 7);
    Trainer ta(ma, codec, data, {}, cfg, TrainTask::kAr);
    std::vector<real> straight;
    for (int i = 0; i < 15; ++i) straight.push_back(ta.step());

    // Save at step 5 (mid-epoch), then resume in a fresh trainer.
    SeqModel mb = make_model(mc, 7);
    Trainer tb(mb, codec, data, {}, cfg, TrainTask::kAr);
    for (int i = 0; i < 5; ++i) tb.step();
    tb.save(dir.str());

    SeqModel mc2 = make_model(mc, 999);  // overwritten by load
    Trainer tc(mc2, codec, data, {}, cfg, TrainTask::kAr);
    tc.load(dir.str());
    EXPECT_EQ(tc.state().global_step, 5);
    for (int i = 0; i < 10; ++i) {
        const real loss = tc.step();
        EXPECT_EQ(loss, straight[5 + i]) << "step " << 5 + i;
    }
}

TEST(Trainer, ResumeFromMissingDirFailsClearly) {
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 7);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.m = 2;
    Trainer tr(m, codec, mini_set(31, 4), {}, cfg, TrainTask::kAr);
    EXPECT_THROW(tr.load("/nonexistent/trainer/dir"), DataError);
}

TEST(Trainer, CorruptedStateFailsChecksumWithoutPartialLoad) {
    TempDir dir;
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 7);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 2;
    cfg.m = 2;
    Trainer tr(m, codec, mini_set(31, 4), {}, cfg, TrainTask::kAr);
    tr.step();
    tr.save(dir.str());

    const std::string state_path = (dir.path / "state.ckpt").string();
    std::ifstream in(state_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(state_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));  // truncate
    out.close();
    try {
        load_train_state(state_path, "ar");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
}

TEST(Trainer, VersionMismatchNamesBothVersions) {
    TempDir dir;
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 7);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.m = 2;
    Trainer tr(m, codec, mini_set(31, 4), {}, cfg, TrainTask::kAr);
    tr.save(dir.str());

    // Bump the container version field and re-stamp the checksum.
    const std::string state_path = (dir.path / "state.ckpt").string();
    std::ifstream in(state_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    bytes[4] = 99;
    const uint64_t sum = fnv1a(bytes.data(), bytes.size() - 8);
    for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<char>((sum >> (8 * i)) & 0xff);
    std::ofstream out(state_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
        load_train_state(state_path, "ar");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("99"), std::string::npos) << msg;
        EXPECT_NE(msg.find(std::to_string(kContainerVersion)), std::string::npos) << msg;
    }
}

TEST(Trainer, NanLossAbortsWithDiagnostics) {
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 7);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.m = 2;
    Trainer tr(m, codec, mini_set(31, 4), {}, cfg, TrainTask::kAr);
    m.params.at("enc.embed.w").data()[0] = std::numeric_limits<real>::quiet_NaN();
    try {
        tr.step();
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step"), std::string::npos) << msg;
        EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
    }
}

TEST(Trainer, RunWritesCheckpointsAndLossCsv) {
    TempDir dir;
    RvqCodec codec = make_codec(2, 16, 8000, 5, 64, 8);
    ModelConfig mc = trainer_model_config(2);
    SeqModel m = make_model(mc, 8);
    std::vector<MixtureSample> eval_set = {make_sample(37, 50, 1, real(0.512))};
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.base_lr = real(1e-3);
    cfg.batch_size = 2;
    cfg.m = 2;
    cfg.checkpoint_dir = dir.str();
    Trainer tr(m, codec, mini_set(37, 4), eval_set, cfg, TrainTask::kAr);
    TrainResult res = tr.run();
    EXPECT_TRUE(fs::exists(res.last_path));
    EXPECT_TRUE(fs::exists(res.state_path));
    EXPECT_TRUE(fs::exists(res.best_path));
    EXPECT_TRUE(fs::exists(res.csv_path));
    EXPECT_TRUE(std::isfinite(res.best_metric));

    std::ifstream f(res.csv_path);
    std::string line;
    std::getline(f, line);
    EXPECT_EQ(line, "step,lr,train_loss,eval_metric");
    int rows = 0;
    while (std::getline(f, line)) rows += 1;
    EXPECT_EQ(rows, static_cast<int>(tr.total_steps()));

    SeqModel best = load_model(res.best_path);
    EXPECT_TRUE(best.has_section("enc"));
    EXPECT_TRUE(best.has_section("ar"));
    EXPECT_FALSE(best.has_section("nar"));
}

TEST(Trainer, TaskOrderSamplingIsUniform) {
    // The higher-order task index is the first draw from the training stream
    // each batch; with dropout 0 nothing else consumes it, so the stream
    // below is exactly the sequence of task draws the trainer makes.
    const int m_orders = 8;
    Rng rng = Rng::stream(42, 0x747261696e);
    const int draws = 20000;
    std::vector<int> counts(m_orders, 0);
    for (int i = 0; i < draws; ++i) counts[1 + static_cast<int>(rng.uniform_int(m_orders - 1))] += 1;
    const real p = real(1) / (m_orders - 1);
    const real sigma = std::sqrt(p * (1 - p) * draws);
    for (int i = 1; i < m_orders; ++i)
        EXPECT_NEAR(static_cast<real>(counts[i]), p * draws, 3 * sigma) << "order " << i;
    EXPECT_EQ(counts[0], 0);
}

}  // namespace
}  // namespace slmss
