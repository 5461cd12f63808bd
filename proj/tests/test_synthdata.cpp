// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slmss/synthdata.hpp"

namespace slmss {
namespace {

TEST(MakeSample, DeterministicPerSeedAndIndex) {
    MixtureSample a = make_sample(5, 3, 2);
    MixtureSample b = make_sample(5, 3, 2);
    ASSERT_EQ(a.mixture.size(), b.mixture.size());
    for (size_t i = 0; i < a.mixture.size(); ++i) EXPECT_EQ(a.mixture[i], b.mixture[i]);
    EXPECT_EQ(a.symbols, b.symbols);
    MixtureSample c = make_sample(5, 4, 2);
    bool differs = c.mixture.size() != a.mixture.size();
    for (size_t i = 0; !differs && i < a.mixture.size(); ++i) differs = a.mixture[i] != c.mixture[i];
    EXPECT_TRUE(differs);
}

TEST(MakeSample, MixtureIsSumOfShiftedRefs) {
    for (int idx = 0; idx < 10; ++idx) {
        MixtureSample s = make_sample(9, idx, 2);
        real num = 0, den = 0;
        for (size_t i = 0; i < s.mixture.size(); ++i) {
            real sum = 0;
            for (const auto& r : s.refs) sum += r[i];
            num += (s.mixture[i] - sum) * (s.mixture[i] - sum);
            den += s.mixture[i] * s.mixture[i];
        }
        EXPECT_LT(std::sqrt(num / std::max(den, real(1e-30))), real(1e-6));
        real peak = 0;
        for (real v : s.mixture) peak = std::max(peak, std::abs(v));
        EXPECT_LE(peak, real(0.99) + real(1e-12));
    }
}

TEST(MakeSample, FundamentalsAtLeastTenHzApart) {
    for (int idx = 0; idx < 50; ++idx) {
        MixtureSample s = make_sample(13, idx, 2);
        EXPECT_GE(std::abs(s.profiles[0].fundamental - s.profiles[1].fundamental), real(10));
        for (const auto& p : s.profiles) {
            EXPECT_GE(p.fundamental, real(80));
            EXPECT_LE(p.fundamental, real(300));
        }
    }
}

TEST(MakeSample, OnsetsFrameAlignedWithinHalfSecond) {
    for (int idx = 0; idx < 20; ++idx) {
        MixtureSample s = make_sample(21, idx, 2);
        for (real o : s.onsets) {
            EXPECT_GE(o, real(0));
            EXPECT_LE(o, real(0.5) + real(1e-9));
            const int64_t samples = std::llround(o * s.sample_rate);
            EXPECT_EQ(samples % 64, 0) << "onset " << o;
        }
        EXPECT_GE(std::abs(s.onsets[0] - s.onsets[1]), real(0.1) - real(1e-9));
    }
}

// The oracle everything else leans on: matched filtering a clean reference
// recovers its symbol stream exactly.
TEST(DecodeSymbols, RecoversCleanReferenceExactly) {
    for (int idx = 0; idx < 20; ++idx) {
        MixtureSample s = make_sample(33, idx, 2);
        for (size_t k = 0; k < s.refs.size(); ++k) {
            const int onset = static_cast<int>(std::lround(s.onsets[k] * s.sample_rate));
            std::vector<int> got = decode_symbols(s.profiles[k], s.refs[k], onset, s.sample_rate, s.gain);
            EXPECT_EQ(got, s.symbols[k]) << "sample " << idx << " speaker " << k;
        }
    }
}

TEST(DecodeSymbols, SilenceDecodesToNothing) {
    MixtureSample s = make_sample(33, 0, 1);
    std::vector<real> silence(s.mixture.size(), real(0));
    EXPECT_TRUE(decode_symbols(s.profiles[0], silence, 0, s.sample_rate).empty());
}

TEST(MakeSample, SingleAndTripleSpeakerCounts) {
    EXPECT_EQ(make_sample(1, 0, 1).refs.size(), 1u);
    EXPECT_EQ(make_sample(1, 0, 3).refs.size(), 3u);
    EXPECT_THROW(make_sample(1, 0, 0), UsageError);
    EXPECT_THROW(make_sample(1, 0, 4), UsageError);
}

TEST(Dataset, WriteReadRoundTrip) {
    const std::string dir = "/tmp/slmss_test_dataset";
    std::filesystem::remove_all(dir);
    DatasetPaths paths = gen_dataset(dir, 7, 3, 2, 2);
    std::vector<MixtureSample> train = read_dataset(paths.train_manifest);
    std::vector<MixtureSample> eval_set = read_dataset(paths.eval_manifest);
    ASSERT_EQ(train.size(), 3u);
    ASSERT_EQ(eval_set.size(), 2u);

    MixtureSample orig = make_sample(7, 0, 2);
    ASSERT_EQ(train[0].mixture.size(), orig.mixture.size());
    for (size_t i = 0; i < orig.mixture.size(); ++i)
        EXPECT_NEAR(train[0].mixture[i], orig.mixture[i], real(1) / 32767);
    EXPECT_EQ(train[0].symbols, orig.symbols);
    EXPECT_EQ(train[0].onsets.size(), orig.onsets.size());
    EXPECT_DOUBLE_EQ(train[0].profiles[1].fundamental, orig.profiles[1].fundamental);
    // Train and eval splits are disjoint sample indices.
    EXPECT_EQ(eval_set[0].id, "sample_3");

    // After 16-bit quantization the identity holds loosely.
    for (size_t i = 0; i < train[0].mixture.size(); ++i) {
        real sum = 0;
        for (const auto& r : train[0].refs) sum += r[i];
        EXPECT_NEAR(train[0].mixture[i], sum, real(3) / 32767);
    }
    std::filesystem::remove_all(dir);
}

TEST(Dataset, ByteIdenticalPerSeed) {
    const std::string d1 = "/tmp/slmss_test_ds_a", d2 = "/tmp/slmss_test_ds_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    gen_dataset(d1, 42, 2, 1, 2);
    gen_dataset(d2, 42, 2, 1, 2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    for (const char* rel : {"train/manifest.jsonl", "train/wav/sample_0_mix.wav", "eval/wav/sample_2_ref1.wav"})
        EXPECT_EQ(slurp(d1 + "/" + rel), slurp(d2 + "/" + rel)) << rel;
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST(TrainingPair, StructureAndFifoOrder) {
    RvqCodec codec = make_codec(4, 64, 8000, 3);
    MixtureSample s = make_sample(55, 2, 2);
    auto [mixture, target] = make_training_pair(codec, s);
    EXPECT_EQ(mixture.size(), s.mixture.size());
    const Vocab vb{codec.codebook_size};
    int sc = 0;
    for (int t : target.orders[0])
        if (t == vb.sc()) ++sc;
    EXPECT_EQ(sc, 1);
    EXPECT_EQ(target.speaker_count, 2);

    int64_t total_frames = 0;
    for (const auto& r : s.refs) total_frames += rvq_encode(codec, r).T();
    EXPECT_EQ(static_cast<int64_t>(target.orders[0].size()), total_frames + 2 + 1);

    const size_t first = static_cast<size_t>(s.onsets[0] <= s.onsets[1] ? 0 : 1);
    const std::vector<int> first_tokens = rvq_encode(codec, s.refs[first]).orders[0];
    ASSERT_GE(target.orders[0].size(), first_tokens.size() + 1);
    for (size_t i = 0; i < first_tokens.size(); ++i)
        EXPECT_EQ(target.orders[0][i + 1], first_tokens[i]) << "position " << i;

    EXPECT_THROW(make_training_pair(codec, s, 8), UsageError);
}

}  // namespace
}  // namespace slmss
