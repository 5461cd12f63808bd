// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#include <gtest/gtest.h>

#include <filesystem>

#include "slmss/sot.hpp"

using namespace slmss;
namespace fs = std::filesystem;

namespace {

const Vocab kVocab{64};  // SOS 64, SC 65, EOS 66

TokenGrid grid_of(std::vector<std::vector<int>> orders) {
    TokenGrid g;
    g.orders = std::move(orders);
    g.frame_hop = 64;
    g.sample_rate = 8000;
    g.sample_count = g.T() * 64;
    return g;
}

TokenGrid random_grid(Rng& rng, int m, int len) {
    std::vector<std::vector<int>> orders(m, std::vector<int>(len));
    for (auto& o : orders)
        for (auto& t : o) t = static_cast<int>(rng.uniform_int(kVocab.codebook_size));
    return grid_of(std::move(orders));
}

}  // namespace

TEST(BuildSot, SingleSpeaker) {
    SotSequence s = build_sot({{grid_of({{5, 7}}), real(0), 0}}, kVocab);
    EXPECT_EQ(s.speaker_count, 1);
    ASSERT_EQ(s.orders.size(), 1u);
    EXPECT_EQ(s.orders[0], (std::vector<int>{64, 5, 7, 66}));
}

TEST(BuildSot, TwoSpeakersFifoByOnset) {
    SotSequence s = build_sot({{grid_of({{3}}), real(0.5), 1}, {grid_of({{1, 2}}), real(0), 0}}, kVocab);
    EXPECT_EQ(s.orders[0], (std::vector<int>{64, 1, 2, 65, 3, 66}));
}

TEST(BuildSot, EqualOnsetsTieBreakBySpeakerIndex) {
    SotSequence s = build_sot({{grid_of({{9}}), real(0), 1}, {grid_of({{4}}), real(0), 0}}, kVocab);
    EXPECT_EQ(s.orders[0], (std::vector<int>{64, 4, 65, 9, 66}));
}

TEST(BuildSot, PermutationInvariantForDistinctOnsets) {
    Rng rng(17);
    std::vector<SotInput> in;
    for (int s = 0; s < 3; ++s)
        in.push_back({random_grid(rng, 4, 3 + s), real(0.1) * (s + 1), s});
    SotSequence a = build_sot(in, kVocab);
    std::swap(in[0], in[2]);
    std::swap(in[1], in[2]);
    SotSequence b = build_sot(in, kVocab);
    EXPECT_EQ(a.orders, b.orders);
}

TEST(BuildSot, ErrorsOnMismatchedOrdersAndBadTokens) {
    EXPECT_THROW(build_sot({}, kVocab), DataError);
    EXPECT_THROW(build_sot({{grid_of({{1}, {2}}), real(0), 0}, {grid_of({{1}}), real(0.2), 1}}, kVocab),
                 DataError);
    EXPECT_THROW(build_sot({{grid_of({{64}}), real(0), 0}}, kVocab), DataError);  // special id as content
}

TEST(SplitSot, TwoSpeakersBasic) {
    SotSequence s;
    s.orders = {{64, 1, 65, 2, 66}};
    s.speaker_count = 2;
    SplitResult r = split_sot(s, kVocab);
    EXPECT_TRUE(r.report.clean());
    ASSERT_EQ(r.grids.size(), 2u);
    EXPECT_EQ(r.grids[0].orders[0], (std::vector<int>{1}));
    EXPECT_EQ(r.grids[1].orders[0], (std::vector<int>{2}));
}

TEST(SplitSot, MissingSosRepaired) {
    SotSequence s;
    s.orders = {{5, 7, 66}};
    s.speaker_count = 1;
    SplitResult r = split_sot(s, kVocab);
    ASSERT_EQ(r.grids.size(), 1u);
    EXPECT_EQ(r.grids[0].orders[0], (std::vector<int>{5, 7}));
    EXPECT_EQ(r.report.inserted_sos, 1);
    EXPECT_EQ(r.report.total(), 1);
}

TEST(SplitSot, MissingEosAndTrailingJunk) {
    SotSequence no_eos;
    no_eos.orders = {{64, 5, 7}};
    SplitResult r1 = split_sot(no_eos, kVocab);
    EXPECT_EQ(r1.grids[0].orders[0], (std::vector<int>{5, 7}));
    EXPECT_EQ(r1.report.inserted_eos, 1);

    SotSequence junk;
    junk.orders = {{64, 5, 66, 9, 9}};
    SplitResult r2 = split_sot(junk, kVocab);
    EXPECT_EQ(r2.grids[0].orders[0], (std::vector<int>{5}));
    EXPECT_EQ(r2.report.dropped_tokens, 2);
}

TEST(SplitSot, EmptySegmentEmitsEmptyGrid) {
    SotSequence s;
    s.orders = {{64, 65, 5, 66}};
    SplitResult r = split_sot(s, kVocab);
    ASSERT_EQ(r.grids.size(), 2u);
    EXPECT_TRUE(r.grids[0].orders[0].empty());
    EXPECT_EQ(r.grids[1].orders[0], (std::vector<int>{5}));
    EXPECT_EQ(r.report.empty_segments, 1);
}

TEST(SplitSot, HigherOrderSpecialsReplacedAndShortOrdersPadded) {
    SotSequence s;
    s.orders = {{64, 1, 2, 66}, {64, 65, 3, 66}, {64, 9}};
    SplitResult r = split_sot(s, kVocab);
    ASSERT_EQ(r.grids.size(), 1u);
    EXPECT_EQ(r.grids[0].orders[0], (std::vector<int>{1, 2}));
    EXPECT_EQ(r.grids[0].orders[1], (std::vector<int>{0, 3}));  // SC in content became 0
    EXPECT_EQ(r.grids[0].orders[2], (std::vector<int>{9, 0}));  // short order padded
    EXPECT_EQ(r.report.special_replaced, 1);
    EXPECT_EQ(r.report.padded_positions, 1);
}

TEST(SplitSot, SpeakerCountDerivedNotSupplied) {
    SotSequence s;
    s.orders = {{64, 1, 65, 2, 65, 3, 66}};
    s.speaker_count = 0;  // deliberately wrong; split must not care
    SplitResult r = split_sot(s, kVocab);
    EXPECT_EQ(r.grids.size(), 3u);
}

TEST(SotRoundTrip, RandomizedPropertyTest) {
    Rng rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform_int(8));
        const int speakers = 1 + static_cast<int>(rng.uniform_int(4));
        std::vector<SotInput> in;
        std::vector<TokenGrid> expected;
        for (int s = 0; s < speakers; ++s) {
            const int len = static_cast<int>(rng.uniform_int(51));
            in.push_back({random_grid(rng, m, len), static_cast<real>(rng.uniform(0, 2)), s});
        }
        std::sort(in.begin(), in.end(), [](const SotInput& a, const SotInput& b) {
            if (a.onset != b.onset) return a.onset < b.onset;
            return a.speaker_index < b.speaker_index;
        });
        for (const auto& i : in) expected.push_back(i.grid);
        // feed in shuffled order; FIFO must restore it
        rng.shuffle(in.begin(), in.end());
        SotSequence seq = build_sot(in, kVocab);
        ASSERT_TRUE(validate_sot(seq, kVocab).empty() ||
                    // empty segments are flagged by validate but are legal grids here
                    [&] {
                        for (const auto& g : expected)
                            if (g.T() == 0) return true;
                        return false;
                    }());
        SplitResult r = split_sot(seq, kVocab);
        ASSERT_EQ(r.report.padded_positions, 0);
        ASSERT_EQ(r.report.special_replaced, 0);
        ASSERT_EQ(r.report.inserted_sos, 0);
        ASSERT_EQ(r.report.inserted_eos, 0);
        ASSERT_EQ(r.report.dropped_tokens, 0);
        ASSERT_EQ(r.grids.size(), expected.size());
        for (size_t s = 0; s < expected.size(); ++s) ASSERT_EQ(r.grids[s].orders, expected[s].orders);
    }
}

TEST(ValidateSot, ValidSequenceEmptyReport) {
    SotSequence s = build_sot({{grid_of({{1, 2}, {3, 4}}), real(0), 0}, {grid_of({{5}, {6}}), real(0.3), 1}},
                              kVocab);
    EXPECT_TRUE(validate_sot(s, kVocab).empty());
}

TEST(ValidateSot, FlagsEmptySegmentAndLengthMismatch) {
    SotSequence s;
    s.orders = {{64, 65, 1, 66}};
    s.speaker_count = 2;
    auto v = validate_sot(s, kVocab);
    ASSERT_FALSE(v.empty());
    bool found = false;
    for (const auto& msg : v) found = found || msg.find("empty speaker segment") != std::string::npos;
    EXPECT_TRUE(found) << v[0];

    SotSequence lm;
    lm.orders = {{64, 1, 66}, {64, 66}};
    lm.speaker_count = 1;
    auto v2 = validate_sot(lm, kVocab);
    bool found2 = false;
    for (const auto& msg : v2) found2 = found2 || msg.find("order length mismatch") != std::string::npos;
    EXPECT_TRUE(found2);
}

TEST(ValidateSot, FlagsMisalignedSpecialsAndStraySpecials) {
    SotSequence s;
    s.orders = {{64, 1, 65, 2, 66}, {64, 3, 4, 65, 66}};
    s.speaker_count = 2;
    auto v = validate_sot(s, kVocab);
    bool diverge = false;
    for (const auto& msg : v) diverge = diverge || msg.find("diverge") != std::string::npos;
    EXPECT_TRUE(diverge);

    SotSequence stray;
    stray.orders = {{64, 1, 64, 2, 66}};
    stray.speaker_count = 1;
    auto v2 = validate_sot(stray, kVocab);
    bool sos_mid = false;
    for (const auto& msg : v2) sos_mid = sos_mid || msg.find("SOS at position 2") != std::string::npos;
    EXPECT_TRUE(sos_mid);
}

TEST(SotIo, JsonlRoundTrip) {
    fs::path dir = fs::temp_directory_path() / "slmss_sot_test";
    fs::create_directories(dir);
    const std::string path = (dir / "sot.jsonl").string();
    SotSequence s = build_sot({{grid_of({{1, 2}}), real(0), 0}, {grid_of({{3}}), real(0.4), 1}}, kVocab);
    write_sot_sequences(path, {{"mix0", s}});
    auto back = read_sot_sequences(path, kVocab);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].first, "mix0");
    EXPECT_EQ(back[0].second.orders, s.orders);
    EXPECT_EQ(back[0].second.speaker_count, 2);
}
