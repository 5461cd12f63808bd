// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "slmss/model.hpp"

namespace slmss {
namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.heads = 2;
    cfg.ff_mult = 2;
    cfg.m = 4;
    cfg.codebook_size = 8;
    cfg.max_len = 32;
    cfg.latent_dim = 4;
    return cfg;
}

RvqCodec tiny_codec(const ModelConfig& cfg) {
    RvqCodec c = make_codec(cfg.m, 64, 8000, 11);
    c.latent_dim = cfg.latent_dim;
    Rng rng = Rng::stream(11, 1);
    c.analysis = Tensor::randn({c.frame_len, cfg.latent_dim}, rng, real(0.1));
    return c;
}

std::vector<real> tone(int n, real freq, real rate = 8000) {
    std::vector<real> s(n);
    for (int i = 0; i < n; ++i) s[i] = real(0.4) * std::sin(real(2 * M_PI) * freq * i / rate);
    return s;
}

real cosine(const Tensor& a, const Tensor& b) {
    real dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += a.data()[i] * b.data()[i];
        na += a.data()[i] * a.data()[i];
        nb += b.data()[i] * b.data()[i];
    }
    return dot / std::sqrt(na * nb);
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
    real mx = 0;
    for (size_t i = 0; i < a.numel(); ++i) mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    return mx;
}

TEST(EncodeMixture, ShapeIsFramesByDModel) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 3);
    RvqCodec c = tiny_codec(cfg);
    Tensor h = encode_mixture(m, c, tone(8000 / 8, 200));  // 1000 samples, hop 64
    EXPECT_EQ(h.dim(0), 16);                               // ceil(1000/64)
    EXPECT_EQ(h.dim(1), cfg.d_model);
    Tensor h2 = encode_mixture(m, c, tone(1001, 200));
    EXPECT_EQ(h2.dim(0), 16);  // ceil(1001/64)
}

TEST(EncodeMixture, DifferentMixturesDoNotCollapse) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 3);
    RvqCodec c = tiny_codec(cfg);
    Tensor a = encode_mixture(m, c, tone(2000, 150));
    Tensor b = encode_mixture(m, c, tone(2000, 310));
    EXPECT_LT(cosine(a, b), real(0.999));
}

TEST(EncodeMixture, OneHotFusionOnEmbeddedInput) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 3);
    RvqCodec c = tiny_codec(cfg);
    auto& w = m.params["enc.fusion.w"].data();
    w[0] = real(1e9);  // softmax becomes one-hot on the embedded input
    std::vector<real> mix = tone(640, 220);
    Tensor h = encode_mixture(m, c, mix);

    Tensor lat = analyze_frames(c, mix);
    Tensor embedded = add(add(matmul(lat, m.p("enc.embed.w")), m.p("enc.embed.b")),
                          slice_rows(m.p("enc.pos"), 0, lat.dim(0)));
    Tensor expected = layer_norm(embedded, m.p("enc.fusion_ln.g"), m.p("enc.fusion_ln.b"));
    EXPECT_LT(max_abs_diff(h, expected), real(1e-12));
}

TEST(EncodeMixture, ErrorsOnEmptyAndOverlong) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 3);
    RvqCodec c = tiny_codec(cfg);
    EXPECT_THROW(encode_mixture(m, c, {}), DataError);
    EXPECT_THROW(encode_mixture(m, c, tone(64 * 40, 100)), DataError);  // 40 frames > max_len 32
}

TEST(ArForward, RowsAreDistributions) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 5);
    Rng rng = Rng::stream(5, 2);
    Tensor h = Tensor::randn({10, cfg.d_model}, rng);
    const Vocab vb = m.vocab();
    std::vector<int> hist{vb.sos(), 1, 2, 3, 4};
    Tensor all = ar_forward_all(m, hist, h);
    ASSERT_EQ(all.dim(0), 5);
    ASSERT_EQ(all.dim(1), vb.size());
    for (int t = 0; t < all.dim(0); ++t) {
        real sum = 0;
        for (int v = 0; v < all.dim(1); ++v) {
            const real p = all.data()[static_cast<size_t>(t) * all.dim(1) + v];
            EXPECT_GE(p, real(0));
            sum += p;
        }
        EXPECT_NEAR(sum, real(1), real(1e-9));
    }
    Tensor last = ar_forward(m, hist, h);
    EXPECT_EQ(last.dim(0), 1);
    for (int v = 0; v < vb.size(); ++v)
        EXPECT_DOUBLE_EQ(last.data()[v], all.data()[static_cast<size_t>(4) * vb.size() + v]);
}

TEST(ArForward, InputValidation) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 5);
    Rng rng = Rng::stream(5, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    const Vocab vb = m.vocab();
    EXPECT_THROW(ar_logits(m, {}, h), DataError);
    EXPECT_THROW(ar_logits(m, {1, 2}, h), DataError);                  // no SOS
    EXPECT_THROW(ar_logits(m, {vb.sos(), vb.size()}, h), DataError);   // token out of range
    std::vector<int> too_long(cfg.max_len + 1, 0);
    too_long[0] = vb.sos();
    EXPECT_THROW(ar_logits(m, too_long, h), DataError);
}

// Gradient of the loss at position t with respect to embeddings used at
// positions > t must be exactly zero, across random configurations.
TEST(ArForward, CausalityGradientExactlyZero) {
    Rng pick = Rng::stream(77, 3);
    for (int trial = 0; trial < 5; ++trial) {
        ModelConfig cfg;
        cfg.d_model = pick.uniform() < 0.5 ? 16 : 32;
        cfg.heads = pick.uniform() < 0.5 ? 2 : 4;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1 + static_cast<int>(pick.uniform() * 2);
        cfg.ff_mult = 2;
        cfg.m = 2;
        cfg.codebook_size = 16;
        cfg.max_len = 16;
        cfg.latent_dim = 4;
        SeqModel m = make_model(cfg, 100 + trial);
        Rng rng = Rng::stream(200 + trial, 4);
        Tensor h = Tensor::randn({6, cfg.d_model}, rng);

        const int t_len = 4 + static_cast<int>(pick.uniform() * 4);  // 4..7
        std::vector<int> hist(t_len);
        hist[0] = m.vocab().sos();
        for (int i = 1; i < t_len; ++i) hist[i] = i - 1;  // distinct content tokens
        const int t = 1 + static_cast<int>(pick.uniform() * (t_len - 2));

        for (auto& [name, p] : m.params) p.zero_grad();
        Graph g;
        Tensor logits = ar_logits(m, hist, h);
        g.backward(sum_all(slice_rows(logits, t, 1)));

        const auto& emb_grad = m.params.at("ar.embed").grad();
        const auto& pos_grad = m.params.at("ar.pos").grad();
        const int d = cfg.d_model;
        for (int u = t + 1; u < t_len; ++u) {
            for (int i = 0; i < d; ++i) {
                EXPECT_EQ(emb_grad[static_cast<size_t>(hist[u]) * d + i], real(0))
                    << "trial " << trial << " pos " << u;
                EXPECT_EQ(pos_grad[static_cast<size_t>(u) * d + i], real(0))
                    << "trial " << trial << " pos " << u;
            }
        }
        real within = 0;
        for (int u = 0; u <= t; ++u)
            for (int i = 0; i < d; ++i) within += std::abs(pos_grad[static_cast<size_t>(u) * d + i]);
        EXPECT_GT(within, real(0)) << "probe has no signal at trial " << trial;
    }
}

TEST(NarForward, RowsAreDistributionsAndBidirectional) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 9);
    Rng rng = Rng::stream(9, 2);
    Tensor h = Tensor::randn({8, cfg.d_model}, rng);
    std::vector<int> o0{m.vocab().sos(), 1, 2, 3, 4, m.vocab().eos()};
    Tensor out = nar_forward(m, {o0}, 1, h);
    ASSERT_EQ(out.dim(0), 6);
    ASSERT_EQ(out.dim(1), m.vocab().size());
    for (int t = 0; t < out.dim(0); ++t) {
        real sum = 0;
        for (int v = 0; v < out.dim(1); ++v) sum += out.data()[static_cast<size_t>(t) * out.dim(1) + v];
        EXPECT_NEAR(sum, real(1), real(1e-9));
    }
    // Perturb the LAST position; the FIRST row must move (no causal mask).
    std::vector<int> o0b = o0;
    o0b.back() = 5;
    Tensor out2 = nar_forward(m, {o0b}, 1, h);
    real first_row_diff = 0;
    for (int v = 0; v < out.dim(1); ++v) first_row_diff = std::max(first_row_diff, std::abs(out.data()[v] - out2.data()[v]));
    EXPECT_GT(first_row_diff, real(1e-12));
}

TEST(NarForward, InputValidation) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 9);
    Rng rng = Rng::stream(9, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    EXPECT_THROW(nar_forward(m, {{1, 2}}, 0, h), DataError);            // order 0 is the AR job
    EXPECT_THROW(nar_forward(m, {{1, 2}}, cfg.m, h), DataError);        // order out of range
    EXPECT_THROW(nar_forward(m, {{1, 2}}, 2, h), DataError);            // needs two lower orders
    EXPECT_THROW(nar_forward(m, {{1, 2}, {1}}, 2, h), DataError);       // length mismatch
    EXPECT_THROW(nar_forward(m, {{1, m.vocab().size()}}, 1, h), DataError);
}

TEST(NarForward, InputEmbeddingIsAdditive) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 13);
    std::vector<int> a{1, 5, 2}, b{0, 3, 3};
    Tensor e = nar_input_embedding(m, {a, b}, 2);
    Tensor expected = add(
        add(add(embedding(m.p("nar.embed.0"), a), embedding(m.p("nar.embed.1"), b)),
            slice_rows(m.p("nar.pos"), 0, 3)),
        slice_rows(m.p("nar.task"), 1, 1));
    ASSERT_EQ(e.shape(), expected.shape());
    for (size_t i = 0; i < e.numel(); ++i) EXPECT_DOUBLE_EQ(e.data()[i], expected.data()[i]);
}

TEST(NarForward, PositionsSharedAcrossOrders) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 13);
    std::vector<int> a{1, 5}, b{0, 3};
    Tensor e1 = nar_input_embedding(m, {a}, 1);
    Tensor e3 = nar_input_embedding(m, {a, b, a}, 3);
    const real delta = real(0.25);
    m.params["nar.pos"].data()[0] += delta;  // first position, first channel
    Tensor e1b = nar_input_embedding(m, {a}, 1);
    Tensor e3b = nar_input_embedding(m, {a, b, a}, 3);
    EXPECT_DOUBLE_EQ(e1b.data()[0] - e1.data()[0], delta);
    EXPECT_DOUBLE_EQ(e3b.data()[0] - e3.data()[0], delta);
    EXPECT_DOUBLE_EQ(e1b.data()[1], e1.data()[1]);
}

// The order-i output projection is the order-i embedding table itself:
// mutating the table must move both the inputs that embed through it and the
// logits that project onto it.
TEST(NarForward, WeightTyingSharesStorage) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 21);
    Rng rng = Rng::stream(21, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    std::vector<int> o0{1, 2, 3, 4}, o1{0, 2, 0, 5};

    Tensor logits1 = nar_logits(m, {o0}, 1, h);
    Tensor e2 = nar_input_embedding(m, {o0, o1}, 2);
    m.params["nar.embed.1"].data()[static_cast<size_t>(2) * cfg.d_model] += real(0.5);
    Tensor logits1b = nar_logits(m, {o0}, 1, h);
    Tensor e2b = nar_input_embedding(m, {o0, o1}, 2);

    EXPECT_GT(max_abs_diff(logits1, logits1b), real(0));  // output side moved
    EXPECT_GT(max_abs_diff(e2, e2b), real(0));            // input side moved
    // And the untouched order-0 table leaves order-1 logits' other path alone:
    Tensor e1 = nar_input_embedding(m, {o0}, 1);
    m.params["nar.embed.2"].data()[0] += real(0.5);
    Tensor e1b = nar_input_embedding(m, {o0}, 1);
    EXPECT_EQ(max_abs_diff(e1, e1b), real(0));
}

TEST(NarForward, ZeroedTransformerReducesToTiedSoftmax) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 33);
    Rng rng = Rng::stream(33, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    for (auto& [name, p] : m.params)
        if (name.rfind("nar.", 0) == 0 && std::isdigit(static_cast<unsigned char>(name[4])))
            std::fill(p.data().begin(), p.data().end(), real(0));

    std::vector<int> all_sos(5, m.vocab().sos());
    Tensor out = nar_forward(m, {all_sos}, 1, h);
    Tensor e = nar_input_embedding(m, {all_sos}, 1);
    Tensor expected =
        softmax(matmul_nt(layer_norm(e, m.p("nar.final_ln.g"), m.p("nar.final_ln.b")), m.p("nar.embed.1")), -1);
    EXPECT_LT(max_abs_diff(out, expected), real(1e-12));

    // With positions zeroed too, every row collapses to the same distribution.
    std::fill(m.params["nar.pos"].data().begin(), m.params["nar.pos"].data().end(), real(0));
    Tensor flat = nar_forward(m, {all_sos}, 1, h);
    for (int t = 1; t < flat.dim(0); ++t)
        for (int v = 0; v < flat.dim(1); ++v)
            EXPECT_DOUBLE_EQ(flat.data()[static_cast<size_t>(t) * flat.dim(1) + v], flat.data()[v]);
}

TEST(Forward, DeterministicWithoutDropout) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 44);
    RvqCodec c = tiny_codec(cfg);
    std::vector<real> mix = tone(1280, 180);
    Tensor h1 = encode_mixture(m, c, mix);
    Tensor h2 = encode_mixture(m, c, mix);
    EXPECT_EQ(max_abs_diff(h1, h2), real(0));
    std::vector<int> hist{m.vocab().sos(), 1, 2};
    EXPECT_EQ(max_abs_diff(ar_logits(m, hist, h1), ar_logits(m, hist, h2)), real(0));
    EXPECT_EQ(max_abs_diff(nar_forward(m, {hist}, 1, h1), nar_forward(m, {hist}, 1, h2)), real(0));
}

TEST(Forward, DropoutPerturbsTraining) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 44);
    Rng rng = Rng::stream(44, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    std::vector<int> hist{m.vocab().sos(), 1, 2};
    Rng d1 = Rng::stream(1, 7), d2 = Rng::stream(2, 7);
    Tensor a = ar_logits(m, hist, h, real(0.5), &d1);
    Tensor b = ar_logits(m, hist, h, real(0.5), &d2);
    EXPECT_GT(max_abs_diff(a, b), real(0));
}

TEST(KvCache, MatchesFullRecompute) {
    ModelConfig cfg = tiny_config();
    cfg.dec_layers = 3;
    SeqModel m = make_model(cfg, 55);
    Rng rng = Rng::stream(55, 2);
    Tensor h = Tensor::randn({9, cfg.d_model}, rng);
    std::vector<int> hist{m.vocab().sos()};
    Rng tok = Rng::stream(55, 3);
    for (int i = 0; i < 11; ++i) hist.push_back(static_cast<int>(tok.uniform() * cfg.codebook_size));

    ArCache cache = ar_make_cache(m, h);
    Tensor full = ar_logits(m, hist, h);
    for (int t = 0; t < static_cast<int>(hist.size()); ++t) {
        std::vector<real> step = ar_step(m, cache, hist[t]);
        for (int v = 0; v < m.vocab().size(); ++v)
            EXPECT_NEAR(step[v], full.data()[static_cast<size_t>(t) * m.vocab().size() + v], real(1e-9))
                << "t=" << t << " v=" << v;
    }
    EXPECT_THROW(ar_step(m, cache, m.vocab().size()), DataError);
    ArCache fresh = ar_make_cache(m, h);
    EXPECT_THROW(ar_step(m, fresh, 3), DataError);  // must start with SOS
}

TEST(Params, UnderBudgetAndScaleFourfold) {
    ModelConfig cfg;  // defaults: d_model 128, 4+4 layers
    SeqModel m = make_model(cfg, 1);
    EXPECT_LT(count_params(m), 5000000);

    auto block_weights = [](const SeqModel& mm) {
        int64_t n = 0;
        for (const auto& [name, t] : mm.params) {
            const auto tail = name.substr(name.rfind('.'));
            if (tail == ".wq" || tail == ".wk" || tail == ".wv" || tail == ".wo" || tail == ".w1" || tail == ".w2")
                n += static_cast<int64_t>(t.numel());
        }
        return n;
    };
    ModelConfig big = cfg;
    big.d_model = cfg.d_model * 2;
    SeqModel m2 = make_model(big, 1);
    EXPECT_EQ(block_weights(m2), 4 * block_weights(m));
    const real total_ratio = static_cast<real>(count_params(m2)) / static_cast<real>(count_params(m));
    EXPECT_GT(total_ratio, real(3));
    EXPECT_LT(total_ratio, real(4.2));
}

TEST(Params, ZeroLayersIsEmbeddingsAndProjectionsOnly) {
    ModelConfig cfg = tiny_config();
    cfg.enc_layers = 0;
    cfg.dec_layers = 0;
    SeqModel m = make_model(cfg, 1);
    const int64_t d = cfg.d_model, v = cfg.vocab_size(), L = cfg.max_len;
    const int64_t enc = cfg.latent_dim * d + d + L * d + 1 + 2 * d;        // embed w/b, pos, fusion, fusion_ln
    const int64_t ar = v * d + L * d + 2 * d + v * d;                      // embed, pos, final_ln, out_proj
    const int64_t nar = cfg.m * v * d + L * d + (cfg.m - 1) * d + 2 * d;   // tables, pos, task, final_ln
    EXPECT_EQ(count_params(m), enc + ar + nar);
}

TEST(Checkpoint, RoundTripBySection) {
    ModelConfig cfg = tiny_config();
    SeqModel m = make_model(cfg, 66);
    const std::string path = "/tmp/slmss_test_model.slms";
    save_model(path, m, {"enc", "ar"});
    SeqModel r = load_model(path);
    EXPECT_TRUE(r.has_section("enc"));
    EXPECT_TRUE(r.has_section("ar"));
    EXPECT_FALSE(r.has_section("nar"));
    EXPECT_EQ(r.cfg.d_model, cfg.d_model);
    EXPECT_EQ(r.cfg.m, cfg.m);

    Rng rng = Rng::stream(66, 2);
    Tensor h = Tensor::randn({4, cfg.d_model}, rng);
    std::vector<int> hist{m.vocab().sos(), 1, 2};
    EXPECT_EQ(max_abs_diff(ar_logits(m, hist, h), ar_logits(r, hist, h)), real(0));
    EXPECT_THROW(nar_forward(r, {hist}, 1, h), DataError);  // section absent

    save_model(path, m, {"enc", "nar"});
    SeqModel rn = load_model(path);
    EXPECT_EQ(max_abs_diff(nar_forward(m, {hist}, 1, h), nar_forward(rn, {hist}, 1, h)), real(0));
    EXPECT_THROW(ar_logits(rn, hist, h), DataError);
    std::remove(path.c_str());
}

TEST(Checkpoint, RejectsForeignKinds) {
    const std::string path = "/tmp/slmss_test_model_kind.slms";
    Container ct;
    ct.config = {{"kind", "rvq_codec"}};
    save_container(path, ct);
    EXPECT_THROW(load_model(path), DataError);
    std::remove(path.c_str());
}

}  // namespace
}  // namespace slmss
