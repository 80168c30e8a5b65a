#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "../support/oracles.hpp"
#include "trips/error.hpp"
#include "trips/patch_select.hpp"

namespace trips {
namespace {

// [CLS] followed by n grid patches laid out on a 1 x n grid.
TokenSequence strip(const Tensor& tokens) {
    TokenSequence s;
    s.tokens = tokens;
    s.grid_rows = 1;
    s.grid_cols = tokens.rows() - 1;
    s.origins.push_back(TokenOrigin::cls());
    for (std::size_t i = 0; i + 1 < tokens.rows(); ++i) s.origins.push_back(TokenOrigin::grid(0, i));
    return s;
}

Tensor maps_from(std::vector<Tensor> heads) {
    const std::size_t q = heads[0].rows(), k = heads[0].cols();
    std::vector<double> v;
    for (const Tensor& h : heads) v.insert(v.end(), h.data().begin(), h.data().end());
    return Tensor({heads.size(), q, k}, std::move(v));
}

Tensor random_maps(SeededRng& rng, std::size_t heads, std::size_t n) {
    std::vector<Tensor> hs;
    for (std::size_t h = 0; h < heads; ++h) hs.push_back(softmax_rows(oracle::random_tensor(rng, {n, n}, 2.0)));
    return maps_from(std::move(hs));
}

TEST(KeepCount, FloorWithDecimalAllowance) {
    EXPECT_EQ(keep_count(576, 0.7), 403u);
    EXPECT_EQ(keep_count(100, 0.29), 29u);
    EXPECT_EQ(keep_count(3, 2.0 / 3.0), 2u);
    EXPECT_EQ(keep_count(10, 0.01), 1u);
    EXPECT_EQ(keep_count(7, 1.0), 7u);
    EXPECT_EQ(keep_count(5, 0.5, KeepRounding::kNearest), 3u);
    EXPECT_THROW(keep_count(10, 0.0), ConfigError);
    EXPECT_THROW(keep_count(10, 1.5), ConfigError);
}

TEST(TdAtt, IdenticalPatchesGiveUniformScores) {
    SeededRng rng(1);
    const Tensor row = oracle::random_tensor(rng, {1, 8});
    const Tensor v = concat_rows({oracle::random_tensor(rng, {1, 8}), row, row, row, row, row});
    const LinearLayer wq(oracle::random_tensor(rng, {8, 8}));
    const Tensor s = td_att_scores(oracle::random_tensor(rng, {8}), v, wq);
    ASSERT_EQ(s.size(), 5u);
    for (double x : s.data()) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(TdAtt, OrthogonalQueryGivesUniformScores) {
    SeededRng rng(2);
    std::vector<double> raw = oracle::random_tensor(rng, {5, 4}).values();
    for (std::size_t i = 1; i < 5; ++i) raw[i * 4] = 0.0;
    const Tensor v({5, 4}, raw);
    // Identity projection keeps t = e0, orthogonal to every patch row.
    const Tensor s = td_att_scores(Tensor::vector({1, 0, 0, 0}), v, LinearLayer(Tensor::identity(4)));
    for (double x : s.data()) EXPECT_EQ(x, 0.25);
}

TEST(TdAtt, MatchesLoopOracle) {
    SeededRng rng(3);
    const std::size_t d = 12, n = 9;
    const Tensor v = oracle::random_tensor(rng, {n + 1, d});
    const LinearLayer wq(oracle::random_tensor(rng, {d, d}, 0.3), oracle::random_tensor(rng, {d}, 0.1));
    const Tensor t = oracle::random_tensor(rng, {d});
    const Tensor q = oracle::linear(wq, t.reshaped({1, d}));
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        long double s = 0.0L;
        for (std::size_t c = 0; c < d; ++c) s += static_cast<long double>(q[c]) * v.at(i + 1, c);
        logits[i] = static_cast<double>(s / std::sqrt(static_cast<long double>(d)));
    }
    const auto want = oracle::softmax(logits);
    const Tensor got = td_att_scores(t, v, wq);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(TdAtt, KeyProjectedVariantUsesKeyProjection) {
    SeededRng rng(4);
    const Tensor v = oracle::random_tensor(rng, {6, 8});
    const LinearLayer wq(oracle::random_tensor(rng, {8, 8}, 0.3));
    const LinearLayer wk(oracle::random_tensor(rng, {8, 8}, 0.3), oracle::random_tensor(rng, {8}, 0.1));
    const Tensor t = oracle::random_tensor(rng, {8});
    const Tensor projected = concat_rows({slice_rows(v, 0, 1), linear_apply(wk, slice_rows(v, 1, 6))});
    EXPECT_LE(max_abs_diff(td_att_scores_key_projected(t, v, wq, wk), td_att_scores(t, projected, wq)), 1e-15);
}

TEST(TdAtt, GuidanceWidthChecked) {
    const Tensor v = Tensor::zeros({3, 4});
    EXPECT_THROW(td_att_scores(Tensor::zeros({5}), v, LinearLayer(Tensor::identity(4))), ShapeError);
}

TEST(ImageCls, SingleHeadRenormalizesClsRow) {
    const Tensor head = Tensor::matrix({{0.4, 0.3, 0.2, 0.1}, {0.25, 0.25, 0.25, 0.25},
                                        {0.1, 0.1, 0.1, 0.7}, {0.0, 0.5, 0.5, 0.0}});
    const Tensor s = image_cls_scores(AttnMaps{maps_from({head})});
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], 2.0 / 6.0, 1e-15);
    EXPECT_NEAR(s[2], 1.0 / 6.0, 1e-15);
}

TEST(ImageCls, DuplicatedHeadsMatchOneHead) {
    SeededRng rng(5);
    const Tensor h = softmax_rows(oracle::random_tensor(rng, {5, 5}));
    EXPECT_LE(max_abs_diff(image_cls_scores(AttnMaps{maps_from({h, h})}), image_cls_scores(AttnMaps{maps_from({h})})),
              1e-15);
}

TEST(ImageCls, MatchesPerHeadAverageOracle) {
    SeededRng rng(6);
    const std::size_t heads = 3, n = 8;
    const AttnMaps maps{random_maps(rng, heads, n)};
    std::vector<long double> avg(n - 1, 0.0L);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 1; j < n; ++j) avg[j - 1] += maps.at(h, 0, j) / static_cast<long double>(heads);
    const long double total = std::accumulate(avg.begin(), avg.end(), 0.0L);
    const Tensor got = image_cls_scores(maps);
    for (std::size_t j = 0; j + 1 < n; ++j) EXPECT_NEAR(got[j], static_cast<double>(avg[j] / total), 1e-14);
}

TEST(MultimodalCls, MassOnlyOnTextIsDegenerate) {
    const Tensor head = Tensor::matrix({{0.5, 0.5, 0, 0}, {0.25, 0.25, 0.25, 0.25},
                                        {0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}});
    EXPECT_THROW(multimodal_cls_scores(AttnMaps{maps_from({head})}, {2, 3}), DegenerateGuidance);
}

TEST(MultimodalCls, SingleImageColumnScoresOne) {
    SeededRng rng(7);
    const Tensor s = multimodal_cls_scores(AttnMaps{random_maps(rng, 2, 5)}, {4});
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0], 1.0);
}

TEST(MultimodalCls, MatchesRestrictionOracle) {
    SeededRng rng(8);
    const AttnMaps maps{random_maps(rng, 2, 9)};
    const std::vector<std::size_t> cols{3, 4, 5, 6, 7, 8};
    std::vector<long double> w;
    for (std::size_t c : cols) w.push_back((maps.at(0, 0, c) + maps.at(1, 0, c)) / 2.0L);
    const long double total = std::accumulate(w.begin(), w.end(), 0.0L);
    const Tensor got = multimodal_cls_scores(maps, cols);
    for (std::size_t j = 0; j < cols.size(); ++j) EXPECT_NEAR(got[j], static_cast<double>(w[j] / total), 1e-14);
}

TEST(SelectAndFuse, UniformScoresHalfRate) {
    SeededRng rng(9);
    const Tensor t = oracle::random_tensor(rng, {5, 3});
    const SelectResult r = select_and_fuse(strip(t), Tensor::filled({4}, 0.25), 0.5);
    EXPECT_EQ(r.outcome.k, 2u);
    EXPECT_EQ(r.outcome.kept_indices, (std::vector<std::size_t>{0, 1}));
    ASSERT_EQ(r.seq.size(), 4u);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(r.seq.tokens.at(1, c), t.at(1, c));
        EXPECT_EQ(r.seq.tokens.at(2, c), t.at(2, c));
        EXPECT_NEAR(r.seq.tokens.at(3, c), 0.25 * (t.at(3, c) + t.at(4, c)), 1e-15);
    }
    EXPECT_EQ(r.seq.origins.back(), TokenOrigin::fused());
    EXPECT_EQ(r.outcome.fused_mass, 0.5);
}

TEST(SelectAndFuse, HandArithmeticThreeTokens) {
    SeededRng rng(10);
    const Tensor t = oracle::random_tensor(rng, {4, 3});
    const SelectResult r = select_and_fuse(strip(t), Tensor::vector({0.7, 0.2, 0.1}), 2.0 / 3.0);
    EXPECT_EQ(r.outcome.k, 2u);
    EXPECT_EQ(r.outcome.kept_indices, (std::vector<std::size_t>{0, 1}));
    EXPECT_NEAR(r.outcome.fused_mass, 0.1, 1e-15);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r.seq.tokens.at(3, c), 0.1 * t.at(3, c));
}

TEST(SelectAndFuse, MatchesBruteForcePartition) {
    SeededRng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor t = oracle::random_tensor(rng, {31, 6});
        const Tensor s = oracle::random_distribution(rng, 30);
        const SelectResult r = select_and_fuse(strip(t), s, 0.7);
        const oracle::Selection want = oracle::select(slice_rows(t, 1, 31), s.values(), 21);
        EXPECT_EQ(r.outcome.kept_indices, want.kept);
        EXPECT_NEAR(r.outcome.fused_mass, want.fused_mass, 1e-12);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(r.seq.tokens.at(22, c), want.fused[c], 1e-12);
        double kept_mass = 0.0;
        for (std::size_t i : r.outcome.kept_indices) kept_mass += s[i];
        EXPECT_NEAR(r.outcome.fused_mass, 1.0 - kept_mass, 1e-10);
    }
}

TEST(SelectAndFuse, WithoutFusionDropsTokens) {
    SeededRng rng(12);
    const Tensor t = oracle::random_tensor(rng, {11, 4});
    const SelectResult r = select_and_fuse(strip(t), oracle::random_distribution(rng, 10), 0.5, false);
    EXPECT_EQ(r.seq.size(), 6u);
    for (const TokenOrigin& o : r.seq.origins) EXPECT_NE(o.kind, OriginKind::kFused);
}

TEST(SelectAndFuse, FullRateFusesZeroVector) {
    SeededRng rng(13);
    const Tensor t = oracle::random_tensor(rng, {5, 3});
    const SelectResult r = select_and_fuse(strip(t), oracle::random_distribution(rng, 4), 1.0);
    EXPECT_EQ(r.outcome.k, 4u);
    EXPECT_EQ(r.outcome.fused_mass, 0.0);
    EXPECT_EQ(r.seq.size(), 6u);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r.seq.tokens.at(5, c), 0.0);
    EXPECT_TRUE(std::isinf(r.outcome.tie_margin()));
}

TEST(SelectAndFuse, PrefixRowsPassThrough) {
    SeededRng rng(14);
    TokenSequence s;
    s.tokens = oracle::random_tensor(rng, {7, 3});
    s.grid_rows = 2;
    s.grid_cols = 2;
    s.origins = {TokenOrigin::cls(), TokenOrigin::text(), TokenOrigin::text(), TokenOrigin::grid(0, 0),
                 TokenOrigin::grid(0, 1), TokenOrigin::grid(1, 0), TokenOrigin::grid(1, 1)};
    const SelectResult r = select_and_fuse(s, Tensor::vector({0.1, 0.4, 0.2, 0.3}), 0.5);
    EXPECT_EQ(r.outcome.kept_indices, (std::vector<std::size_t>{1, 3}));
    ASSERT_EQ(r.seq.size(), 6u);
    EXPECT_EQ(slice_rows(r.seq.tokens, 0, 3), slice_rows(s.tokens, 0, 3));
    EXPECT_EQ(r.seq.origins[3], TokenOrigin::grid(0, 1));
    EXPECT_EQ(r.seq.origins[4], TokenOrigin::grid(1, 1));
}

TEST(SelectAndFuse, Errors) {
    SeededRng rng(15);
    const Tensor t = oracle::random_tensor(rng, {4, 3});
    EXPECT_THROW(select_and_fuse(strip(t), Tensor::filled({3}, 1.0 / 3), 0.0), ConfigError);
    EXPECT_THROW(select_and_fuse(strip(t), Tensor::filled({3}, 1.0 / 3), 1.2), ConfigError);
    EXPECT_THROW(select_and_fuse(strip(t), Tensor::filled({2}, 0.5), 0.5), ShapeError);
    EXPECT_THROW(select_and_fuse(strip(slice_rows(t, 0, 2)), Tensor::vector({1.0}), 0.5), ConfigError);
}

TEST(GuidanceModeTest, TdAttFlagOnlyForTextGuidance) {
    GuidanceMode m;
    m.source = GuidanceSource::kImageCls;
    m.disable_td_att = true;
    EXPECT_THROW(m.validate(), ConfigError);
    m.source = GuidanceSource::kTextCls;
    EXPECT_NO_THROW(m.validate());
    EXPECT_FALSE(m.uses_text_guidance());
}

class SelectionLayer : public ::testing::Test {
protected:
    void SetUp() override {
        SeededRng rng(16);
        mhsa = make_mhsa(8, 2, rng);
        ffn = make_ffn(8, rng);
        seq = strip(oracle::random_tensor(rng, {13, 8}));
        guidance = oracle::random_tensor(rng, {8});
    }
    MhsaLayer mhsa;
    FfnBlock ffn;
    TokenSequence seq;
    Tensor guidance;
};

TEST_F(SelectionLayer, FullRateWithoutFusionIsPlainLayer) {
    GuidanceMode m;
    m.disable_fusion = true;
    const auto out = selection_layer_forward(mhsa, ffn, seq, guidance, 1.0, m);
    EXPECT_EQ(out.seq.tokens, ffn_block(ffn, sa_block(mhsa, seq.tokens).v_post));
    EXPECT_EQ(out.seq.origins, seq.origins);
}

TEST_F(SelectionLayer, FullRateWithFusionAppendsZeroToken) {
    const auto out = selection_layer_forward(mhsa, ffn, seq, guidance, 1.0, GuidanceMode{});
    const Tensor v = sa_block(mhsa, seq.tokens).v_post;
    const Tensor want = ffn_block(ffn, concat_rows({v, Tensor::zeros({1, 8})}));
    EXPECT_EQ(out.seq.tokens, want);
    EXPECT_EQ(out.outcome.k, 12u);
}

TEST_F(SelectionLayer, MatchesStepByStepComposition) {
    const SaBlockOutput sa = sa_block(mhsa, seq.tokens);
    const Tensor s = td_att_scores(guidance, sa.v_post, mhsa.wq);
    const oracle::Selection want = oracle::select(slice_rows(sa.v_post, 1, 13), s.values(), 8);
    std::vector<std::size_t> rows{0};
    for (std::size_t i : want.kept) rows.push_back(i + 1);
    const Tensor rebuilt = concat_rows({gather_rows(sa.v_post, rows), Tensor({1, 8}, want.fused)});
    const auto out = selection_layer_forward(mhsa, ffn, seq, guidance, 0.7, GuidanceMode{});
    EXPECT_EQ(out.outcome.kept_indices, want.kept);
    EXPECT_LE(max_abs_diff(out.seq.tokens, ffn_block(ffn, rebuilt)), 1e-12);
    EXPECT_EQ(out.seq.size(), 10u);
}

TEST_F(SelectionLayer, ImageClsModeIgnoresGuidance) {
    GuidanceMode m;
    m.source = GuidanceSource::kImageCls;
    const auto a = selection_layer_forward(mhsa, ffn, seq, std::nullopt, 0.5, m);
    const auto b = selection_layer_forward(mhsa, ffn, seq, guidance, 0.5, m);
    EXPECT_EQ(a.seq.tokens, b.seq.tokens);
    EXPECT_EQ(a.outcome.scores, image_cls_scores(sa_block(mhsa, seq.tokens).maps));
}

TEST_F(SelectionLayer, TextModeRequiresGuidance) {
    EXPECT_THROW(selection_layer_forward(mhsa, ffn, seq, std::nullopt, 0.5, GuidanceMode{}), ConfigError);
}

}  // namespace
}  // namespace trips
