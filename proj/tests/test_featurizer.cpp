#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "feddisc/broadcast.hpp"
#include "feddisc/corpus.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/parallel.hpp"
#include "oracles.hpp"

using namespace feddisc;

TEST(Featurizer, RowsHaveUnitNorm) {
    Featurizer f(42, 8, 12);
    for (int r = 0; r < 8; ++r) {
        double n = 0.0;
        for (int c = 0; c < 12; ++c) n += f.weight().at(r, c) * f.weight().at(r, c);
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
}

TEST(Featurizer, EncodeIsLinear) {
    Featurizer f(3, 5, 9);
    Vec zero(9, 0.0);
    FeatureVector fz = encode(f, zero);
    for (double v : fz.values) EXPECT_EQ(v, 0.0);

    Rng rng(99);
    Vec x = rng.normal_vector(9);
    Vec x2 = x;
    for (double& v : x2) v *= 2.0;
    FeatureVector fx = encode(f, x);
    FeatureVector fx2 = encode(f, x2);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(fx2.values[i], 2.0 * fx.values[i], 1e-6);
}

TEST(Featurizer, EncodeMatchesHandRolledProduct) {
    // applied to a basis vector, the encoder returns one weight column
    Featurizer f(11, 3, 2);
    Vec e0 = {1.0, 0.0};
    FeatureVector out = encode(f, e0);
    for (int r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(out.values[r], f.weight().at(r, 0));

    // and on a general vector it matches an independent dot-product loop
    Vec x = {0.3, -1.7};
    FeatureVector fx = encode(f, x);
    for (int r = 0; r < 3; ++r) {
        oracle::Vecd row = {f.weight().at(r, 0), f.weight().at(r, 1)};
        EXPECT_DOUBLE_EQ(fx.values[r], oracle::dot_product(row, x));
    }
}

TEST(Featurizer, EncodeChecksDimensions) {
    Featurizer f(1, 4, 6);
    Vec wrong(5, 1.0);
    EXPECT_THROW(encode(f, wrong), DimensionMismatch);
}

TEST(Featurizer, EncodeNeverMutatesWeights) {
    Featurizer f(5, 4, 4);
    std::vector<std::uint8_t> before = serialize_featurizer(f);
    std::uint64_t mutations = mutation_count();
    Rng rng(1);
    for (int i = 0; i < 10; ++i) encode(f, rng.normal_vector(4));
    EXPECT_EQ(mutation_count(), mutations);
    EXPECT_EQ(serialize_featurizer(f), before);
}

TEST(Prototypes, SingleFeaturePerCategoryIsExact) {
    std::vector<std::pair<FeatureVector, int>> features;
    features.push_back({FeatureVector{{1.0, 2.0}, std::nullopt}, 0});
    features.push_back({FeatureVector{{-3.0, 0.5}, std::nullopt}, 1});
    auto protos = extract_prototypes(features, 2);
    EXPECT_EQ(protos[0].values, (Vec{1.0, 2.0}));
    EXPECT_EQ(protos[1].values, (Vec{-3.0, 0.5}));
    EXPECT_EQ(protos[0].support_count, 1u);
}

TEST(Prototypes, DuplicatedFeatureYieldsItself) {
    FeatureVector v{{0.125, -2.25, 0.75}, std::nullopt};
    std::vector<std::pair<FeatureVector, int>> features(3, {v, 0});
    features.push_back({FeatureVector{{1.0, 1.0, 1.0}, std::nullopt}, 1});
    auto protos = extract_prototypes(features, 2);
    EXPECT_EQ(protos[0].values, v.values);
    EXPECT_EQ(protos[0].support_count, 3u);
}

TEST(Prototypes, MeanMatchesSummationOracle) {
    std::vector<oracle::Vecd> raw = {{1.0, -2.0}, {0.25, 3.5}, {-4.0, 0.125}};
    std::vector<std::pair<FeatureVector, int>> features;
    for (const auto& r : raw) features.push_back({FeatureVector{r, std::nullopt}, 0});
    features.push_back({FeatureVector{{9.0, 9.0}, std::nullopt}, 1});
    auto protos = extract_prototypes(features, 2);
    oracle::Vecd expected = oracle::plain_mean(raw);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(protos[0].values[i], expected[i], 1e-12);
}

TEST(Prototypes, EmptyCategoryIsAnError) {
    std::vector<std::pair<FeatureVector, int>> features;
    features.push_back({FeatureVector{{1.0}, std::nullopt}, 0});
    try {
        extract_prototypes(features, 3);
        FAIL() << "expected EmptyCategoryError";
    } catch (const EmptyCategoryError& e) {
        EXPECT_EQ(e.category, 1);
    }
}

TEST(Prototypes, OrderInsensitiveWithinTolerance) {
    Rng rng(31);
    std::vector<std::pair<FeatureVector, int>> features;
    for (int i = 0; i < 64; ++i)
        features.push_back({FeatureVector{rng.normal_vector(5), std::nullopt}, i % 3});
    auto protos_fwd = extract_prototypes(features, 3);
    std::reverse(features.begin(), features.end());
    auto protos_rev = extract_prototypes(features, 3);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 5; ++i)
            EXPECT_NEAR(protos_fwd[j].values[i], protos_rev[j].values[i], 1e-9);
}

TEST(Cosine, AxiomaticValues) {
    Vec a = {1.0, 2.0, -1.0};
    Vec b = {2.0, 4.0, -2.0};    // parallel
    Vec c = {-1.0, -2.0, 1.0};   // anti-parallel
    Vec d = {2.0, -1.0, 0.0};    // orthogonal to a
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, b), 1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, c), -1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, d), 0.0, 1e-12);
    EXPECT_THROW(cosine_similarity(a, Vec{0.0, 0.0, 0.0}), ZeroVectorError);
    EXPECT_THROW(cosine_similarity(a, Vec{1.0, 1.0}), DimensionMismatch);
}

namespace {

std::vector<Prototype> random_prototypes(int m, int d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Prototype> protos(m);
    for (int j = 0; j < m; ++j) protos[j] = Prototype{j, rng.normal_vector(d), 1};
    return protos;
}

}  // namespace

TEST(PseudoLabel, MatchesPrototypeExactly) {
    auto protos = random_prototypes(4, 6, 5);
    FeatureVector f{protos[2].values, std::nullopt};
    PseudoLabel pl = pseudo_label(f, protos);
    EXPECT_EQ(pl.category, 2);
    EXPECT_NEAR(pl.score, 1.0, 1e-12);
    EXPECT_EQ(pl.all_scores.size(), 4u);
    EXPECT_EQ(pl.score, *std::max_element(pl.all_scores.begin(), pl.all_scores.end()));
}

TEST(PseudoLabel, ScaleInvariant) {
    auto protos = random_prototypes(4, 6, 6);
    Rng rng(7);
    FeatureVector f{rng.normal_vector(6), std::nullopt};
    FeatureVector f5{f.values, std::nullopt};
    for (double& v : f5.values) v *= 5.0;
    PseudoLabel a = pseudo_label(f, protos);
    PseudoLabel b = pseudo_label(f5, protos);
    EXPECT_EQ(a.category, b.category);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(a.all_scores[j], b.all_scores[j], 1e-12);
}

TEST(PseudoLabel, MatchesBruteForceArgmax) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto protos = random_prototypes(4, 5, 100 + seed);
        Rng rng(200 + seed);
        FeatureVector f{rng.normal_vector(5), std::nullopt};
        PseudoLabel pl = pseudo_label(f, protos);
        int best = 0;
        double best_score = cosine_similarity(f.values, protos[0].values);
        for (int j = 1; j < 4; ++j) {
            double s = cosine_similarity(f.values, protos[j].values);
            if (s > best_score) {
                best_score = s;
                best = j;
            }
        }
        EXPECT_EQ(pl.category, best);
        EXPECT_DOUBLE_EQ(pl.score, best_score);
    }
}

TEST(PseudoLabel, TiesBreakToSmallestIndex) {
    std::vector<Prototype> protos(3);
    protos[0] = Prototype{0, {1.0, 0.0}, 1};
    protos[1] = Prototype{1, {1.0, 0.0}, 1};  // duplicate direction
    protos[2] = Prototype{2, {0.0, 1.0}, 1};
    PseudoLabel pl = pseudo_label(FeatureVector{{2.0, 0.0}, std::nullopt}, protos);
    EXPECT_EQ(pl.category, 0);
}

TEST(Broadcast, WireFormatSizeAndRoundTrip) {
    Featurizer f(1, 16, 20);
    std::vector<Prototype> protos(10);
    Rng rng(4);
    for (int j = 0; j < 10; ++j) protos[j] = Prototype{j, rng.normal_vector(16), 5};
    ServerBroadcast b = make_broadcast(f, protos);
    // header 2+2+2+8 = 14, per prototype 2 + 16*4 = 66
    EXPECT_EQ(b.byte_size, 14u + 10u * 66u);
    EXPECT_EQ(b.featurizer_id, f.checksum());
    EXPECT_EQ(serialize_broadcast(b).size(), b.byte_size);
}

TEST(Featurizer, FileRoundTripPreservesChecksum) {
    Featurizer f(123, 6, 10);
    std::vector<std::uint8_t> bytes = serialize_featurizer(f);
    Featurizer g = deserialize_featurizer(bytes);
    EXPECT_EQ(g.checksum(), f.checksum());
    EXPECT_EQ(g.feature_dim(), 6);
    EXPECT_EQ(g.input_dim(), 10);
    EXPECT_EQ(serialize_featurizer(g), bytes);
}
