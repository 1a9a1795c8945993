#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "instmask/maskgen.hpp"
#include "oracles.hpp"

using namespace instmask;

namespace {

AttentionStack stack_of(std::vector<Grid2D> maps)
{
    AttentionStack s;
    s.maps = std::move(maps);
    return s;
}

Grid2D one_hot(std::size_t r, std::size_t c, double v = 1.0)
{
    Grid2D g(4, 4);
    g(r, c) = v;
    return g;
}

}  // namespace

TEST(IndexToken, ExcludesStartAndPicksMostSimilar)
{
    const AttentionStack s = stack_of({one_hot(0, 0), one_hot(3, 3), one_hot(0, 0, 0.5), one_hot(1, 1)});
    EXPECT_EQ(index_token(s), 2u);
}

TEST(IndexToken, TiesGoToLowestIndex)
{
    const AttentionStack s = stack_of({one_hot(0, 0), one_hot(3, 3), one_hot(0, 0, 2.0), one_hot(0, 0, 3.0)});
    EXPECT_EQ(index_token(s), 2u);
}

TEST(IndexToken, NeedsAContentToken)
{
    EXPECT_THROW(index_token(stack_of({one_hot(0, 0)})), ShapeError);
}

TEST(SimilarityVector, IncludesStartAndSelfIsOne)
{
    const AttentionStack s = stack_of({one_hot(0, 0), one_hot(3, 3), one_hot(0, 0, 0.5)});
    const SimilarityVector v = similarity_vector(s, 2);
    ASSERT_EQ(v.values.size(), 3u);
    EXPECT_DOUBLE_EQ(v.values[0], 1.0);
    EXPECT_DOUBLE_EQ(v.values[1], 0.0);
    EXPECT_DOUBLE_EQ(v.values[2], 1.0);
}

TEST(PositionVector, ThresholdSweepIncludingBoundaries)
{
    const std::vector<double> s{0.0, 0.59, 0.6, std::nextafter(0.6, 1.0), 0.75, 0.9, std::nextafter(0.9, 1.0), 1.0};
    const std::vector<int> want{-1, -1, 0, 0, 0, 0, 1, 1};
    const PositionVector p = position_vector({s}, MaskGenConfig{});
    EXPECT_EQ(p.weights, want);
    EXPECT_EQ(p.gamma1, 0.9);
    EXPECT_EQ(p.gamma2, 0.6);
    MaskGenConfig bad;
    bad.gamma1 = 0.5;
    EXPECT_THROW(position_vector({s}, bad), ConfigError);
}

TEST(Refine, SignedSumClampAndNormalize)
{
    // (0,0): 2 - 1 = 1; (1,1): -1 clamps to 0; (2,2): 4 is the peak.
    Grid2D a(4, 4), b(4, 4), c(4, 4);
    a(0, 0) = 2.0;
    b(0, 0) = 1.0;
    b(1, 1) = 1.0;
    c(2, 2) = 4.0;
    PositionVector p;
    p.weights = {1, -1, 1};
    const Grid2D r = refine(stack_of({a, b, c}), p);
    EXPECT_DOUBLE_EQ(r(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(r(1, 1), 0.0);
    EXPECT_DOUBLE_EQ(r(2, 2), 1.0);
    EXPECT_DOUBLE_EQ(r.max(), 1.0);
}

TEST(Refine, AllNegativeGivesZeroGrid)
{
    PositionVector p;
    p.weights = {-1, -1};
    const Grid2D r = refine(stack_of({one_hot(0, 0), one_hot(1, 1)}), p);
    EXPECT_EQ(r.max(), 0.0);
    p.weights = {1};
    EXPECT_THROW(refine(stack_of({one_hot(0, 0), one_hot(1, 1)}), p), ShapeError);
}

TEST(MakeMask, StrictThresholdAfterSmoothing)
{
    MaskGenConfig cfg;
    cfg.gaussian = {0.0, 0};
    const Grid2D g(1, 3, {0.2, 0.2000001, 0.1});
    const BinaryMask m = make_mask(g, cfg);
    EXPECT_FALSE(m.at(0, 0));
    EXPECT_TRUE(m.at(0, 1));
    EXPECT_FALSE(m.at(0, 2));
    EXPECT_EQ(m.threshold_used, 0.2);

    // An isolated unit peak blurs to k0^2 ~ 0.159: gone at 0.2, kept at 0.1.
    Grid2D peak(16, 16);
    peak(8, 8) = 1.0;
    EXPECT_EQ(make_mask(peak, MaskGenConfig{}).count(), 0u);
    MaskGenConfig low;
    low.phi = 0.1;
    EXPECT_EQ(make_mask(peak, low).count(), 1u);
}

TEST(MaskGen, BruteForceOracleOnRandomStacks)
{
    std::mt19937_64 rng(2024);
    const MaskGenConfig cfg;
    for (int trial = 0; trial < 1000; ++trial) {
        const AttentionStack s = oracle::random_stack(rng);
        const std::size_t idx = index_token(s);
        ASSERT_EQ(idx, oracle::index_token(s)) << "trial " << trial;
        const SimilarityVector sim = similarity_vector(s, idx);
        ASSERT_EQ(sim.values, oracle::similarity(s, idx)) << "trial " << trial;
        const PositionVector p = position_vector(sim, cfg);
        for (std::size_t i = 0; i < p.weights.size(); ++i)
            ASSERT_EQ(p.weights[i], oracle::position(sim.values[i], 0.9, 0.6));
        ASSERT_EQ(refine(s, p), oracle::refine(s, p.weights)) << "trial " << trial;
    }
}

TEST(InstantMask, PositionComputedOnlyWithoutCache)
{
    std::mt19937_64 rng(3);
    std::vector<AttentionStack> rounds{oracle::random_stack(rng)};
    const InstantMask first = instant_mask(rounds, MaskGenConfig{});
    EXPECT_TRUE(first.position_computed);
    const InstantMask later = instant_mask(rounds, MaskGenConfig{}, first.position);
    EXPECT_FALSE(later.position_computed);
    EXPECT_EQ(later.position, first.position);
    EXPECT_EQ(later.mask, first.mask);

    PositionVector wrong = first.position;
    wrong.weights.push_back(0);
    EXPECT_THROW(instant_mask(rounds, MaskGenConfig{}, wrong), ShapeError);
    MaskGenConfig bad;
    bad.phi = 1.5;
    EXPECT_THROW(instant_mask(rounds, bad), ConfigError);
}
