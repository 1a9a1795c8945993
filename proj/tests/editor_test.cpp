#include <atomic>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "instmask/editor.hpp"
#include "instmask/synthetic.hpp"

using namespace instmask;

namespace {

LatentImage random_latent(std::uint64_t seed, std::size_t c = 3, std::size_t h = 32, std::size_t w = 32)
{
    NormalStream rng(seed);
    return LatentImage::gaussian(c, h, w, rng);
}

// Returns fixed predictions; counts calls.
class FixedBackend : public DenoiserBackend {
public:
    FixedBackend(LatentImage u, LatentImage c) : u_(std::move(u)), c_(std::move(c)) {}

    Prediction predict(const LatentImage&, std::size_t t, const TextFeatures* cond) const override
    {
        ++calls;
        Prediction p{cond ? c_ : u_, std::nullopt};
        if (cond) {
            AttentionStack s;
            s.timestep = t;
            s.maps.assign(cond->tokens(), Grid2D(kAttentionSize, kAttentionSize, 1.0 / cond->tokens()));
            p.attention = s;
        }
        return p;
    }
    const NoiseSchedule& schedule() const override { return schedule_; }
    std::string name() const override { return "fixed"; }

    mutable std::atomic<int> calls{0};

private:
    LatentImage u_, c_;
    NoiseSchedule schedule_ = build_schedule();
};

TextFeatures features(const char* text = "a photo of a cat") { return encode_text(TokenSequence::parse(text), kTextDim, 0); }

BinaryMask half_mask(std::size_t n)
{
    BinaryMask m = BinaryMask::filled(n, n, false);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n / 2; ++c)
            m.set(r, c, true);
    return m;
}

}  // namespace

TEST(Guidance, EndpointsAreExactAndInteriorIsLinear)
{
    const LatentImage u = random_latent(1, 1, 4, 4);
    const LatentImage c = random_latent(2, 1, 4, 4);
    const FixedBackend b(u, c);
    const TextFeatures f = features();
    EXPECT_EQ(eps_cfg(b, u, 0, f, 0.0).eps, u);
    EXPECT_EQ(eps_cfg(b, u, 0, f, 1.0).eps, c);
    const LatentImage g = eps_cfg(b, u, 0, f, 7.5).eps;
    for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_NEAR(g.values[i], u.values[i] + 7.5 * (c.values[i] - u.values[i]), 1e-12);
    EXPECT_THROW(eps_cfg(b, u, 0, f, -1.0), ConfigError);
}

TEST(Blend, ExactSelection)
{
    const LatentImage x = random_latent(3, 2, 4, 4);
    const LatentImage y = random_latent(4, 2, 4, 4);
    const BinaryMask m = half_mask(4);
    const LatentImage out = blend_latents(x, y, m);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t k = 0; k < 4; ++k)
                EXPECT_EQ(out(c, r, k), k < 2 ? x(c, r, k) : y(c, r, k));
    EXPECT_EQ(blend_latents(x, y, BinaryMask::filled(4, 4, true)), x);
    EXPECT_EQ(blend_latents(x, y, BinaryMask::filled(4, 4, false)), y);
    EXPECT_THROW(blend_latents(x, y, BinaryMask::filled(2, 2, true)), ShapeError);
}

TEST(GuidedStep, ForcedMaskSelectsPredictionOrNoisedOriginal)
{
    const LatentImage target = random_latent(5);
    const LatentImage x_orig = random_latent(6);
    const OracleBackend backend(target, build_schedule());
    const NoiseSchedule& s = backend.schedule();
    const TextFeatures f = features();
    EditConfig cfg;
    cfg.rounds = 2;

    // Reference: the same streams, stepped by hand.
    GuidedState ref = GuidedState::start(x_orig, 500, 2, cfg.seed, s);
    std::vector<LatentImage> stepped, noised;
    for (std::size_t k = 0; k < 2; ++k) {
        const GuidedPrediction g = eps_cfg(backend, ref.trajectories[k], 500, f, cfg.cfg_scale);
        const LatentImage z = LatentImage::gaussian_like(x_orig, ref.z_streams[k]);
        const LatentImage fresh = LatentImage::gaussian_like(x_orig, ref.y_streams[k]);
        stepped.push_back(reverse_step(ref.trajectories[k], g.eps, 500, z, s));
        noised.push_back(add_noise(x_orig, 480, fresh, s));
    }

    const BinaryMask m = half_mask(kAttentionSize);
    GuidedState st = GuidedState::start(x_orig, 500, 2, cfg.seed, s);
    const StepTrace tr = guided_step(st, 500, backend, cfg, f, &m);
    EXPECT_EQ(tr.mask, m);
    EXPECT_EQ(tr.y_next, noised[0]);
    EXPECT_FALSE(st.position.has_value());
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x)
                    ASSERT_EQ(st.trajectories[k](c, y, x), x < 16 ? stepped[k](c, y, x) : noised[k](c, y, x));
}

TEST(GuidedStep, LastStepLandsOnOriginalOutsideMask)
{
    const LatentImage x_orig = random_latent(7);
    const OracleBackend backend(random_latent(8), build_schedule());
    EditConfig cfg;
    GuidedState st = GuidedState::start(x_orig, 0, 3, 1, backend.schedule());
    const BinaryMask none = BinaryMask::filled(kAttentionSize, kAttentionSize, false);
    guided_step(st, 0, backend, cfg, features(), &none);
    for (const LatentImage& t : st.trajectories)
        EXPECT_EQ(t, x_orig);
}

TEST(Inpaint, EmptyMaskReturnsOriginalExactly)
{
    const LatentImage x_orig = random_latent(9);
    const OracleBackend backend(random_latent(10), build_schedule());
    const LatentImage out = inpaint_finalize(x_orig, BinaryMask::filled(kAttentionSize, kAttentionSize, false),
                                             features(), backend, EditConfig{});
    EXPECT_EQ(out, x_orig);
}

TEST(Inpaint, FullMaskRegeneratesTarget)
{
    const LatentImage target = random_latent(11);
    const OracleBackend backend(target, build_schedule());
    const LatentImage out = inpaint_finalize(random_latent(12), BinaryMask::filled(kAttentionSize, kAttentionSize, true),
                                             features(), backend, EditConfig{});
    EXPECT_LT(rmse(out, target), 1e-9);
}

TEST(Inpaint, HalfMaskKeepsComplementExactly)
{
    const LatentImage x_orig = random_latent(13);
    const LatentImage target = random_latent(14);
    const OracleBackend backend(target, build_schedule());
    const LatentImage out =
        inpaint_finalize(x_orig, half_mask(kAttentionSize), features(), backend, EditConfig{});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 16; x < 32; ++x)
                ASSERT_EQ(out(c, y, x), x_orig(c, y, x));
}

TEST(Edit, StrengthSetsTauAndPositionIsComputedOnce)
{
    const synthetic::Scene sc = synthetic::generate_scene(7, 0);
    const synthetic::SyntheticBackend backend(sc, build_schedule());
    EditConfig cfg;
    const EditSession s = edit(synthetic::render(sc), TokenSequence(sc.edit_tokens), cfg, backend);
    EXPECT_EQ(s.tau, 500u);
    EXPECT_EQ(s.start_timestep, 500u);
    ASSERT_EQ(s.trace.size(), 26u);
    EXPECT_EQ(s.trace.front().timestep, 500u);
    EXPECT_EQ(s.trace.back().timestep, 0u);
    EXPECT_EQ(s.position_computations, 1u);
    EXPECT_EQ(s.position.computed_at, 500u);
    EXPECT_EQ(s.final_mask, s.trace.back().mask);
    EXPECT_EQ(s.position.weights.size(), sc.edit_tokens.size() + 1);
}

TEST(Edit, DeterministicForFixedSeed)
{
    const synthetic::Scene sc = synthetic::generate_scene(7, 1);
    const synthetic::SyntheticBackend backend(sc, build_schedule());
    EditConfig cfg;
    cfg.seed = 42;
    const Image img = synthetic::render(sc);
    const EditSession a = edit(img, TokenSequence(sc.edit_tokens), cfg, backend);
    const EditSession b = edit(img, TokenSequence(sc.edit_tokens), cfg, backend);
    EXPECT_TRUE(a == b);
    cfg.seed = 43;
    const EditSession c = edit(img, TokenSequence(sc.edit_tokens), cfg, backend);
    EXPECT_NE(a.trace.front().latent, c.trace.front().latent);
}

TEST(Edit, ZeroStrengthAndStepMismatchAreRejected)
{
    const synthetic::Scene sc = synthetic::generate_scene(7, 2);
    const synthetic::SyntheticBackend backend(sc, build_schedule());
    const Image img = synthetic::render(sc);
    EditConfig cfg;
    cfg.strength = 0.0;
    EXPECT_THROW(edit(img, TokenSequence(sc.edit_tokens), cfg, backend), ConfigError);
    cfg.strength = 0.5;
    cfg.steps = 25;
    EXPECT_THROW(edit(img, TokenSequence(sc.edit_tokens), cfg, backend), ConfigError);
    cfg.steps = 50;
    cfg.maskgen.phi = 1.5;
    EXPECT_THROW(edit(img, TokenSequence(sc.edit_tokens), cfg, backend), ConfigError);
}

TEST(Edit, SmallStrengthStillRunsOneStep)
{
    const synthetic::Scene sc = synthetic::generate_scene(7, 0);
    const synthetic::SyntheticBackend backend(sc, build_schedule());
    EditConfig cfg;
    cfg.strength = 0.005;
    const EditSession s = edit(synthetic::render(sc), TokenSequence(sc.edit_tokens), cfg, backend);
    EXPECT_EQ(s.tau, 5u);
    EXPECT_EQ(s.start_timestep, 0u);
    EXPECT_EQ(s.trace.size(), 1u);
    EXPECT_EQ(s.position_computations, 1u);
}

TEST(Edit, BackendCallCountMatchesLoop)
{
    const LatentImage u = random_latent(15);
    const FixedBackend b(u, u);
    EditConfig cfg;
    cfg.rounds = 2;
    const EditSession s = edit(random_latent(16), TokenSequence::parse("a cat"), cfg, b);
    // guided: 26 steps x 2 rounds x 2 branches; inpainting: 50 steps x 2 branches.
    EXPECT_EQ(b.calls.load(), 26 * 2 * 2 + 50 * 2);
    EXPECT_EQ(s.position_computations, 1u);
}

TEST(Edit, MultithreadedMatchesSingleThreaded)
{
    const synthetic::Scene sc = synthetic::generate_scene(7, 3);
    const synthetic::SyntheticBackend backend(sc, build_schedule());
    const Image img = synthetic::render(sc);
    setenv("INSTMASK_THREADS", "1", 1);
    const EditSession one = edit(img, TokenSequence(sc.edit_tokens), EditConfig{}, backend);
    setenv("INSTMASK_THREADS", "3", 1);
    const EditSession three = edit(img, TokenSequence(sc.edit_tokens), EditConfig{}, backend);
    unsetenv("INSTMASK_THREADS");
    EXPECT_TRUE(one == three);
}
