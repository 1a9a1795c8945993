#pragma once

// Mask-guided editing loop.
//
// n trajectories are noised to the start timestep and denoised in lockstep.
// At every step each trajectory's conditional attention is collected, the
// rounds are averaged and turned into one shared mask; every trajectory then
// takes a reverse step and keeps the prediction only inside the mask, taking
// the noised original everywhere else. The mask from the last step drives an
// inpainting pass that regenerates the masked region from pure noise and
// produces the final latent.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "instmask/attention.hpp"
#include "instmask/error.hpp"
#include "instmask/image.hpp"
#include "instmask/maskgen.hpp"
#include "instmask/numerics.hpp"
#include "instmask/parallel.hpp"
#include "instmask/rng.hpp"
#include "instmask/schedule.hpp"

namespace instmask {

inline constexpr std::size_t kTextDim = 32;

struct Prediction {
    LatentImage eps;
    std::optional<AttentionStack> attention;  // present for conditional calls
};

// The denoiser. Implementations are deterministic and safe to call from
// several threads at once.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    // cond == nullptr requests the unconditional (empty prompt) prediction.
    virtual Prediction predict(const LatentImage& x_t, std::size_t t, const TextFeatures* cond) const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual std::string name() const = 0;
};

// Analytic denoiser that knows the clean target:
// eps = (x_t - sqrt(abar_t) * target) / sqrt(1 - abar_t).
// Conditional calls also report attention from seeded projections.
class OracleBackend : public DenoiserBackend {
public:
    OracleBackend(LatentImage target, NoiseSchedule schedule, std::uint64_t seed = 0, std::size_t text_dim = kTextDim)
        : target_(std::move(target)),
          schedule_(std::move(schedule)),
          projections_(ProjectionSet::make(target_.channels, text_dim, 16, 4, seed))
    {
    }

    Prediction predict(const LatentImage& x_t, std::size_t t, const TextFeatures* cond) const override
    {
        require_same_shape(x_t, target_, "OracleBackend::predict");
        const double a = std::sqrt(schedule_.alpha_bar.at(t));
        const double b = std::sqrt(1.0 - schedule_.alpha_bar[t]);
        Prediction p{LatentImage(x_t.channels, x_t.height, x_t.width), std::nullopt};
        for (std::size_t i = 0; i < x_t.size(); ++i)
            p.eps.values[i] = (x_t.values[i] - a * target_.values[i]) / b;
        if (cond)
            p.attention = cross_attention(x_t, *cond, projections_, t);
        return p;
    }

    const NoiseSchedule& schedule() const override { return schedule_; }
    std::string name() const override { return "oracle"; }
    const LatentImage& target() const { return target_; }

private:
    LatentImage target_;
    NoiseSchedule schedule_;
    ProjectionSet projections_;
};

struct EditConfig {
    double strength = 0.5;
    std::size_t steps = 50;
    double cfg_scale = 7.5;
    std::size_t rounds = 3;
    MaskGenConfig maskgen{};
    std::uint64_t seed = 0;
    std::size_t text_dim = kTextDim;

    void validate() const
    {
        if (!(strength >= 0.0 && strength <= 1.0))
            throw ConfigError("EditConfig: strength must lie in [0, 1]");
        if (steps == 0)
            throw ConfigError("EditConfig: steps must be >= 1");
        if (rounds == 0)
            throw ConfigError("EditConfig: rounds must be >= 1");
        if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale))
            throw ConfigError("EditConfig: guidance scale must be finite and >= 0");
        maskgen.validate();
    }

    bool operator==(const EditConfig&) const = default;
};

struct GuidedPrediction {
    LatentImage eps;
    AttentionStack attention;  // from the conditional branch
};

// eps = (1 - scale) * eps_uncond + scale * eps_cond
inline GuidedPrediction eps_cfg(const DenoiserBackend& backend, const LatentImage& x_t, std::size_t t,
                                const TextFeatures& cond, double scale)
{
    if (!(scale >= 0.0))
        throw ConfigError("eps_cfg: guidance scale must be >= 0");
    Prediction c = backend.predict(x_t, t, &cond);
    const Prediction u = backend.predict(x_t, t, nullptr);
    require_same_shape(c.eps, u.eps, "eps_cfg");
    if (!c.attention)
        throw DegenerateAttentionError("eps_cfg: backend '" + backend.name() +
                                       "' returned no attention for a conditional call");
    GuidedPrediction out{LatentImage(c.eps.channels, c.eps.height, c.eps.width), std::move(*c.attention)};
    for (std::size_t i = 0; i < out.eps.size(); ++i)
        out.eps.values[i] = (1.0 - scale) * u.eps.values[i] + scale * c.eps.values[i];
    return out;
}

// M * x_pred + (1 - M) * y_t with M broadcast over channels.
inline LatentImage blend_latents(const LatentImage& x_pred, const LatentImage& y_t, const BinaryMask& mask)
{
    require_same_shape(x_pred, y_t, "blend_latents");
    if (mask.height() != x_pred.height || mask.width() != x_pred.width)
        throw ShapeError("blend_latents: mask is not at latent resolution");
    LatentImage out(x_pred.channels, x_pred.height, x_pred.width);
    for (std::size_t c = 0; c < out.channels; ++c)
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x)
                out(c, y, x) = mask.at(y, x) ? x_pred(c, y, x) : y_t(c, y, x);
    return out;
}

// Brings a mask to latent resolution (nearest neighbour).
inline BinaryMask mask_to_latent(const BinaryMask& m, const LatentImage& like)
{
    if (m.height() == like.height && m.width() == like.width)
        return m;
    return resize_nearest(m, like.height, like.width);
}

struct StepTrace {
    std::size_t timestep = 0;
    BinaryMask mask;     // attention resolution
    LatentImage latent;  // trajectory 0 after the step
    LatentImage y_next;  // trajectory 0's noised original for the landing level

    bool operator==(const StepTrace&) const = default;
};

struct GuidedState {
    LatentImage x_orig;
    std::vector<LatentImage> trajectories;
    std::vector<NormalStream> z_streams;
    std::vector<NormalStream> y_streams;
    std::optional<PositionVector> position;
    std::size_t position_computations = 0;

    // n trajectories noised to t with independent seeded streams.
    static GuidedState start(const LatentImage& x_orig, std::size_t t, std::size_t rounds, std::uint64_t seed,
                             const NoiseSchedule& s)
    {
        GuidedState st;
        st.x_orig = x_orig;
        for (std::size_t k = 0; k < rounds; ++k) {
            NormalStream init(seed, Stream::trajectory_init, k);
            st.trajectories.push_back(add_noise(x_orig, t, LatentImage::gaussian_like(x_orig, init), s));
            st.z_streams.emplace_back(seed, Stream::trajectory_z, k);
            st.y_streams.emplace_back(seed, Stream::trajectory_y, k);
        }
        return st;
    }
};

// One mask-guided step at grid timestep t. A forced mask (any resolution up to
// the latent's) bypasses mask generation.
inline StepTrace guided_step(GuidedState& state, std::size_t t, const DenoiserBackend& backend, const EditConfig& cfg,
                             const TextFeatures& cond, const BinaryMask* forced_mask = nullptr)
{
    const NoiseSchedule& s = backend.schedule();
    const std::size_t n = state.trajectories.size();
    if (n == 0)
        throw ConfigError("guided_step: no trajectories");

    std::vector<GuidedPrediction> preds(n);
    parallel_for(n, [&](std::size_t k) { preds[k] = eps_cfg(backend, state.trajectories[k], t, cond, cfg.cfg_scale); });

    StepTrace trace;
    trace.timestep = t;
    if (forced_mask) {
        trace.mask = *forced_mask;
    } else {
        std::vector<AttentionStack> stacks;
        stacks.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            preds[k].attention.round = k;
            stacks.push_back(preds[k].attention);
        }
        InstantMask im = instant_mask(stacks, cfg.maskgen, state.position);
        if (im.position_computed) {
            state.position = im.position;
            ++state.position_computations;
        }
        trace.mask = std::move(im.mask);
    }
    const BinaryMask latent_mask = mask_to_latent(trace.mask, state.x_orig);
    const std::optional<std::size_t> prev = s.previous(t);

    std::vector<LatentImage> ys(n);
    parallel_for(n, [&](std::size_t k) {
        const LatentImage z = LatentImage::gaussian_like(state.x_orig, state.z_streams[k]);
        const LatentImage fresh = LatentImage::gaussian_like(state.x_orig, state.y_streams[k]);
        ys[k] = prev ? add_noise(state.x_orig, *prev, fresh, s) : state.x_orig;
        const LatentImage stepped = reverse_step(state.trajectories[k], preds[k].eps, t, z, s);
        state.trajectories[k] = blend_latents(stepped, ys[k], latent_mask);
    });
    trace.latent = state.trajectories.front();
    trace.y_next = std::move(ys.front());
    return trace;
}

// Regenerates the masked region from pure noise over the full grid; outside
// the mask every step is clamped to the original noised to the landing level,
// and to the original itself after the last step.
inline LatentImage inpaint_finalize(const LatentImage& x_orig, const BinaryMask& mask, const TextFeatures& cond,
                                    const DenoiserBackend& backend, const EditConfig& cfg)
{
    const NoiseSchedule& s = backend.schedule();
    const BinaryMask m = mask_to_latent(mask, x_orig);
    NormalStream init(cfg.seed, Stream::inpaint_init);
    NormalStream zs(cfg.seed, Stream::inpaint_z);
    NormalStream ys(cfg.seed, Stream::inpaint_y);

    const std::size_t top = s.timesteps.back();
    const LatentImage pure = LatentImage::gaussian_like(x_orig, init);
    LatentImage x = blend_latents(pure, add_noise(x_orig, top, LatentImage::gaussian_like(x_orig, ys), s), m);
    for (std::size_t t : s.descending_from(top)) {
        const GuidedPrediction g = eps_cfg(backend, x, t, cond, cfg.cfg_scale);
        const LatentImage z = LatentImage::gaussian_like(x_orig, zs);
        const LatentImage fresh = LatentImage::gaussian_like(x_orig, ys);
        const std::optional<std::size_t> prev = s.previous(t);
        const LatentImage known = prev ? add_noise(x_orig, *prev, fresh, s) : x_orig;
        x = blend_latents(reverse_step(x, g.eps, t, z, s), known, m);
    }
    return x;
}

struct PhaseTimings {
    double noising_ms = 0.0;
    double guided_ms = 0.0;
    double inpaint_ms = 0.0;
};

struct EditSession {
    EditConfig config;
    TokenSequence tokens;
    std::size_t tau = 0;             // round(r*T)
    std::size_t start_timestep = 0;  // largest grid timestep <= tau
    std::vector<StepTrace> trace;    // decreasing timestep
    BinaryMask final_mask;           // attention resolution
    PositionVector position;
    std::size_t position_computations = 0;
    LatentImage source;
    LatentImage output;
    Image output_image;
    PhaseTimings timings;  // wall clock; excluded from equality

    bool operator==(const EditSession& o) const
    {
        return config == o.config && tokens.words == o.tokens.words && tau == o.tau &&
               start_timestep == o.start_timestep && trace == o.trace && final_mask == o.final_mask &&
               position == o.position && position_computations == o.position_computations && source == o.source &&
               output == o.output && output_image == o.output_image;
    }
};

// Full edit: noise to tau, guided loop down to 0, inpaint with the last mask,
// decode.
inline EditSession edit(const LatentImage& source, const TokenSequence& tokens, const EditConfig& cfg,
                        const DenoiserBackend& backend)
{
    using Clock = std::chrono::steady_clock;
    auto ms_since = [](Clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };

    cfg.validate();
    const NoiseSchedule& s = backend.schedule();
    if (s.steps != cfg.steps)
        throw ConfigError("edit: backend schedule has " + std::to_string(s.steps) + " inference steps, config asks for " +
                          std::to_string(cfg.steps));

    EditSession session;
    session.config = cfg;
    session.tokens = tokens;
    session.source = source;
    session.tau = timestep_from_strength(cfg.strength, s.T);
    if (session.tau == 0)
        throw ConfigError("edit: strength too low (tau = round(r*T) = 0 leaves no denoising steps to form a mask)");
    session.start_timestep = s.grid_floor(session.tau);

    const TextFeatures cond = encode_text(tokens, cfg.text_dim, cfg.seed);

    auto t0 = Clock::now();
    GuidedState state = GuidedState::start(source, session.start_timestep, cfg.rounds, cfg.seed, s);
    session.timings.noising_ms = ms_since(t0);

    t0 = Clock::now();
    for (std::size_t t : s.descending_from(session.start_timestep))
        session.trace.push_back(guided_step(state, t, backend, cfg, cond));
    session.timings.guided_ms = ms_since(t0);

    session.final_mask = session.trace.back().mask;
    session.position = *state.position;
    session.position_computations = state.position_computations;

    t0 = Clock::now();
    session.output = inpaint_finalize(source, session.final_mask, cond, backend, cfg);
    session.timings.inpaint_ms = ms_since(t0);
    session.output_image = decode_latent(session.output);
    return session;
}

inline EditSession edit(const Image& image, const TokenSequence& tokens, const EditConfig& cfg,
                        const DenoiserBackend& backend)
{
    return edit(encode_image(image), tokens, cfg, backend);
}

}  // namespace instmask
