#pragma once

// Training-free mask generation from cross-attention maps.
//
//   1. index:    the content token whose map is most cosine-similar to the
//                start token's map (start itself excluded, ties -> lowest).
//   2. similar:  cosine of every map (start included) against the index map.
//   3. position: double threshold -> +1 (> gamma1), -1 (< gamma2), else 0.
//   4. refine:   signed P-weighted sum of maps, clamped at 0, max-normalized.
//   5. mask:     Gaussian smoothing, then strict threshold phi.
//
// Steps 1-3 run once, on the first denoising step; the resulting position
// vector is cached by the caller and reused for every later step.

#include <cstddef>
#include <optional>
#include <vector>

#include "instmask/attention.hpp"
#include "instmask/error.hpp"
#include "instmask/numerics.hpp"

namespace instmask {

struct MaskGenConfig {
    double gamma1 = 0.9;
    double gamma2 = 0.6;
    double phi = 0.2;
    GaussianParams gaussian{};

    void validate() const
    {
        if (!(phi > 0.0 && phi < 1.0))
            throw ConfigError("MaskGenConfig: phi must lie in (0, 1)");
        if (!(gamma1 > gamma2))
            throw ConfigError("MaskGenConfig: gamma1 must exceed gamma2");
        gaussian.validate();
    }

    bool operator==(const MaskGenConfig&) const = default;
};

struct SimilarityVector {
    std::vector<double> values;  // one per token, start included

    bool operator==(const SimilarityVector&) const = default;
};

struct PositionVector {
    std::vector<int> weights;  // each in {-1, 0, +1}
    double gamma1 = 0.9;
    double gamma2 = 0.6;
    std::size_t computed_at = 0;
    std::size_t index_token = 0;
    SimilarityVector similarity;

    bool operator==(const PositionVector&) const = default;
};

// argmax_{i in [1, N]} cosine(A_i, A_start); lowest index wins ties.
inline std::size_t index_token(const AttentionStack& stack)
{
    stack.validate_shape();
    if (stack.tokens() < 2)
        throw ShapeError("index_token: need the start map and at least one content map");
    std::size_t best = 1;
    double best_sim = cosine_sim(stack.maps[1], stack.maps[0]);
    for (std::size_t i = 2; i < stack.tokens(); ++i) {
        const double s = cosine_sim(stack.maps[i], stack.maps[0]);
        if (s > best_sim) {
            best_sim = s;
            best = i;
        }
    }
    return best;
}

inline SimilarityVector similarity_vector(const AttentionStack& stack, std::size_t index)
{
    stack.validate_shape();
    if (index >= stack.tokens())
        throw ShapeError("similarity_vector: index out of range");
    SimilarityVector s;
    s.values.reserve(stack.tokens());
    for (const Grid2D& m : stack.maps)
        s.values.push_back(cosine_sim(m, stack.maps[index]));
    return s;
}

// Equality with either threshold falls into the 0 branch.
inline PositionVector position_vector(const SimilarityVector& s, const MaskGenConfig& cfg, std::size_t computed_at = 0,
                                      std::size_t index = 0)
{
    if (!(cfg.gamma1 > cfg.gamma2))
        throw ConfigError("position_vector: gamma1 must exceed gamma2");
    PositionVector p;
    p.gamma1 = cfg.gamma1;
    p.gamma2 = cfg.gamma2;
    p.computed_at = computed_at;
    p.index_token = index;
    p.similarity = s;
    p.weights.reserve(s.values.size());
    for (double v : s.values)
        p.weights.push_back(v > cfg.gamma1 ? 1 : (v < cfg.gamma2 ? -1 : 0));
    return p;
}

inline Grid2D refine(const AttentionStack& stack, const PositionVector& p)
{
    stack.validate_shape();
    if (p.weights.size() != stack.tokens())
        throw ShapeError("refine: position vector length does not match the token count");
    Grid2D out(stack.height(), stack.width());
    for (std::size_t i = 0; i < stack.tokens(); ++i) {
        if (p.weights[i] == 0)
            continue;
        const double w = p.weights[i];
        for (std::size_t c = 0; c < out.size(); ++c)
            out.values[c] += w * stack.maps[i].values[c];
    }
    for (double& v : out.values)
        v = v < 0.0 ? 0.0 : v;
    const double mx = out.max();
    if (mx > 0.0)
        for (double& v : out.values)
            v /= mx;
    return out;
}

inline BinaryMask make_mask(const Grid2D& refined, const MaskGenConfig& cfg)
{
    const Grid2D smooth = gaussian_filter(refined, cfg.gaussian);
    Grid2D bits(smooth.height, smooth.width);
    for (std::size_t i = 0; i < smooth.size(); ++i)
        bits.values[i] = smooth.values[i] > cfg.phi ? 1.0 : 0.0;
    return BinaryMask(std::move(bits), cfg.phi);
}

struct InstantMask {
    BinaryMask mask;
    PositionVector position;
    Grid2D refined;
    bool position_computed = false;  // true when P was derived on this call
};

// One denoising step's mask. Pass the cached position vector on every call
// after the first.
inline InstantMask instant_mask(const std::vector<AttentionStack>& stacks, const MaskGenConfig& cfg,
                                const std::optional<PositionVector>& cached = std::nullopt)
{
    cfg.validate();
    const AttentionStack stack = aggregate_rounds(stacks);
    InstantMask out;
    if (cached) {
        if (cached->weights.size() != stack.tokens())
            throw ShapeError("instant_mask: cached position vector does not match the token count");
        out.position = *cached;
    } else {
        const std::size_t idx = index_token(stack);
        out.position = position_vector(similarity_vector(stack, idx), cfg, stack.timestep, idx);
        out.position_computed = true;
    }
    out.refined = refine(stack, out.position);
    out.mask = make_mask(out.refined, cfg);
    return out;
}

}  // namespace instmask
