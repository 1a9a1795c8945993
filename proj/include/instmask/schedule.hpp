#pragma once

// Noise schedule and the forward / reverse diffusion arithmetic.
//
// Training timesteps are 0-based: alpha_bar[0] is the first (least noisy)
// level. Inference walks an evenly strided subset of [0, T); a reverse step
// from grid timestep t lands on the grid predecessor, or on the clean latent
// when t is the lowest grid point.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "instmask/error.hpp"
#include "instmask/rng.hpp"

namespace instmask {

// Channel-major latent tensor (c, y, x).
struct LatentImage {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    LatentImage() = default;
    LatentImage(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), values(c * h * w, fill)
    {
    }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    double operator()(std::size_t c, std::size_t y, std::size_t x) const
    {
        return values[(c * height + y) * width + x];
    }

    std::size_t size() const { return values.size(); }
    bool same_shape(const LatentImage& o) const
    {
        return channels == o.channels && height == o.height && width == o.width;
    }

    static LatentImage gaussian(std::size_t c, std::size_t h, std::size_t w, NormalStream& rng)
    {
        LatentImage out(c, h, w);
        for (double& v : out.values)
            v = rng.next();
        return out;
    }

    static LatentImage gaussian_like(const LatentImage& shape, NormalStream& rng)
    {
        return gaussian(shape.channels, shape.height, shape.width, rng);
    }

    bool operator==(const LatentImage&) const = default;
};

inline void require_same_shape(const LatentImage& a, const LatentImage& b, const char* where)
{
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": latent shapes differ");
}

inline double rmse(const LatentImage& a, const LatentImage& b)
{
    require_same_shape(a, b, "rmse");
    if (a.size() == 0)
        return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;
    std::size_t steps = 0;
    std::vector<std::size_t> timesteps;  // ascending inference grid

    // Builds the cumulative products and inference grid from per-step alphas.
    static NoiseSchedule from_alphas(std::vector<double> alphas, std::size_t steps)
    {
        if (alphas.empty())
            throw ConfigError("NoiseSchedule: empty alpha sequence");
        if (steps == 0 || steps > alphas.size())
            throw ConfigError("NoiseSchedule: steps must be in [1, T]");
        NoiseSchedule s;
        s.T = alphas.size();
        s.alpha = std::move(alphas);
        s.alpha_bar.resize(s.T);
        s.sigma.resize(s.T);
        double prod = 1.0;
        for (std::size_t t = 0; t < s.T; ++t) {
            if (!(s.alpha[t] > 0.0 && s.alpha[t] < 1.0))
                throw ConfigError("NoiseSchedule: alpha must lie in (0, 1)");
            prod *= s.alpha[t];
            s.alpha_bar[t] = prod;
            s.sigma[t] = std::sqrt(1.0 - s.alpha[t]);
        }
        s.steps = steps;
        const std::size_t stride = s.T / steps;
        s.timesteps.reserve(steps);
        for (std::size_t k = 0; k < steps; ++k)
            s.timesteps.push_back(k * stride);
        return s;
    }

    bool on_grid(std::size_t t) const { return std::binary_search(timesteps.begin(), timesteps.end(), t); }

    // Grid predecessor of t (the next, less noisy state); nullopt at the final step.
    std::optional<std::size_t> previous(std::size_t t) const
    {
        auto it = std::lower_bound(timesteps.begin(), timesteps.end(), t);
        if (it == timesteps.end() || *it != t)
            throw ConfigError("NoiseSchedule: timestep " + std::to_string(t) + " is not on the inference grid");
        if (it == timesteps.begin())
            return std::nullopt;
        return *(it - 1);
    }

    // Largest grid timestep <= t.
    std::size_t grid_floor(std::size_t t) const
    {
        auto it = std::upper_bound(timesteps.begin(), timesteps.end(), t);
        if (it == timesteps.begin())
            throw ConfigError("NoiseSchedule: no grid timestep at or below " + std::to_string(t));
        return *(it - 1);
    }

    // Grid timesteps from start down to 0, inclusive.
    std::vector<std::size_t> descending_from(std::size_t start) const
    {
        std::vector<std::size_t> out;
        for (auto it = timesteps.rbegin(); it != timesteps.rend(); ++it)
            if (*it <= start)
                out.push_back(*it);
        return out;
    }
};

// Linear beta ramp, alpha = 1 - beta, sigma = sqrt(beta).
inline NoiseSchedule build_schedule(std::size_t T = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                                    std::size_t steps = 50)
{
    if (T == 0)
        throw ConfigError("build_schedule: T must be positive");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("build_schedule: require 0 < beta_start <= beta_end < 1");
    if (steps == 0 || steps > T)
        throw ConfigError("build_schedule: steps must be in [1, T]");
    std::vector<double> alphas(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        alphas[t] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
    }
    return NoiseSchedule::from_alphas(std::move(alphas), steps);
}

// Starting timestep tau = round(r*T), clamped to a valid index.
inline std::size_t timestep_from_strength(double r, std::size_t T)
{
    if (!(r >= 0.0 && r <= 1.0))
        throw ConfigError("timestep_from_strength: strength must be in [0, 1]");
    if (T == 0)
        throw ConfigError("timestep_from_strength: T must be positive");
    const auto tau = static_cast<std::size_t>(std::llround(r * static_cast<double>(T)));
    return std::min(tau, T - 1);
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline LatentImage add_noise(const LatentImage& x0, std::size_t t, const LatentImage& eps, const NoiseSchedule& s)
{
    require_same_shape(x0, eps, "add_noise");
    if (t >= s.T)
        throw ConfigError("add_noise: timestep out of range");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    LatentImage out(x0.channels, x0.height, x0.width);
    for (std::size_t i = 0; i < x0.size(); ++i)
        out.values[i] = a * x0.values[i] + b * eps.values[i];
    return out;
}

// Inverts add_noise for x0 given the noise.
inline LatentImage predict_x0(const LatentImage& x_t, std::size_t t, const LatentImage& eps, const NoiseSchedule& s)
{
    require_same_shape(x_t, eps, "predict_x0");
    if (t >= s.T)
        throw ConfigError("predict_x0: timestep out of range");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    LatentImage out(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < x_t.size(); ++i)
        out.values[i] = (x_t.values[i] - b * eps.values[i]) / a;
    return out;
}

// One ancestral step from grid timestep t to its grid predecessor. On a strided
// grid alpha is reindexed to abar_t / abar_prev and sigma to sqrt(1 - that);
// with stride 1 these are exactly alpha_t and sigma_t. z is ignored on the
// final step.
inline LatentImage reverse_step(const LatentImage& x_t, const LatentImage& eps_pred, std::size_t t,
                                const LatentImage& z, const NoiseSchedule& s)
{
    require_same_shape(x_t, eps_pred, "reverse_step");
    require_same_shape(x_t, z, "reverse_step");
    const std::optional<std::size_t> prev = s.previous(t);
    const double abar_prev = prev ? s.alpha_bar[*prev] : 1.0;
    const double alpha_eff = s.alpha_bar[t] / abar_prev;
    const double sigma_eff = prev ? std::sqrt(1.0 - alpha_eff) : 0.0;
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_eff);
    const double eps_coef = (1.0 - alpha_eff) / std::sqrt(1.0 - s.alpha_bar[t]);

    LatentImage out(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < x_t.size(); ++i)
        out.values[i] = inv_sqrt_alpha * (x_t.values[i] - eps_coef * eps_pred.values[i]) + sigma_eff * z.values[i];
    return out;
}

}  // namespace instmask
