#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Written from the definitions with plain loops; sums run in
// row-major cell order so results are bit-comparable with the library.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "instmask/attention.hpp"
#include "instmask/numerics.hpp"

namespace oracle {

inline double cosine(const instmask::Grid2D& a, const instmask::Grid2D& b)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t r = 0; r < a.height; ++r)
        for (std::size_t c = 0; c < a.width; ++c) {
            ab += a(r, c) * b(r, c);
            aa += a(r, c) * a(r, c);
            bb += b(r, c) * b(r, c);
        }
    return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

// Every content token scored against the start map; the first maximum wins.
inline std::size_t index_token(const instmask::AttentionStack& s)
{
    std::vector<double> score(s.tokens(), -2.0);
    for (std::size_t i = 1; i < s.tokens(); ++i)
        score[i] = cosine(s.maps[i], s.maps[0]);
    const double best = *std::max_element(score.begin(), score.end());
    for (std::size_t i = 1; i < s.tokens(); ++i)
        if (score[i] == best)
            return i;
    return 0;
}

inline std::vector<double> similarity(const instmask::AttentionStack& s, std::size_t index)
{
    std::vector<double> out;
    for (std::size_t i = 0; i < s.tokens(); ++i)
        out.push_back(cosine(s.maps[i], s.maps[index]));
    return out;
}

inline int position(double v, double g1, double g2)
{
    if (v > g1)
        return 1;
    if (v < g2)
        return -1;
    return 0;
}

inline instmask::Grid2D refine(const instmask::AttentionStack& s, const std::vector<int>& p)
{
    instmask::Grid2D out(s.height(), s.width());
    double peak = 0.0;
    for (std::size_t r = 0; r < out.height; ++r)
        for (std::size_t c = 0; c < out.width; ++c) {
            double v = 0.0;
            for (std::size_t i = 0; i < s.tokens(); ++i) {
                if (p[i] > 0)
                    v += s.maps[i](r, c);
                else if (p[i] < 0)
                    v -= s.maps[i](r, c);
            }
            out(r, c) = v > 0.0 ? v : 0.0;
            peak = std::max(peak, out(r, c));
        }
    if (peak > 0.0)
        for (double& v : out.values)
            v /= peak;
    return out;
}

// Random softmax-normalized stack with N in [2, 16]. Some draws plant a map
// copy or a scaled copy so that ties and near-threshold similarities occur.
inline instmask::AttentionStack random_stack(std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> n_dist(2, 16);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t n = n_dist(rng);
    const double gain = 0.5 + 4.0 * u(rng);
    instmask::Matrix logits(instmask::kAttentionSize * instmask::kAttentionSize, n);
    for (double& v : logits.values)
        v = gain * g(rng);
    if (n >= 3 && u(rng) < 0.3) {
        std::uniform_int_distribution<std::size_t> pick(1, n - 1);
        const std::size_t a = pick(rng), b = pick(rng);
        for (std::size_t r = 0; r < logits.rows; ++r)
            logits(r, b) = logits(r, a);
    }
    return instmask::stack_from_probs(instmask::softmax_rows(logits, 1.0), instmask::kAttentionSize,
                                      instmask::kAttentionSize, 0);
}

}  // namespace oracle
