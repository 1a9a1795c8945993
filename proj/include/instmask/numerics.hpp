#pragma once

// Dense 2-D grids and the small set of numeric kernels the mask pipeline is
// built from: cosine similarity, separable Gaussian smoothing, row softmax and
// nearest-neighbour mask upsampling. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "instmask/error.hpp"

namespace instmask {

// Row-major field of reals. Houses attention maps, refined maps and masks.
struct Grid2D {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Grid2D() = default;
    Grid2D(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
    Grid2D(std::size_t h, std::size_t w, std::vector<double> v) : height(h), width(w), values(std::move(v))
    {
        if (values.size() != height * width)
            throw ShapeError("Grid2D: value count does not match height*width");
    }

    double& operator()(std::size_t r, std::size_t c) { return values[r * width + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }

    std::size_t size() const { return values.size(); }
    bool same_shape(const Grid2D& o) const { return height == o.height && width == o.width; }

    double sum() const
    {
        double s = 0.0;
        for (double v : values)
            s += v;
        return s;
    }

    double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

    bool operator==(const Grid2D&) const = default;
};

// Row-major real matrix for the attention logits (rows = spatial cells).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v))
    {
        if (values.size() != rows * cols)
            throw ShapeError("Matrix: value count does not match rows*cols");
    }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

// Sampled Gaussian kernel; sigma in grid cells, radius is the kernel half-width.
struct GaussianParams {
    double sigma = 1.0;
    std::size_t radius = 3;

    void validate() const
    {
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw ConfigError("GaussianParams: sigma must be finite and >= 0");
        if (sigma > 0.0 && static_cast<double>(radius) < std::ceil(3.0 * sigma))
            throw ConfigError("GaussianParams: radius must be >= ceil(3*sigma)");
    }

    bool operator==(const GaussianParams&) const = default;
};

// {0,1} grid plus the threshold that produced it (0 when not thresholded).
struct BinaryMask {
    Grid2D grid;
    double threshold_used = 0.0;

    BinaryMask() = default;
    explicit BinaryMask(Grid2D g, double threshold = 0.0) : grid(std::move(g)), threshold_used(threshold)
    {
        for (double v : grid.values)
            if (v != 0.0 && v != 1.0)
                throw ShapeError("BinaryMask: values must be exactly 0 or 1");
    }

    static BinaryMask filled(std::size_t h, std::size_t w, bool on) { return BinaryMask(Grid2D(h, w, on ? 1.0 : 0.0)); }

    std::size_t height() const { return grid.height; }
    std::size_t width() const { return grid.width; }
    bool at(std::size_t r, std::size_t c) const { return grid(r, c) != 0.0; }
    void set(std::size_t r, std::size_t c, bool on) { grid(r, c) = on ? 1.0 : 0.0; }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (double v : grid.values)
            n += v != 0.0;
        return n;
    }

    double area_ratio() const
    {
        return grid.size() == 0 ? 0.0 : static_cast<double>(count()) / static_cast<double>(grid.size());
    }

    bool operator==(const BinaryMask&) const = default;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

// Half-sample symmetric reflection (d c b a | a b c d | d c b a), any offset.
inline std::size_t reflect_index(long long i, std::size_t n)
{
    const auto period = static_cast<long long>(2 * n);
    long long m = i % period;
    if (m < 0)
        m += period;
    if (m >= static_cast<long long>(n))
        m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

}  // namespace detail

// Cosine of the angle between two flattened grids.
inline double cosine_sim(const Grid2D& a, const Grid2D& b)
{
    if (!a.same_shape(b))
        throw ShapeError("cosine_sim: grids differ in shape");
    const double na = std::sqrt(detail::dot(a.values, a.values));
    const double nb = std::sqrt(detail::dot(b.values, b.values));
    if (na == 0.0 || nb == 0.0)
        throw DegenerateAttentionError("cosine_sim: all-zero grid has no direction");
    const double c = detail::dot(a.values, b.values) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// Normalized sampled Gaussian, indices -radius..radius.
inline std::vector<double> gaussian_kernel(const GaussianParams& p)
{
    p.validate();
    const auto r = static_cast<long long>(p.radius);
    std::vector<double> k(2 * p.radius + 1, 0.0);
    if (p.sigma == 0.0) {
        k[p.radius] = 1.0;
        return k;
    }
    double total = 0.0;
    for (long long i = -r; i <= r; ++i) {
        const double x = static_cast<double>(i);
        k[static_cast<std::size_t>(i + r)] = std::exp(-(x * x) / (2.0 * p.sigma * p.sigma));
        total += k[static_cast<std::size_t>(i + r)];
    }
    for (double& v : k)
        v /= total;
    return k;
}

// Separable Gaussian convolution with reflect padding.
inline Grid2D gaussian_filter(const Grid2D& g, const GaussianParams& p)
{
    p.validate();
    if (p.sigma == 0.0 || g.size() == 0)
        return g;
    const std::vector<double> k = gaussian_kernel(p);
    const auto r = static_cast<long long>(p.radius);

    Grid2D tmp(g.height, g.width);
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
            double s = 0.0;
            for (long long d = -r; d <= r; ++d)
                s += k[static_cast<std::size_t>(d + r)] * g(y, detail::reflect_index(static_cast<long long>(x) + d, g.width));
            tmp(y, x) = s;
        }

    Grid2D out(g.height, g.width);
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
            double s = 0.0;
            for (long long d = -r; d <= r; ++d)
                s += k[static_cast<std::size_t>(d + r)] * tmp(detail::reflect_index(static_cast<long long>(y) + d, g.height), x);
            out(y, x) = s;
        }
    return out;
}

// Row-wise softmax of m/scale, max-subtracted.
inline Matrix softmax_rows(const Matrix& m, double scale)
{
    if (!(scale > 0.0))
        throw ConfigError("softmax_rows: scale must be > 0");
    Matrix out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto in = m.row(r);
        auto dst = out.row(r);
        if (in.empty())
            continue;
        double mx = in[0] / scale;
        for (double v : in)
            mx = std::max(mx, v / scale);
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] / scale - mx);
            total += dst[c];
        }
        for (double& v : dst)
            v /= total;
    }
    return out;
}

// Nearest-neighbour upsampling; target must not be smaller than the source.
inline BinaryMask resize_nearest(const BinaryMask& m, std::size_t target_h, std::size_t target_w)
{
    if (target_h < m.height() || target_w < m.width())
        throw ShapeError("resize_nearest: target smaller than source (" + std::to_string(target_h) + "x" +
                         std::to_string(target_w) + " < " + std::to_string(m.height()) + "x" +
                         std::to_string(m.width()) + ")");
    Grid2D out(target_h, target_w);
    for (std::size_t r = 0; r < target_h; ++r) {
        const std::size_t sr = r * m.height() / target_h;
        for (std::size_t c = 0; c < target_w; ++c)
            out(r, c) = m.grid(sr, c * m.width() / target_w);
    }
    return BinaryMask(std::move(out), m.threshold_used);
}

}  // namespace instmask
