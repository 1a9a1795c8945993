#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "instmask/error.hpp"
#include "instmask/numerics.hpp"
#include "instmask/schedule.hpp"

namespace instmask {

// 8-bit interleaved image; channels is 1 (gray) or 3 (RGB).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), data(w * h * c, fill)
    {
    }

    std::uint8_t& operator()(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    std::uint8_t operator()(std::size_t y, std::size_t x, std::size_t c) const
    {
        return data[(y * width + x) * channels + c];
    }

    bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
    bool operator==(const Image&) const = default;
};

// Mask <-> grayscale image: 0 keep, 255 edit region.
inline Image mask_to_image(const BinaryMask& m)
{
    Image img(m.width(), m.height(), 1);
    for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x)
            img(y, x, 0) = m.at(y, x) ? 255 : 0;
    return img;
}

inline BinaryMask image_to_mask(const Image& img)
{
    if (img.channels != 1)
        throw ShapeError("image_to_mask: mask images must be single-channel");
    Grid2D g(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const std::uint8_t v = img(y, x, 0);
            if (v != 0 && v != 255)
                throw ShapeError("image_to_mask: mask pixels must be 0 or 255");
            g(y, x) = v == 255 ? 1.0 : 0.0;
        }
    return BinaryMask(std::move(g));
}

// Stand-in image encoder: 2x2 average pooling, pixels mapped to [-1, 1].
inline LatentImage encode_image(const Image& img)
{
    if (img.width % 2 != 0 || img.height % 2 != 0 || img.width == 0 || img.height == 0)
        throw ShapeError("encode_image: image dimensions must be positive and even");
    LatentImage out(img.channels, img.height / 2, img.width / 2);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) {
                const double s = static_cast<double>(img(2 * y, 2 * x, c)) + img(2 * y, 2 * x + 1, c) +
                                 img(2 * y + 1, 2 * x, c) + img(2 * y + 1, 2 * x + 1, c);
                out(c, y, x) = (s / 4.0) / 127.5 - 1.0;
            }
    return out;
}

// Matching decoder: nearest-neighbour 2x upsampling, rounded and clamped.
inline Image decode_latent(const LatentImage& z)
{
    Image img(z.width * 2, z.height * 2, z.channels);
    for (std::size_t c = 0; c < z.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) {
                const double v = std::round((z(c, y / 2, x / 2) + 1.0) * 127.5);
                img(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
    return img;
}

}  // namespace instmask
