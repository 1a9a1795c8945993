#pragma once

// Synthetic editing scenes with known ground truth.
//
// A scene is laid out on the 16x16 attention grid: a main object, a smaller
// secondary object and the background. Images are 64x64 RGB (4x4 pixels per
// attention cell, 2x2 per latent cell) with a latent-cell checker texture so
// the stand-in encoder/decoder round-trips them exactly.
//
// SyntheticBackend scripts the denoiser for one scene. Each token attends to
// its region with a soft (Gaussian-bled) footprint; the start token attends
// mostly to the edit target. Token-specific gains couple the logits to
// a noise field keyed on x_t whose amplitude follows sqrt(1 - abar_t), so
// attention is noisy early and sharpens as t -> 0.
// Noise predictions are analytic: the conditional branch targets the edited
// scene, the unconditional one the source with its texture stripped.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "instmask/attention.hpp"
#include "instmask/editor.hpp"
#include "instmask/error.hpp"
#include "instmask/image.hpp"
#include "instmask/numerics.hpp"
#include "instmask/rng.hpp"
#include "instmask/schedule.hpp"

namespace instmask::synthetic {

inline constexpr std::size_t kCellPixels = 4;
inline constexpr std::size_t kImageSize = kAttentionSize * kCellPixels;

using Rgb = std::array<int, 3>;

// Half-open cell rectangle [r0, r1) x [c0, c1) on the attention grid.
struct Rect {
    std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;

    bool contains(std::size_t r, std::size_t c) const { return r >= r0 && r < r1 && c >= c0 && c < c1; }
    bool operator==(const Rect&) const = default;
};

enum class Region { diffuse, main, secondary, background };

inline std::string to_string(Region r)
{
    switch (r) {
    case Region::diffuse: return "diffuse";
    case Region::main: return "main";
    case Region::secondary: return "secondary";
    case Region::background: return "background";
    }
    return "diffuse";
}

inline Region region_from_string(const std::string& s)
{
    if (s == "diffuse")
        return Region::diffuse;
    if (s == "main")
        return Region::main;
    if (s == "secondary")
        return Region::secondary;
    if (s == "background")
        return Region::background;
    throw ConfigError("unknown scene region '" + s + "'");
}

// Editing category of a sample.
inline std::string category_name(Region target)
{
    switch (target) {
    case Region::main: return "main-object";
    case Region::secondary: return "secondary-object";
    case Region::background: return "background";
    default: throw ConfigError("scene target must be an object or the background");
    }
}

struct AttentionModel {
    double beta = 6.0;           // logit gain on the token footprint
    double kappa = 0.5;          // attention noise amplitude at full noise
    double bleed_sigma = 1.0;    // footprint softness, cells
    double diffuse_level = 0.3;  // footprint of function words
    double start_focus = 0.8;    // weight of the target in the start footprint

    bool operator==(const AttentionModel&) const = default;
};

struct Scene {
    Rect main;
    Rect secondary;
    Rgb main_color{};
    Rgb secondary_color{};
    Rgb background_top{};
    Rgb background_bottom{};
    int texture = 8;  // checker amplitude, gray levels
    Region target = Region::main;
    Rgb edit_color{};
    std::vector<std::string> input_tokens;
    std::vector<std::string> edit_tokens;
    std::vector<Region> edit_layout;  // one per edit token
    AttentionModel model{};

    bool operator==(const Scene&) const = default;

    Region region_at(std::size_t r, std::size_t c) const
    {
        if (main.contains(r, c))
            return Region::main;
        if (secondary.contains(r, c))
            return Region::secondary;
        return Region::background;
    }

    // Ground truth at attention resolution.
    BinaryMask target_mask() const
    {
        BinaryMask m = BinaryMask::filled(kAttentionSize, kAttentionSize, false);
        for (std::size_t r = 0; r < kAttentionSize; ++r)
            for (std::size_t c = 0; c < kAttentionSize; ++c)
                m.set(r, c, region_at(r, c) == target);
        return m;
    }

    std::string input_text() const { return join(input_tokens); }
    std::string edit_text() const { return join(edit_tokens); }

private:
    static std::string join(const std::vector<std::string>& w)
    {
        std::string out;
        for (const auto& s : w)
            out += (out.empty() ? "" : " ") + s;
        return out;
    }
};

inline int clamp_u8(int v) { return std::clamp(v, 0, 255); }

// Base color of a pixel before texture.
inline Rgb scene_color(const Scene& s, std::size_t py, std::size_t px)
{
    const Region r = s.region_at(py / kCellPixels, px / kCellPixels);
    if (r == Region::main)
        return s.main_color;
    if (r == Region::secondary)
        return s.secondary_color;
    const double f = static_cast<double>(py / 2) / static_cast<double>(kImageSize / 2 - 1);
    Rgb out{};
    for (int c = 0; c < 3; ++c)
        out[c] = static_cast<int>(std::lround((1.0 - f) * s.background_top[c] + f * s.background_bottom[c]));
    return out;
}

inline Image render(const Scene& s)
{
    Image img(kImageSize, kImageSize, 3);
    for (std::size_t y = 0; y < kImageSize; ++y)
        for (std::size_t x = 0; x < kImageSize; ++x) {
            const Rgb base = scene_color(s, y, x);
            const int t = (((y / 2) + (x / 2)) % 2 == 0) ? s.texture : -s.texture;
            for (std::size_t c = 0; c < 3; ++c)
                img(y, x, c) = static_cast<std::uint8_t>(clamp_u8(base[c] + t));
        }
    return img;
}

// Ground truth at image resolution.
inline BinaryMask render_mask(const Scene& s) { return resize_nearest(s.target_mask(), kImageSize, kImageSize); }

namespace detail {

inline Grid2D region_indicator(const Scene& s, Region region)
{
    Grid2D g(kAttentionSize, kAttentionSize);
    for (std::size_t r = 0; r < kAttentionSize; ++r)
        for (std::size_t c = 0; c < kAttentionSize; ++c)
            g(r, c) = s.region_at(r, c) == region ? 1.0 : 0.0;
    return g;
}

inline GaussianParams bleed(const AttentionModel& m)
{
    return {m.bleed_sigma, static_cast<std::size_t>(std::ceil(3.0 * m.bleed_sigma))};
}

}  // namespace detail

// Token footprints, start token first.
inline std::vector<Grid2D> token_footprints(const Scene& s)
{
    const GaussianParams g = detail::bleed(s.model);
    const Grid2D main = gaussian_filter(detail::region_indicator(s, Region::main), g);
    const Grid2D secondary = gaussian_filter(detail::region_indicator(s, Region::secondary), g);
    const Grid2D background = gaussian_filter(detail::region_indicator(s, Region::background), g);
    auto of = [&](Region r) -> Grid2D {
        switch (r) {
        case Region::main: return main;
        case Region::secondary: return secondary;
        case Region::background: return background;
        default: return Grid2D(kAttentionSize, kAttentionSize, s.model.diffuse_level);
        }
    };
    std::vector<Grid2D> out;
    out.reserve(s.edit_layout.size() + 1);
    Grid2D start = of(s.target);
    for (std::size_t i = 0; i < start.size(); ++i)
        start.values[i] = s.model.start_focus * start.values[i] +
                          (1.0 - s.model.start_focus) *
                              (main.values[i] + secondary.values[i] + background.values[i]) / 3.0;
    out.push_back(std::move(start));
    for (Region r : s.edit_layout)
        out.push_back(of(r));
    return out;
}

class SyntheticBackend : public DenoiserBackend {
public:
    SyntheticBackend(Scene scene, NoiseSchedule schedule)
        : scene_(std::move(scene)), schedule_(std::move(schedule)), footprints_(token_footprints(scene_))
    {
        if (scene_.edit_layout.size() != scene_.edit_tokens.size())
            throw ConfigError("SyntheticBackend: edit layout and edit tokens differ in length");
        // The model reproduces region colors but not the fine texture.
        Scene flat = scene_;
        flat.texture = 0;
        uncond_target_ = encode_image(render(flat));
        cond_target_ = uncond_target_;
        const std::size_t per_cell = uncond_target_.height / kAttentionSize;
        for (std::size_t c = 0; c < uncond_target_.channels; ++c)
            for (std::size_t y = 0; y < uncond_target_.height; ++y)
                for (std::size_t x = 0; x < uncond_target_.width; ++x)
                    if (scene_.region_at(y / per_cell, x / per_cell) == scene_.target)
                        cond_target_(c, y, x) = scene_.edit_color[c] / 127.5 - 1.0;
    }

    Prediction predict(const LatentImage& x_t, std::size_t t, const TextFeatures* cond) const override
    {
        require_same_shape(x_t, cond_target_, "SyntheticBackend::predict");
        const LatentImage& target = cond ? cond_target_ : uncond_target_;
        const double a = std::sqrt(schedule_.alpha_bar.at(t));
        const double b = std::sqrt(1.0 - schedule_.alpha_bar[t]);
        Prediction p{LatentImage(x_t.channels, x_t.height, x_t.width), std::nullopt};
        for (std::size_t i = 0; i < x_t.size(); ++i)
            p.eps.values[i] = (x_t.values[i] - a * target.values[i]) / b;
        if (cond)
            p.attention = attention(x_t, *cond, t);
        return p;
    }

    const NoiseSchedule& schedule() const override { return schedule_; }
    std::string name() const override { return "synthetic"; }
    const Scene& scene() const { return scene_; }

private:
    AttentionStack attention(const LatentImage& x_t, const TextFeatures& cond, std::size_t t) const
    {
        if (cond.tokens() != footprints_.size())
            throw ShapeError("SyntheticBackend: conditioning has " + std::to_string(cond.tokens()) +
                             " tokens, scene scripts " + std::to_string(footprints_.size()));
        // Per-cell perturbation: a noise field keyed on the exact latent, so
        // every trajectory sees its own draw and repeated calls agree.
        std::uint64_t key = splitmix64(t);
        for (double v : x_t.values)
            key = splitmix64(key ^ std::bit_cast<std::uint64_t>(v));
        NormalStream rng(key);
        const double amplitude = scene_.model.kappa * std::sqrt(1.0 - schedule_.alpha_bar[t]);
        const std::size_t cells = kAttentionSize * kAttentionSize;
        Matrix logits(cells, cond.tokens());
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const double noise = amplitude * rng.next();
            for (std::size_t tok = 0; tok < cond.tokens(); ++tok)
                logits(cell, tok) =
                    scene_.model.beta * footprints_[tok].values[cell] + cond.vectors(tok, 0) * noise;
        }
        return stack_from_probs(softmax_rows(logits, 1.0), kAttentionSize, kAttentionSize, t);
    }

    Scene scene_;
    NoiseSchedule schedule_;
    std::vector<Grid2D> footprints_;
    LatentImage uncond_target_;
    LatentImage cond_target_;
};

// ---- scene generation --------------------------------------------------------

namespace detail {

struct Named {
    const char* word;
    Rgb color;
};

inline constexpr std::array<Named, 8> kColors{{{"red", {200, 40, 40}},
                                                {"blue", {40, 60, 200}},
                                                {"yellow", {220, 200, 40}},
                                                {"green", {40, 170, 60}},
                                                {"purple", {140, 50, 170}},
                                                {"orange", {230, 130, 30}},
                                                {"white", {235, 235, 235}},
                                                {"black", {25, 25, 25}}}};
inline constexpr std::array<const char*, 6> kObjects{"cat", "dog", "car", "vase", "chair", "lamp"};
inline constexpr std::array<const char*, 5> kSmall{"ball", "cup", "book", "apple", "bird"};
inline constexpr std::array<Named, 4> kBackgrounds{{{"grass", {70, 140, 60}},
                                                     {"beach", {220, 200, 150}},
                                                     {"snow", {230, 235, 245}},
                                                     {"desert", {200, 150, 90}}}};

inline bool gap_ok(const Rect& a, const Rect& b)
{
    // at least one free cell between the rectangles
    return a.r1 + 1 <= b.r0 || b.r1 + 1 <= a.r0 || a.c1 + 1 <= b.c0 || b.c1 + 1 <= a.c0;
}

template <typename Arr>
std::size_t pick(std::mt19937_64& rng, const Arr& arr)
{
    return std::uniform_int_distribution<std::size_t>(0, arr.size() - 1)(rng);
}

template <typename Arr>
std::size_t pick_other(std::mt19937_64& rng, const Arr& arr, std::size_t not_this)
{
    std::size_t i = pick(rng, arr);
    while (i == not_this)
        i = pick(rng, arr);
    return i;
}

}  // namespace detail

// Sample k of a corpus; categories cycle main, secondary, background.
inline Scene generate_scene(std::uint64_t seed, std::size_t k, const AttentionModel& model = {})
{
    using detail::pick;
    using detail::pick_other;
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(Stream::scene), k));
    auto uniform = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };

    Scene s;
    s.model = model;
    do {
        const std::size_t side = uniform(5, 8);
        const std::size_t r0 = uniform(1, kAttentionSize - 1 - side);
        const std::size_t c0 = uniform(1, kAttentionSize - 1 - side);
        s.main = {r0, r0 + side, c0, c0 + side};
        const std::size_t small = uniform(4, 5);
        const std::size_t r1 = uniform(0, kAttentionSize - small);
        const std::size_t c1 = uniform(0, kAttentionSize - small);
        s.secondary = {r1, r1 + small, c1, c1 + small};
    } while (!detail::gap_ok(s.main, s.secondary));

    const std::size_t main_color = pick(rng, detail::kColors);
    const std::size_t sec_color = pick_other(rng, detail::kColors, main_color);
    const std::size_t noun = pick(rng, detail::kObjects);
    const std::size_t small_noun = pick(rng, detail::kSmall);
    const std::size_t bg = pick(rng, detail::kBackgrounds);
    s.main_color = detail::kColors[main_color].color;
    s.secondary_color = detail::kColors[sec_color].color;
    s.background_bottom = detail::kBackgrounds[bg].color;
    s.background_top = {120, 170, 225};

    s.input_tokens = {"a", "photo", "of", "a", detail::kColors[main_color].word, detail::kObjects[noun], "and", "a",
                      detail::kSmall[small_noun], "on", detail::kBackgrounds[bg].word};
    const std::vector<Region> layout{Region::diffuse, Region::diffuse, Region::diffuse, Region::diffuse,
                                     Region::main,    Region::main,    Region::diffuse, Region::diffuse,
                                     Region::secondary, Region::diffuse, Region::background};
    s.edit_tokens = s.input_tokens;
    s.edit_layout = layout;

    switch (k % 3) {
    case 0: {
        s.target = Region::main;
        const std::size_t c = pick_other(rng, detail::kColors, main_color);
        s.edit_color = detail::kColors[c].color;
        s.edit_tokens[4] = detail::kColors[c].word;
        s.edit_tokens[5] = detail::kObjects[pick_other(rng, detail::kObjects, noun)];
        break;
    }
    case 1: {
        s.target = Region::secondary;
        const std::size_t c = pick_other(rng, detail::kColors, sec_color);
        s.edit_color = detail::kColors[c].color;
        s.edit_tokens[8] = detail::kColors[c].word;
        s.edit_tokens.insert(s.edit_tokens.begin() + 9, detail::kSmall[pick_other(rng, detail::kSmall, small_noun)]);
        s.edit_layout.insert(s.edit_layout.begin() + 9, Region::secondary);
        break;
    }
    default: {
        s.target = Region::background;
        const std::size_t b = pick_other(rng, detail::kBackgrounds, bg);
        s.edit_color = detail::kBackgrounds[b].color;
        s.edit_tokens[10] = detail::kBackgrounds[b].word;
        break;
    }
    }
    return s;
}

// ---- JSON ----------------------------------------------------------------------

inline nlohmann::json rect_json(const Rect& r) { return {r.r0, r.r1, r.c0, r.c1}; }

inline Rect rect_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4)
        throw ConfigError("scene: rectangles are [r0, r1, c0, c1]");
    Rect r{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
    if (r.r0 >= r.r1 || r.c0 >= r.c1 || r.r1 > kAttentionSize || r.c1 > kAttentionSize)
        throw ConfigError("scene: rectangle outside the attention grid or empty");
    return r;
}

inline nlohmann::json to_json(const Scene& s)
{
    nlohmann::json layout = nlohmann::json::array();
    for (Region r : s.edit_layout)
        layout.push_back(to_string(r));
    return {{"main", rect_json(s.main)},
            {"secondary", rect_json(s.secondary)},
            {"main_color", s.main_color},
            {"secondary_color", s.secondary_color},
            {"background_top", s.background_top},
            {"background_bottom", s.background_bottom},
            {"texture", s.texture},
            {"target", to_string(s.target)},
            {"edit_color", s.edit_color},
            {"input_tokens", s.input_tokens},
            {"edit_tokens", s.edit_tokens},
            {"edit_layout", layout},
            {"model",
             {{"beta", s.model.beta},
              {"kappa", s.model.kappa},
              {"bleed_sigma", s.model.bleed_sigma},
              {"diffuse_level", s.model.diffuse_level},
              {"start_focus", s.model.start_focus}}}};
}

inline Scene scene_from_json(const nlohmann::json& j)
{
    try {
        Scene s;
        s.main = rect_from_json(j.at("main"));
        s.secondary = rect_from_json(j.at("secondary"));
        s.main_color = j.at("main_color").get<Rgb>();
        s.secondary_color = j.at("secondary_color").get<Rgb>();
        s.background_top = j.at("background_top").get<Rgb>();
        s.background_bottom = j.at("background_bottom").get<Rgb>();
        s.texture = j.at("texture").get<int>();
        s.target = region_from_string(j.at("target").get<std::string>());
        category_name(s.target);
        s.edit_color = j.at("edit_color").get<Rgb>();
        s.input_tokens = j.at("input_tokens").get<std::vector<std::string>>();
        s.edit_tokens = j.at("edit_tokens").get<std::vector<std::string>>();
        for (const auto& r : j.at("edit_layout"))
            s.edit_layout.push_back(region_from_string(r.get<std::string>()));
        if (s.edit_layout.size() != s.edit_tokens.size())
            throw ConfigError("scene: edit_layout and edit_tokens differ in length");
        if (j.contains("model")) {
            const auto& m = j.at("model");
            s.model.beta = m.value("beta", s.model.beta);
            s.model.kappa = m.value("kappa", s.model.kappa);
            s.model.bleed_sigma = m.value("bleed_sigma", s.model.bleed_sigma);
            s.model.diffuse_level = m.value("diffuse_level", s.model.diffuse_level);
            s.model.start_focus = m.value("start_focus", s.model.start_focus);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
}

}  // namespace instmask::synthetic
