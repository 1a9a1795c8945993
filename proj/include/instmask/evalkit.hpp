#pragma once

// Editing-Mask style evaluation: mask IoU against a labeled edit region and
// the in-mask / out-of-mask pixel change rates.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "instmask/error.hpp"
#include "instmask/image.hpp"
#include "instmask/io.hpp"
#include "instmask/numerics.hpp"
#include "instmask/parallel.hpp"

namespace instmask::eval {

inline constexpr double kRatioFloor = 1e-6;

// |gen & gt| / |gen | gt|; two empty masks score 1.
inline double iou(const BinaryMask& gen, const BinaryMask& gt)
{
    if (gen.height() != gt.height() || gen.width() != gt.width())
        throw ShapeError("iou: masks differ in shape");
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < gen.grid.size(); ++i) {
        const bool a = gen.grid.values[i] != 0.0;
        const bool b = gt.grid.values[i] != 0.0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Per-pixel mean absolute channel difference, in [0, 255].
inline Grid2D pixel_change(const Image& a, const Image& b)
{
    if (!a.same_shape(b))
        throw ShapeError("pixel_change: images differ in shape");
    Grid2D p(a.height, a.width);
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.channels; ++c)
                s += std::abs(static_cast<double>(a(y, x, c)) - static_cast<double>(b(y, x, c)));
            p(y, x) = s / static_cast<double>(a.channels);
        }
    return p;
}

struct ChangeRates {
    double in_mask = 0.0;   // C_m, fraction
    double out_mask = 0.0;  // C_non, fraction
};

inline ChangeRates change_rates(const Image& orig, const Image& edited, const BinaryMask& gt)
{
    const Grid2D p = pixel_change(orig, edited);
    if (gt.height() != p.height || gt.width() != p.width)
        throw ShapeError("change_rates: mask and images differ in shape");
    double in_sum = 0.0, out_sum = 0.0;
    std::size_t in_n = 0, out_n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (gt.grid.values[i] != 0.0) {
            in_sum += p.values[i];
            ++in_n;
        } else {
            out_sum += p.values[i];
            ++out_n;
        }
    }
    if (in_n == 0 || out_n == 0)
        throw ShapeError("change_rates: ground-truth mask must contain both edit and keep pixels");
    return {in_sum / (255.0 * static_cast<double>(in_n)), out_sum / (255.0 * static_cast<double>(out_n))};
}

inline double change_ratio(const ChangeRates& r) { return r.in_mask / std::max(r.out_mask, kRatioFloor); }

// ---- corpus -------------------------------------------------------------------

inline const std::vector<std::string>& categories()
{
    static const std::vector<std::string> c{"main-object", "secondary-object", "background"};
    return c;
}

struct Sample {
    std::string id;
    std::string image;  // paths relative to the manifest directory
    std::string mask;
    std::string input_text;
    std::string edit_text;
    std::string category;
    std::string scene;  // optional scripted scene for the synthetic backend

    bool operator==(const Sample&) const = default;
};

struct Manifest {
    int version = 1;
    std::vector<Sample> samples;
    std::filesystem::path root;  // directory the relative paths resolve against

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

inline nlohmann::json to_json(const Manifest& m)
{
    nlohmann::json samples = nlohmann::json::array();
    for (const Sample& s : m.samples) {
        nlohmann::json j{{"id", s.id},
                         {"image", s.image},
                         {"mask", s.mask},
                         {"input_text", s.input_text},
                         {"edit_text", s.edit_text},
                         {"category", s.category}};
        if (!s.scene.empty())
            j["scene"] = s.scene;
        samples.push_back(std::move(j));
    }
    return {{"version", m.version}, {"samples", samples}};
}

inline Manifest manifest_from_json(const nlohmann::json& j, std::filesystem::path root)
{
    try {
        Manifest m;
        m.root = std::move(root);
        m.version = j.at("version").get<int>();
        if (m.version != 1)
            throw ConfigError("manifest: unsupported version " + std::to_string(m.version));
        for (const auto& s : j.at("samples")) {
            Sample x{s.at("id").get<std::string>(),         s.at("image").get<std::string>(),
                     s.at("mask").get<std::string>(),       s.at("input_text").get<std::string>(),
                     s.at("edit_text").get<std::string>(),  s.at("category").get<std::string>(),
                     s.value("scene", std::string{})};
            bool known = false;
            for (const auto& c : categories())
                known = known || c == x.category;
            if (!known)
                throw ConfigError("manifest: sample '" + x.id + "' has unknown category '" + x.category + "'");
            m.samples.push_back(std::move(x));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
}

inline Manifest read_manifest(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("manifest: " + std::string(e.what()));
    }
    return manifest_from_json(j, path.parent_path());
}

// What an editing run produced for one sample.
struct SampleOutput {
    Image edited;
    std::optional<BinaryMask> generated_mask;  // at image resolution
};

struct SampleMetrics {
    std::string id;
    std::string category;
    std::optional<double> iou;
    double c_m = 0.0;
    double c_non = 0.0;
    double ratio = 0.0;
    std::string error;  // non-empty when the sample could not be scored

    bool ok() const { return error.empty(); }
};

struct Aggregate {
    std::size_t count = 0;
    double mean_iou = 0.0;
    std::size_t iou_count = 0;
    double mean_c_m = 0.0;
    double mean_c_non = 0.0;
    double mean_ratio = 0.0;      // mean of per-sample ratios
    double ratio_of_means = 0.0;  // mean C_m over floored mean C_non
};

struct MetricsReport {
    std::vector<SampleMetrics> per_sample;
    Aggregate overall;
    std::map<std::string, Aggregate> per_category;
    std::size_t errors = 0;
};

inline SampleMetrics score_sample(const Sample& s, const Image& original, const BinaryMask& gt, const SampleOutput& out)
{
    SampleMetrics m;
    m.id = s.id;
    m.category = s.category;
    const ChangeRates r = change_rates(original, out.edited, gt);
    m.c_m = r.in_mask;
    m.c_non = r.out_mask;
    m.ratio = change_ratio(r);
    if (out.generated_mask)
        m.iou = iou(*out.generated_mask, gt);
    return m;
}

inline Aggregate aggregate(const std::vector<const SampleMetrics*>& xs)
{
    Aggregate a;
    for (const SampleMetrics* m : xs) {
        if (!m->ok())
            continue;
        ++a.count;
        a.mean_c_m += m->c_m;
        a.mean_c_non += m->c_non;
        a.mean_ratio += m->ratio;
        if (m->iou) {
            ++a.iou_count;
            a.mean_iou += *m->iou;
        }
    }
    if (a.count > 0) {
        const auto n = static_cast<double>(a.count);
        a.mean_c_m /= n;
        a.mean_c_non /= n;
        a.mean_ratio /= n;
        a.ratio_of_means = change_ratio({a.mean_c_m, a.mean_c_non});
    }
    if (a.iou_count > 0)
        a.mean_iou /= static_cast<double>(a.iou_count);
    return a;
}

// Scores every manifest sample. loader(sample) returns the run's output or
// throws; failures become per-sample error entries. loader may run
// concurrently for different samples.
template <typename Loader>
MetricsReport evaluate_corpus(const Manifest& manifest, Loader&& loader)
{
    MetricsReport report;
    report.per_sample.resize(manifest.samples.size());
    parallel_for(manifest.samples.size(), [&](std::size_t i) {
        const Sample& s = manifest.samples[i];
        try {
            const Image original = io::read_png(manifest.resolve(s.image));
            const BinaryMask gt = image_to_mask(io::read_png(manifest.resolve(s.mask)));
            report.per_sample[i] = score_sample(s, original, gt, loader(s));
        } catch (const std::exception& e) {
            SampleMetrics& m = report.per_sample[i];
            m.id = s.id;
            m.category = s.category;
            m.error = e.what();
        }
    });
    for (const auto& m : report.per_sample)
        report.errors += !m.ok();
    std::vector<const SampleMetrics*> all;
    for (const auto& m : report.per_sample)
        all.push_back(&m);
    report.overall = aggregate(all);
    for (const auto& c : categories()) {
        std::vector<const SampleMetrics*> xs;
        for (const auto& m : report.per_sample)
            if (m.category == c)
                xs.push_back(&m);
        if (!xs.empty())
            report.per_category[c] = aggregate(xs);
    }
    return report;
}

// Outputs laid out as <dir>/<id>/output.png and <dir>/<id>/final_mask.png.
inline SampleOutput load_output_dir(const std::filesystem::path& dir, const Sample& s)
{
    SampleOutput out;
    const std::filesystem::path base = dir / s.id;
    out.edited = io::read_png(base / "output.png");
    const std::filesystem::path mask = base / "final_mask.png";
    if (std::filesystem::exists(mask))
        out.generated_mask = image_to_mask(io::read_png(mask));
    return out;
}

inline nlohmann::json to_json(const Aggregate& a)
{
    return {{"count", a.count},         {"mean_iou", a.iou_count ? nlohmann::json(a.mean_iou) : nlohmann::json()},
            {"mean_c_m", a.mean_c_m},   {"mean_c_non", a.mean_c_non},
            {"mean_ratio", a.mean_ratio}, {"ratio_of_means", a.ratio_of_means}};
}

inline nlohmann::json to_json(const MetricsReport& r, const nlohmann::json& config = nlohmann::json::object())
{
    nlohmann::json per = nlohmann::json::array();
    for (const auto& m : r.per_sample) {
        nlohmann::json j{{"id", m.id}, {"category", m.category}};
        if (m.ok()) {
            j["iou"] = m.iou ? nlohmann::json(*m.iou) : nlohmann::json();
            j["c_m"] = m.c_m;
            j["c_non"] = m.c_non;
            j["ratio"] = m.ratio;
        } else {
            j["error"] = m.error;
        }
        per.push_back(std::move(j));
    }
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, agg] : r.per_category)
        cats[name] = to_json(agg);
    return {{"version", 1},
            {"config", config},
            {"per_sample", per},
            {"aggregates", to_json(r.overall)},
            {"per_category", cats},
            {"errors", r.errors}};
}

// Plain-text table: IoU, C_m(%), C_non(%), rate (ratio of the mean rates).
inline std::string summary_table(const MetricsReport& r)
{
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %6s %8s %9s %10s %8s\n", "subset", "n", "IoU", "C_m(%)", "C_non(%)", "rate");
    out += line;
    auto row = [&](const std::string& name, const Aggregate& a) {
        char iou_buf[16];
        if (a.iou_count)
            std::snprintf(iou_buf, sizeof iou_buf, "%.1f", 100.0 * a.mean_iou);
        else
            std::snprintf(iou_buf, sizeof iou_buf, "-");
        std::snprintf(line, sizeof line, "%-18s %6zu %8s %9.2f %10.2f %8.2f\n", name.c_str(), a.count, iou_buf,
                      100.0 * a.mean_c_m, 100.0 * a.mean_c_non, a.ratio_of_means);
        out += line;
    };
    row("all", r.overall);
    for (const auto& [name, agg] : r.per_category)
        row(name, agg);
    if (r.errors)
        out += std::to_string(r.errors) + " sample(s) failed\n";
    return out;
}

}  // namespace instmask::eval
