// instmask: command-line front end for mask-guided editing, attention-dump
// masking, corpus generation and evaluation.
//
// Exit codes: 0 success, 1 usage or validation error, 2 partial evaluation,
// 3 IO failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "instmask/instmask.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace instmask;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kPartial = 2, kIo = 3 };

json read_json(const fs::path& path)
{
    try {
        return json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

void make_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

json mask_record(const PositionVector& p, const BinaryMask& mask, double phi)
{
    return {{"index_token", p.index_token},
            {"S", p.similarity.values},
            {"P", p.weights},
            {"phi", phi},
            {"area_ratio", mask.area_ratio()}};
}

// ---- edit ------------------------------------------------------------------------

struct EditArgs {
    std::string image;
    std::string tokens;
    std::string backend = "synthetic";
    std::string out_dir;
    bool dump_attention = false;
    bool record_timings = false;
    EditConfig cfg;
};

// Tokens file: {"tokens": [...]} or {"text": "..."}, plus an optional "scene"
// object that scripts the synthetic backend.
struct TokensFile {
    TokenSequence tokens;
    std::optional<synthetic::Scene> scene;
};

TokensFile read_tokens(const fs::path& path)
{
    const json j = read_json(path);
    TokensFile f;
    try {
        if (j.contains("tokens"))
            f.tokens = TokenSequence(j.at("tokens").get<std::vector<std::string>>());
        else if (j.contains("text"))
            f.tokens = TokenSequence::parse(j.at("text").get<std::string>());
        else
            throw ConfigError(path.string() + ": expected a \"tokens\" array or a \"text\" string");
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (f.tokens.content_count() == 0)
        throw ConfigError(path.string() + ": no tokens");
    if (j.contains("scene"))
        f.scene = synthetic::scene_from_json(j.at("scene"));
    return f;
}

json session_json(const EditSession& s, const EditArgs& a)
{
    const EditConfig& c = s.config;
    json steps = json::array();
    for (const StepTrace& t : s.trace)
        steps.push_back({{"timestep", t.timestep}, {"mask_area_ratio", t.mask.area_ratio()}});
    json j{{"version", 1},
           {"config",
            {{"strength", c.strength},
             {"steps", c.steps},
             {"scale", c.cfg_scale},
             {"rounds", c.rounds},
             {"phi", c.maskgen.phi},
             {"gamma1", c.maskgen.gamma1},
             {"gamma2", c.maskgen.gamma2},
             {"gaussian_sigma", c.maskgen.gaussian.sigma},
             {"gaussian_radius", c.maskgen.gaussian.radius},
             {"seed", c.seed},
             {"backend", a.backend}}},
           {"tokens", s.tokens.with_start()},
           {"tau", s.tau},
           {"start_timestep", s.start_timestep},
           {"position_computed_at", s.position.computed_at},
           {"position_computations", s.position_computations},
           {"mask", mask_record(s.position, s.final_mask, c.maskgen.phi)},
           {"steps", steps}};
    if (a.record_timings)
        j["timings_ms"] = {{"noising", s.timings.noising_ms},
                           {"guided", s.timings.guided_ms},
                           {"inpainting", s.timings.inpaint_ms}};
    return j;
}

// Attention of every round at the first guided step, as the loop sees it.
std::vector<AttentionStack> first_step_attention(const EditSession& s, const DenoiserBackend& backend)
{
    const NoiseSchedule& sched = backend.schedule();
    const GuidedState st = GuidedState::start(s.source, s.start_timestep, s.config.rounds, s.config.seed, sched);
    const TextFeatures cond = encode_text(s.tokens, s.config.text_dim, s.config.seed);
    std::vector<AttentionStack> out;
    for (std::size_t k = 0; k < st.trajectories.size(); ++k) {
        GuidedPrediction g = eps_cfg(backend, st.trajectories[k], s.start_timestep, cond, s.config.cfg_scale);
        g.attention.round = k;
        out.push_back(std::move(g.attention));
    }
    return out;
}

int run_edit(const EditArgs& a)
{
    a.cfg.validate();
    const Image image = io::read_png(a.image);
    const TokensFile tf = read_tokens(a.tokens);
    const NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02, a.cfg.steps);

    std::unique_ptr<DenoiserBackend> backend;
    if (a.backend == "synthetic") {
        if (!tf.scene)
            throw ConfigError("the synthetic backend needs a \"scene\" object in the tokens file");
        if (tf.scene->edit_tokens != tf.tokens.words)
            throw ConfigError("tokens file: \"tokens\" must match the scene's edit tokens");
        backend = std::make_unique<synthetic::SyntheticBackend>(*tf.scene, sched);
    } else {
        backend = std::make_unique<OracleBackend>(encode_image(image), sched, a.cfg.seed, a.cfg.text_dim);
    }

    const EditSession s = edit(image, tf.tokens, a.cfg, *backend);
    std::vector<AttentionStack> attention;
    if (a.dump_attention)
        attention = first_step_attention(s, *backend);

    // Everything is computed; only now touch the output directory.
    const fs::path out(a.out_dir);
    make_dir(out);
    io::write_png(out / "output.png", s.output_image);
    io::write_png(out / "final_mask.png",
                  mask_to_image(resize_nearest(s.final_mask, s.output_image.height, s.output_image.width)));
    if (a.dump_attention)
        io::write_attention(out / "attention", attention, s.tokens);
    write_json(out / "session.json", session_json(s, a));
    std::cout << "tau " << s.tau << ", " << s.trace.size() << " guided steps, mask area "
              << s.final_mask.area_ratio() << "\n";
    return kOk;
}

// ---- mask ------------------------------------------------------------------------

struct MaskArgs {
    std::string attention;
    std::string out_dir;
    std::size_t size = synthetic::kImageSize;
    MaskGenConfig cfg;
};

int run_mask(const MaskArgs& a)
{
    a.cfg.validate();
    const std::vector<AttentionStack> stacks = io::read_attention(a.attention);
    const InstantMask im = instant_mask(stacks, a.cfg);
    const BinaryMask up = resize_nearest(im.mask, a.size, a.size);

    const fs::path out(a.out_dir);
    make_dir(out);
    io::write_png(out / "mask.png", mask_to_image(im.mask));
    io::write_png(out / "mask_upsampled.png", mask_to_image(up));
    write_json(out / "mask.json", mask_record(im.position, im.mask, a.cfg.phi));
    std::cout << "index token " << im.position.index_token << ", mask area " << im.mask.area_ratio() << "\n";
    return kOk;
}

// ---- gen-synthetic -----------------------------------------------------------------

struct GenArgs {
    std::size_t count = 30;
    std::uint64_t seed = 7;
    std::string out_dir;
};

int run_gen_synthetic(const GenArgs& a)
{
    if (a.count == 0)
        throw ConfigError("--count must be >= 1");
    const fs::path out(a.out_dir);
    eval::Manifest manifest;
    std::vector<synthetic::Scene> scenes;
    for (std::size_t k = 0; k < a.count; ++k)
        scenes.push_back(synthetic::generate_scene(a.seed, k));

    make_dir(out);
    for (std::size_t k = 0; k < a.count; ++k) {
        const synthetic::Scene& sc = scenes[k];
        char id[32];
        std::snprintf(id, sizeof id, "sample-%03zu", k);
        make_dir(out / id);
        const std::string dir = std::string(id) + "/";
        io::write_png(out / id / "image.png", synthetic::render(sc));
        io::write_png(out / id / "mask.png", mask_to_image(synthetic::render_mask(sc)));
        write_json(out / id / "tokens.json", {{"input_text", sc.input_text()},
                                              {"edit_text", sc.edit_text()},
                                              {"tokens", sc.edit_tokens},
                                              {"scene", synthetic::to_json(sc)}});
        manifest.samples.push_back({id, dir + "image.png", dir + "mask.png", sc.input_text(), sc.edit_text(),
                                    synthetic::category_name(sc.target), dir + "tokens.json"});
    }
    write_json(out / "manifest.json", eval::to_json(manifest));
    std::cout << a.count << " samples written to " << out.string() << "\n";
    return kOk;
}

// ---- eval ------------------------------------------------------------------------

struct EvalArgs {
    std::string manifest;
    std::string outputs;
    std::string report;
};

int run_eval(const EvalArgs& a)
{
    const eval::Manifest m = eval::read_manifest(a.manifest);
    if (m.samples.empty())
        throw ConfigError("manifest has no samples");
    const fs::path outputs(a.outputs);
    const eval::MetricsReport r =
        eval::evaluate_corpus(m, [&](const eval::Sample& s) { return eval::load_output_dir(outputs, s); });
    const fs::path report = a.report.empty() ? outputs / "report.json" : fs::path(a.report);
    write_json(report, eval::to_json(r, {{"manifest", a.manifest}, {"outputs", a.outputs}}));
    std::cout << eval::summary_table(r);
    for (const auto& s : r.per_sample)
        if (!s.ok())
            std::cerr << s.id << ": " << s.error << "\n";
    return r.errors ? kPartial : kOk;
}

// ---- dump-schedule ----------------------------------------------------------------

struct ScheduleArgs {
    std::size_t T = 1000;
    std::size_t steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string out;
};

int run_dump_schedule(const ScheduleArgs& a)
{
    const NoiseSchedule s = build_schedule(a.T, a.beta_start, a.beta_end, a.steps);
    const json j{{"version", 1},     {"T", s.T},           {"steps", s.steps},    {"alpha", s.alpha},
                 {"alpha_bar", s.alpha_bar}, {"sigma", s.sigma}, {"timesteps", s.timesteps}};
    if (a.out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(a.out, j);
    return kOk;
}

template <typename Fn>
int guarded(Fn&& fn)
{
    try {
        return fn();
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Instant attention-mask diffusion editing"};
    app.require_subcommand(1);

    EditArgs ea;
    auto* edit_cmd = app.add_subcommand("edit", "Edit an image with a mask derived from cross-attention");
    edit_cmd->add_option("--image", ea.image, "Input PNG")->required()->check(CLI::ExistingFile);
    edit_cmd->add_option("--tokens", ea.tokens, "Tokens JSON")->required()->check(CLI::ExistingFile);
    edit_cmd->add_option("-r,--strength", ea.cfg.strength, "Noise strength r")->capture_default_str();
    edit_cmd->add_option("--phi", ea.cfg.maskgen.phi, "Mask threshold")->capture_default_str();
    edit_cmd->add_option("--gamma1", ea.cfg.maskgen.gamma1, "Upper similarity threshold")->capture_default_str();
    edit_cmd->add_option("--gamma2", ea.cfg.maskgen.gamma2, "Lower similarity threshold")->capture_default_str();
    edit_cmd->add_option("--steps", ea.cfg.steps, "Inference steps")->capture_default_str();
    edit_cmd->add_option("--scale", ea.cfg.cfg_scale, "Guidance scale")->capture_default_str();
    edit_cmd->add_option("--rounds", ea.cfg.rounds, "Attention rounds per step")->capture_default_str();
    edit_cmd->add_option("--seed", ea.cfg.seed, "Random seed")->capture_default_str();
    edit_cmd->add_option("--backend", ea.backend, "Denoiser backend")
        ->check(CLI::IsMember({"synthetic", "oracle"}))
        ->capture_default_str();
    edit_cmd->add_option("--out-dir", ea.out_dir, "Output directory")->required();
    edit_cmd->add_flag("--dump-attention", ea.dump_attention, "Also write the first step's attention dump");
    edit_cmd->add_flag("--record-timings", ea.record_timings, "Add wall-clock phase timings to session.json");

    MaskArgs ma;
    auto* mask_cmd = app.add_subcommand("mask", "Build a mask from an attention dump");
    mask_cmd->add_option("--attention", ma.attention, "Attention dump (.atns)")->required()->check(CLI::ExistingFile);
    mask_cmd->add_option("--phi", ma.cfg.phi, "Mask threshold")->capture_default_str();
    mask_cmd->add_option("--gamma1", ma.cfg.gamma1, "Upper similarity threshold")->capture_default_str();
    mask_cmd->add_option("--gamma2", ma.cfg.gamma2, "Lower similarity threshold")->capture_default_str();
    mask_cmd->add_option("--size", ma.size, "Upsampled mask side")->capture_default_str();
    mask_cmd->add_option("--out-dir", ma.out_dir, "Output directory")->required();

    EvalArgs va;
    auto* eval_cmd = app.add_subcommand("eval", "Score edited outputs against a manifest");
    eval_cmd->add_option("--manifest", va.manifest, "manifest.json")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--outputs", va.outputs, "Directory holding <id>/output.png")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--report", va.report, "Report path (default <outputs>/report.json)");

    GenArgs ga;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a scripted synthetic corpus");
    gen_cmd->add_option("--count", ga.count, "Number of samples")->capture_default_str();
    gen_cmd->add_option("--seed", ga.seed, "Corpus seed")->capture_default_str();
    gen_cmd->add_option("--out-dir", ga.out_dir, "Output directory")->required();

    ScheduleArgs sa;
    auto* sched_cmd = app.add_subcommand("dump-schedule", "Print the noise schedule as JSON");
    sched_cmd->add_option("--T", sa.T, "Training timesteps")->capture_default_str();
    sched_cmd->add_option("--steps", sa.steps, "Inference steps")->capture_default_str();
    sched_cmd->add_option("--beta-start", sa.beta_start)->capture_default_str();
    sched_cmd->add_option("--beta-end", sa.beta_end)->capture_default_str();
    sched_cmd->add_option("--out", sa.out, "Write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (*edit_cmd)
        return guarded([&] { return run_edit(ea); });
    if (*mask_cmd)
        return guarded([&] { return run_mask(ma); });
    if (*eval_cmd)
        return guarded([&] { return run_eval(va); });
    if (*gen_cmd)
        return guarded([&] { return run_gen_synthetic(ga); });
    return guarded([&] { return run_dump_schedule(sa); });
}
