#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "instmask/instmask.hpp"

using namespace instmask;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args)
{
    const std::string cmd = std::string(INSTMASK_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json load(const fs::path& p) { return json::parse(io::read_file(p)); }

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir = fs::temp_directory_path() / ("instmask_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& rel) const { return (dir / rel).string(); }

    fs::path dir;
};

}  // namespace

TEST_F(Cli, GenSyntheticWritesBinaryMasksAndAllCategories)
{
    ASSERT_EQ(run("gen-synthetic --count 10 --seed 3 --out-dir " + p("c")), 0);
    const eval::Manifest m = eval::read_manifest(p("c/manifest.json"));
    ASSERT_EQ(m.samples.size(), 10u);
    std::set<std::string> cats;
    for (const auto& s : m.samples) {
        cats.insert(s.category);
        const Image mask = io::read_png(m.resolve(s.mask));
        EXPECT_NO_THROW(image_to_mask(mask));
        EXPECT_EQ(mask.width, io::read_png(m.resolve(s.image)).width);
        EXPECT_TRUE(fs::exists(m.resolve(s.scene)));
    }
    EXPECT_EQ(cats.size(), 3u);
}

TEST_F(Cli, GenSyntheticIsByteIdenticalForFixedSeed)
{
    ASSERT_EQ(run("gen-synthetic --count 4 --seed 9 --out-dir " + p("a")), 0);
    ASSERT_EQ(run("gen-synthetic --count 4 --seed 9 --out-dir " + p("b")), 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file())
            continue;
        ++files;
        const fs::path other = dir / "b" / fs::relative(e.path(), dir / "a");
        EXPECT_EQ(io::read_file(e.path()), io::read_file(other)) << e.path();
    }
    EXPECT_EQ(files, 4u * 3u + 1u);
}

TEST_F(Cli, EditWritesOutputsAndRecordsStrength)
{
    ASSERT_EQ(run("gen-synthetic --count 1 --out-dir " + p("c")), 0);
    ASSERT_EQ(run("edit --image " + p("c/sample-000/image.png") + " --tokens " + p("c/sample-000/tokens.json") +
                  " --out-dir " + p("o") + " --dump-attention"),
              0);
    EXPECT_EQ(io::read_png(p("o/output.png")).channels, 3u);
    EXPECT_NO_THROW(image_to_mask(io::read_png(p("o/final_mask.png"))));
    const json s = load(p("o/session.json"));
    EXPECT_EQ(s.at("version"), 1);
    EXPECT_EQ(s.at("config").at("strength").get<double>(), 0.5);
    EXPECT_EQ(s.at("tau"), 500);
    EXPECT_EQ(s.at("steps").size(), 26u);
    EXPECT_EQ(s.at("position_computations"), 1);
    EXPECT_FALSE(s.contains("timings_ms"));
    EXPECT_EQ(s.at("mask").at("P").size(), s.at("tokens").size());

    // The dumped first-step attention reproduces the session's position vector.
    ASSERT_EQ(run("mask --attention " + p("o/attention.atns") + " --out-dir " + p("m")), 0);
    const json mk = load(p("m/mask.json"));
    EXPECT_EQ(mk.at("P"), s.at("mask").at("P"));
    EXPECT_EQ(mk.at("index_token"), s.at("mask").at("index_token"));
    EXPECT_EQ(io::read_png(p("m/mask.png")).width, 16u);
    EXPECT_EQ(io::read_png(p("m/mask_upsampled.png")).width, 64u);

    ASSERT_EQ(run("edit --image " + p("c/sample-000/image.png") + " --tokens " + p("c/sample-000/tokens.json") +
                  " --out-dir " + p("t") + " --record-timings"),
              0);
    EXPECT_TRUE(load(p("t/session.json")).contains("timings_ms"));
}

TEST_F(Cli, OracleBackendAcceptsPlainText)
{
    ASSERT_EQ(run("gen-synthetic --count 1 --out-dir " + p("c")), 0);
    io::write_atomic(p("tok.json"), R"({"text": "a photo of a cat"})");
    EXPECT_EQ(run("edit --backend oracle --image " + p("c/sample-000/image.png") + " --tokens " + p("tok.json") +
                  " --out-dir " + p("o")),
              0);
    EXPECT_TRUE(fs::exists(p("o/session.json")));
    // Without a scene the synthetic backend cannot run.
    EXPECT_EQ(run("edit --image " + p("c/sample-000/image.png") + " --tokens " + p("tok.json") + " --out-dir " + p("s")),
              1);
    EXPECT_FALSE(fs::exists(p("s")));
}

TEST_F(Cli, InvalidFlagsFailWithoutPartialOutputs)
{
    ASSERT_EQ(run("gen-synthetic --count 1 --out-dir " + p("c")), 0);
    const std::string base =
        "edit --image " + p("c/sample-000/image.png") + " --tokens " + p("c/sample-000/tokens.json");
    EXPECT_EQ(run(base + " --phi 1.5 --out-dir " + p("o1")), 1);
    EXPECT_FALSE(fs::exists(p("o1")));
    EXPECT_EQ(run(base + " --strength 0 --out-dir " + p("o2")), 1);
    EXPECT_FALSE(fs::exists(p("o2")));
    EXPECT_EQ(run(base + " --backend magic --out-dir " + p("o3")), 1);
    EXPECT_EQ(run(base + " --no-such-flag --out-dir " + p("o4")), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run(""), 1);
}

TEST_F(Cli, IoFailureExitsThree)
{
    ASSERT_EQ(run("gen-synthetic --count 1 --out-dir " + p("c")), 0);
    io::write_atomic(p("blocker"), "x");
    EXPECT_EQ(run("edit --image " + p("c/sample-000/image.png") + " --tokens " + p("c/sample-000/tokens.json") +
                  " --out-dir " + p("blocker/out")),
              3);
    io::write_atomic(p("bad.png"), "not a png");
    EXPECT_EQ(run("edit --image " + p("bad.png") + " --tokens " + p("c/sample-000/tokens.json") + " --out-dir " +
                  p("o")),
              3);
}

TEST_F(Cli, EvalPerfectRunPartialRunAndEmptyManifest)
{
    ASSERT_EQ(run("gen-synthetic --count 3 --out-dir " + p("c")), 0);
    const eval::Manifest m = eval::read_manifest(p("c/manifest.json"));
    // Edits confined to the ground-truth region, masks equal to it.
    for (const auto& s : m.samples) {
        Image img = io::read_png(m.resolve(s.image));
        const Image gt = io::read_png(m.resolve(s.mask));
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                if (gt(y, x, 0))
                    for (std::size_t c = 0; c < 3; ++c)
                        img(y, x, c) = static_cast<std::uint8_t>(255 - img(y, x, c));
        fs::create_directories(dir / "out" / s.id);
        io::write_png(dir / "out" / s.id / "output.png", img);
        io::write_png(dir / "out" / s.id / "final_mask.png", gt);
    }
    ASSERT_EQ(run("eval --manifest " + p("c/manifest.json") + " --outputs " + p("out")), 0);
    const json r = load(p("out/report.json"));
    EXPECT_EQ(r.at("version"), 1);
    EXPECT_EQ(r.at("aggregates").at("mean_c_non").get<double>(), 0.0);
    EXPECT_EQ(r.at("aggregates").at("mean_iou").get<double>(), 1.0);
    EXPECT_EQ(r.at("errors"), 0);

    fs::remove_all(dir / "out" / m.samples[1].id);
    EXPECT_EQ(run("eval --manifest " + p("c/manifest.json") + " --outputs " + p("out") + " --report " + p("r2.json")),
              2);
    const json r2 = load(p("r2.json"));
    EXPECT_EQ(r2.at("errors"), 1);
    EXPECT_EQ(r2.at("aggregates").at("count"), 2);

    io::write_atomic(p("empty.json"), R"({"version": 1, "samples": []})");
    EXPECT_EQ(run("eval --manifest " + p("empty.json") + " --outputs " + p("out")), 1);
}

TEST_F(Cli, DumpSchedule)
{
    ASSERT_EQ(run("dump-schedule --out " + p("s.json")), 0);
    const json s = load(p("s.json"));
    EXPECT_EQ(s.at("T"), 1000);
    EXPECT_EQ(s.at("alpha").size(), 1000u);
    EXPECT_EQ(s.at("alpha_bar")[0].get<double>(), 0.9999);
    EXPECT_EQ(s.at("sigma").size(), 1000u);
    EXPECT_EQ(s.at("timesteps").size(), 50u);
    EXPECT_EQ(s.at("timesteps")[49], 980);
    EXPECT_EQ(run("dump-schedule --steps 0"), 1);
}
