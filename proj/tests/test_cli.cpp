// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/cli.hpp"
#include "uars/io.hpp"

#include "support/test_support.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace uars {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_golden(const std::string& name, const std::string& actual) {
    const fs::path path = fs::path(UARS_GOLDEN_DIR) / name;
    if (std::getenv("UARS_UPDATE_GOLDEN")) std::ofstream(path, std::ios::binary) << actual;
    EXPECT_EQ(actual, slurp(path)) << "golden " << path;
}

std::vector<std::string> synth_args(const fs::path& dir, const std::string& format = "tensor") {
    return {"synth",   "--outdir",   dir.string(), "--gaussians", "60",  "--width", "48",
            "--height", "32",        "--seed",     "5",           "--image-format", format};
}

TEST(Cli, HelpGoldens) {
    const Outcome top = run_cli({"--help"});
    EXPECT_EQ(top.code, 0);
    check_golden("help.txt", top.out);
    for (const std::string sub : {"refine", "render", "entropy", "fst", "metrics", "synth"}) {
        const Outcome o = run_cli({sub, "--help"});
        EXPECT_EQ(o.code, 0) << sub;
        check_golden("help_" + sub + ".txt", o.out);
    }
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"bogus"}).code, 2);
    const Outcome missing = run_cli({"render", "--scene", "a.ply"});
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("error:"), std::string::npos);
    EXPECT_EQ(run_cli({"fst", "--content", "a", "--style", "b", "--out", "c", "--beta", "x"}).code, 2);
}

TEST(Cli, MetricsOnIdenticalFiles) {
    const fs::path dir = test::temp_dir("cli_metrics");
    save_png(test::random_image(1, 20, 12), dir / "a.png");
    const Outcome o = run_cli({"metrics", "--a", (dir / "a.png").string(), "--b", (dir / "a.png").string()});
    ASSERT_EQ(o.code, 0) << o.err;
    const json j = json::parse(o.out);
    EXPECT_EQ(j["psnr"].get<double>(), 100.0);
    EXPECT_EQ(j["ssim"].get<double>(), 1.0);
}

TEST(Cli, FstWithItselfIsIdentityWithinOneLevel) {
    const fs::path dir = test::temp_dir("cli_fst");
    save_png(test::random_image(2, 40, 30), dir / "c.png");
    const Outcome o = run_cli({"fst", "--content", (dir / "c.png").string(), "--style", (dir / "c.png").string(),
                               "--out", (dir / "o.png").string()});
    ASSERT_EQ(o.code, 0) << o.err;
    const ImageBuffer a = load_png(dir / "c.png"), b = load_png(dir / "o.png");
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(std::abs(a.data()[i] - b.data()[i]), 1.0 / 255.0 + 1e-12);
}

TEST(Cli, EntropyOfUniformLogitsIsWhite) {
    const fs::path dir = test::temp_dir("cli_entropy");
    save_tensor(DenseMap(9, 7, 4, 0.3), dir / "l.uars");
    ASSERT_EQ(run_cli({"entropy", "--logits", (dir / "l.uars").string(), "--out", (dir / "u.png").string()}).code, 0);
    const ImageBuffer white = load_png(dir / "u.png");
    for (double v : white.data()) EXPECT_EQ(v, 1.0);
    ASSERT_EQ(run_cli({"entropy", "--logits", (dir / "l.uars").string(), "--out", (dir / "u.uars").string()}).code, 0);
    const DenseMap u = load_tensor(dir / "u.uars");
    EXPECT_EQ(u.channels(), 1);
    for (double v : u.data()) EXPECT_NEAR(v, 1.0, 1e-6);
}

TEST(Cli, RenderMatchesLibrary) {
    const fs::path dir = test::temp_dir("cli_render");
    ASSERT_EQ(run_cli(synth_args(dir)).code, 0);
    const Outcome o = run_cli({"render", "--scene", (dir / "scene_gt.ply").string(), "--camera",
                               (dir / "cameras/view_00.json").string(), "--out", (dir / "r.uars").string()});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_EQ(read_file(dir / "r.uars"), read_file(dir / "views/view_00.uars"));
}

TEST(Cli, MissingLogitsNamesPath) {
    const fs::path dir = test::temp_dir("cli_missing");
    ASSERT_EQ(run_cli(synth_args(dir)).code, 0);
    json m = json::parse(slurp(dir / "manifest.json"));
    m["views"][0]["logits"] = "logits/absent.uars";
    std::ofstream(dir / "manifest.json") << m.dump(2);
    const Outcome o = run_cli({"refine", "--scene", (dir / "scene_init.ply").string(), "--manifest",
                               (dir / "manifest.json").string(), "--out", (dir / "o.ply").string(), "--report",
                               (dir / "r.jsonl").string(), "--steps", "2", "--no-adp"});
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.err.find("absent.uars"), std::string::npos) << o.err;
    EXPECT_NE(o.err.find("manifest.missing_file"), std::string::npos) << o.err;
}

std::vector<json> read_report(const fs::path& p) {
    std::vector<json> out;
    std::istringstream in(slurp(p));
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
    return out;
}

TEST(Cli, FixedPointHasZeroInitialLoss) {
    const fs::path dir = test::temp_dir("cli_fixed");
    ASSERT_EQ(run_cli(synth_args(dir)).code, 0);
    const Outcome o = run_cli({"refine", "--scene", (dir / "scene_gt.ply").string(), "--manifest",
                               (dir / "manifest.json").string(), "--out", (dir / "o.ply").string(), "--report",
                               (dir / "r.jsonl").string(), "--steps", "5", "--no-fst", "--no-adp"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto report = read_report(dir / "r.jsonl");
    ASSERT_EQ(report.size(), 6u);
    EXPECT_EQ(report[0]["type"], "step");
    EXPECT_EQ(report[0]["step"], 0);
    EXPECT_LE(report[0]["loss"].get<double>(), 1e-6);
    EXPECT_FALSE(report[0].contains("seconds"));
    EXPECT_EQ(report.back()["type"], "summary");
    EXPECT_EQ(report.back()["steps"], 5);
}

TEST(Cli, RefineIsByteDeterministic) {
    const fs::path dir = test::temp_dir("cli_determinism");
    auto args = synth_args(dir, "png");
    args.push_back("--corrupt");
    ASSERT_EQ(run_cli(args).code, 0);
    std::ofstream(dir / "cfg.toml") << "steps = 12\nbatch-size = 2\nseed = 9\n"
                                     << "densify-start = 4\ndensify-end = 10\ndensify-interval = 3\n";
    for (const char* tag : {"a", "b"}) {
        const Outcome o = run_cli({"refine", "--config", (dir / "cfg.toml").string(), "--scene",
                                   (dir / "scene_init.ply").string(), "--manifest", (dir / "manifest.json").string(),
                                   "--out", (dir / (std::string(tag) + ".ply")).string(), "--report",
                                   (dir / (std::string(tag) + ".jsonl")).string()});
        ASSERT_EQ(o.code, 0) << o.err;
    }
    EXPECT_EQ(read_file(dir / "a.ply"), read_file(dir / "b.ply"));
    EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
    EXPECT_EQ(read_report(dir / "a.jsonl").back()["steps"], 12);
}

TEST(Cli, ConfigValuesAreOverriddenByFlags) {
    const fs::path dir = test::temp_dir("cli_config");
    ASSERT_EQ(run_cli(synth_args(dir)).code, 0);
    std::ofstream(dir / "cfg.toml") << "steps = 7\nno-adp = true\n";
    const Outcome o = run_cli({"refine", "--config", (dir / "cfg.toml").string(), "--steps", "3", "--scene",
                               (dir / "scene_init.ply").string(), "--manifest", (dir / "manifest.json").string(),
                               "--out", (dir / "o.ply").string(), "--report", (dir / "r.jsonl").string()});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_EQ(read_report(dir / "r.jsonl").back()["steps"], 3);

    std::ofstream(dir / "typo.toml") << "stepz = 7\n";
    const Outcome typo = run_cli({"refine", "--config", (dir / "typo.toml").string(), "--scene",
                                  (dir / "scene_init.ply").string(), "--manifest", (dir / "manifest.json").string(),
                                  "--out", (dir / "o.ply").string(), "--report", (dir / "r.jsonl").string()});
    EXPECT_EQ(typo.code, 2);
    EXPECT_NE(typo.err.find("stepz"), std::string::npos) << typo.err;
    EXPECT_EQ(run_cli({"refine", "--config", (dir / "absent.toml").string(), "--scene", "a", "--manifest", "b",
                       "--out", "c", "--report", "d"})
                  .code,
              2);
}

TEST(Cli, ValidationFailuresExitTwo) {
    const fs::path dir = test::temp_dir("cli_validation");
    ASSERT_EQ(run_cli(synth_args(dir)).code, 0);
    const Outcome o = run_cli({"refine", "--scene", (dir / "scene_init.ply").string(), "--manifest",
                               (dir / "manifest.json").string(), "--out", (dir / "o.ply").string(), "--report",
                               (dir / "r.jsonl").string(), "--batch-size", "0"});
    EXPECT_EQ(o.code, 2);
    EXPECT_FALSE(fs::exists(dir / "o.ply"));
    std::ofstream(dir / "bad.ply") << "ply\nformat ascii 1.0\nend_header\n";
    const Outcome p = run_cli({"render", "--scene", (dir / "bad.ply").string(), "--camera",
                               (dir / "cameras/view_00.json").string(), "--out", (dir / "x.png").string()});
    EXPECT_EQ(p.code, 2);
    EXPECT_NE(p.err.find("ply.not_binary"), std::string::npos) << p.err;
}

TEST(Cli, SynthWritesLayout) {
    const fs::path dir = test::temp_dir("cli_synth");
    auto args = synth_args(dir, "png");
    args.push_back("--corrupt");
    ASSERT_EQ(run_cli(args).code, 0);
    const ViewManifest m = load_manifest(dir / "manifest.json");
    EXPECT_EQ(m.views.size(), 8u);
    EXPECT_EQ(m.eval_views.size(), 4u);
    for (const ManifestView& v : m.views) EXPECT_TRUE(v.logits.has_value());
    const LoadedViews lv = load_views(m);
    EXPECT_EQ(lv.input_image.width(), 48);
    EXPECT_EQ(load_ply(dir / "scene_gt.ply").size(), 60u);
}

} // namespace
} // namespace uars
