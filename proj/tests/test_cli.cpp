#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "support.hpp"

using namespace posekit;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "posekit");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
protected:
    fixtures::TempDir dir{"cli"};

    void SetUp() override {
        save_mesh(dir / "cube.ply", fixtures::box(40, 40, 40));
        write_camera(dir / "cam.json", fixtures::default_camera());
        write_text(dir / "pose.json", R"({"cam_R_m2c": [1,0,0,0,1,0,0,0,1], "cam_t_m2c": [0,0,500]})");
        fs::create_directories(dir / "models");
        save_mesh(dir / "models" / "obj_000001.ply", fixtures::box(40, 30, 20));
        save_mesh(dir / "models" / "obj_000002.ply", fixtures::ellipsoid(25, 15, 12, 8, 16));
    }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    // Writes a results CSV from every GT pose of the dataset, shifted sideways by `dx` mm.
    std::string perfect_results(const fs::path& data, double dx, int obj_override = 0) {
        std::vector<Estimate> ests;
        for (const auto& e : fs::directory_iterator(data)) {
            const std::string name = e.path().filename().string();
            if (name.rfind("scene_", 0) != 0) continue;
            const int scene = std::stoi(name.substr(6));
            for (const auto& [im, entries] : read_scene_gt(e.path() / "scene_gt.json"))
                for (const auto& g : entries) {
                    Pose pose = g.pose;
                    pose.translation.x += dx;
                    ests.push_back({scene, im, obj_override ? obj_override : g.obj_id, 1.0, pose, 0.5, 0});
                }
        }
        const fs::path csv = dir / ("res_" + std::to_string(ests.size()) + "_" + std::to_string(dx) + ".csv");
        write_results_csv(csv, ests);
        return csv.string();
    }
};

}  // namespace

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(run_cli({"keypoints", p("cube.ply")}).code, 2);  // --out missing
    EXPECT_EQ(run_cli({"keypoints", p("cube.ply"), "--out", p("k.json"), "--k", "2"}).code, 2);
    EXPECT_EQ(run_cli({"heatmap", p("k.json"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--size",
                       "64by64", "--out", p("h.png")})
                  .code,
              2);
    std::ostringstream out, err;
    EXPECT_EQ(cli::run({}, out, err), 2);
    EXPECT_EQ(run_cli({"--version"}).code, 0);
}

TEST_F(CliTest, KeypointsWritesJsonAndManifest) {
    const auto r = run_cli({"keypoints", p("cube.ply"), "--samples", "3000", "--out", p("kp/cube.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto kps = load_keypoints(dir / "kp" / "cube.json");
    EXPECT_GT(kps.size(), 0u);
    EXPECT_LE(kps.size(), 64u);
    const auto manifest = nlohmann::json::parse(read_text(dir / "kp" / "cube.json.manifest.json"));
    EXPECT_EQ(manifest["command"], "keypoints");
    EXPECT_EQ(manifest["input_sha256"][p("cube.ply")], cli::sha256_file(dir / "cube.ply"));
    EXPECT_EQ(manifest["input_sha256"][p("cube.ply")].get<std::string>().size(), 64u);

    // same seed, same bytes
    ASSERT_EQ(run_cli({"keypoints", p("cube.ply"), "--samples", "3000", "--out", p("kp/again.json")}).code, 0);
    EXPECT_EQ(read_text(dir / "kp" / "cube.json"), read_text(dir / "kp" / "again.json"));
}

TEST_F(CliTest, KeypointsThresholdAboveMaxGivesEmptySet) {
    const auto r = run_cli({"keypoints", p("cube.ply"), "--samples", "2000", "--tau-rel", "1.01", "--out", p("e.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(load_keypoints(dir / "e.json").empty());
}

TEST_F(CliTest, KeypointsWithViewWritesVisibleSubset) {
    const auto r = run_cli({"keypoints", p("cube.ply"), "--samples", "3000", "--camera", p("cam.json"), "--pose",
                            p("pose.json"), "--out", p("v.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "v_visible.json"));
    EXPECT_EQ(run_cli({"keypoints", p("cube.ply"), "--camera", p("cam.json"), "--out", p("w.json")}).code, 2);
}

TEST_F(CliTest, MissingAndMalformedInputs) {
    EXPECT_EQ(run_cli({"keypoints", p("nope.ply"), "--out", p("x.json")}).code, 3);
    write_text(dir / "bad.ply", "ply\nformat ascii 1.0\nelement vertex 3\n");
    EXPECT_EQ(run_cli({"keypoints", p("bad.ply"), "--out", p("x.json")}).code, 3);
    write_text(dir / "bad.json", "{ not json");
    EXPECT_EQ(run_cli({"depth", p("cube.ply"), "--camera", p("bad.json"), "--pose", p("pose.json"), "--out",
                       p("d.png")})
                  .code,
              3);
}

TEST_F(CliTest, JsonErrors) {
    const auto r = run_cli({"--json-errors", "keypoints", p("nope.ply"), "--out", p("x.json")});
    EXPECT_EQ(r.code, 3);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j["error"]["exit_code"], 3);
    EXPECT_EQ(j["error"]["kind"], "parse");
    EXPECT_NE(j["error"]["message"].get<std::string>().find("nope.ply"), std::string::npos);
    const auto u = run_cli({"--json-errors", "bogus"});
    EXPECT_EQ(u.code, 2);
    EXPECT_EQ(nlohmann::json::parse(u.err)["error"]["kind"], "usage");
}

TEST_F(CliTest, HeatmapPeaksAtProjectedKeypoint) {
    write_text(dir / "one.json", R"({"points": [[0,0,0]], "weights": [1.0]})");
    const auto r = run_cli({"heatmap", p("one.json"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--size",
                            "64x48", "--sigma", "2", "--out", p("h.png")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto img = read_png16(dir / "h.png");
    ASSERT_EQ(img.width, 64);
    ASSERT_EQ(img.height, 48);
    const auto it = std::max_element(img.values.begin(), img.values.end());
    const auto idx = static_cast<int>(it - img.values.begin());
    // principal point (320, 240) scales to (32, 24)
    EXPECT_NEAR(idx % 64, 32, 1);
    EXPECT_NEAR(idx / 64, 24, 1);
    // the projection lands on a pixel corner, half a pixel from each neighbor center
    EXPECT_NEAR(*it, 65535 * std::exp(-0.5 / 8.0), 1.0);

    write_text(dir / "none.json", R"({"points": [], "weights": []})");
    ASSERT_EQ(run_cli({"heatmap", p("none.json"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--out",
                       p("z.png")})
                  .code,
              0);
    const auto zero = read_png16(dir / "z.png");
    EXPECT_EQ(std::count(zero.values.begin(), zero.values.end(), 0), static_cast<long>(zero.values.size()));

    write_text(dir / "badw.json", R"({"points": [[0,0,0]], "weights": [1.5]})");
    EXPECT_EQ(run_cli({"heatmap", p("badw.json"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--out",
                       p("b.png")})
                  .code,
              3);
}

TEST_F(CliTest, DepthMatchesLibraryRender) {
    ASSERT_EQ(run_cli({"depth", p("cube.ply"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--out",
                       p("d.raw")})
                  .code,
              0);
    const auto d = read_depth_raw(dir / "d.raw");
    const auto ref = rasterize_depth(fixtures::box(40, 40, 40), {Mat3::identity(), {0, 0, 500}},
                                     fixtures::default_camera());
    EXPECT_EQ(d.values, ref.values);
    EXPECT_EQ(run_cli({"depth", p("cube.ply"), "--camera", p("cam.json"), "--pose", p("pose.json"), "--out",
                       p("d.tiff")})
                  .code,
              2);
}

TEST_F(CliTest, GenCountsAndDeterminism) {
    const auto r = run_cli({"gen", "--models", p("models"), "--scenes", "2", "--cams", "3", "--seed", "4", "--out",
                            p("ds")});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* s : {"scene_000000", "scene_000001"}) {
        std::size_t depth = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "ds" / s / "depth")) ++depth;
        EXPECT_EQ(depth, 3u);
    }
    EXPECT_TRUE(fs::exists(dir / "ds" / "manifest.json"));
    ASSERT_EQ(run_cli({"gen", "--models", p("models"), "--scenes", "2", "--cams", "3", "--seed", "4", "--out",
                       p("ds2")})
                  .code,
              0);
    for (const char* f : {"scene_000001/scene_gt.json", "scene_000001/scene_camera.json", "scene_000000/depth/000002.png"})
        EXPECT_EQ(read_text(dir / "ds" / f), read_text(dir / "ds2" / f)) << f;
}

TEST_F(CliTest, GenSimoWithSingleModel) {
    fs::create_directories(dir / "single");
    save_mesh(dir / "single" / "obj_000007.ply", fixtures::box(20, 20, 20));
    const auto r = run_cli({"gen", "--mode", "simo", "--models", p("single"), "--scenes", "3", "--out", p("s")});
    ASSERT_EQ(r.code, 0) << r.err;
    for (int s = 0; s < 3; ++s) {
        const auto gt = read_scene_gt(dir / "s" / ("scene_00000" + std::to_string(s)) / "scene_gt.json");
        EXPECT_EQ(gt.at(0).size(), 1u);
        EXPECT_EQ(gt.at(0)[0].obj_id, 7);
    }
}

TEST_F(CliTest, GenRejectsBadOutputAndModels) {
    fs::create_directories(dir / "foreign");
    write_text(dir / "foreign" / "keep.txt", "x");
    EXPECT_EQ(run_cli({"gen", "--models", p("models"), "--out", p("foreign")}).code, 4);
    EXPECT_EQ(run_cli({"gen", "--models", p("missing"), "--out", p("o")}).code, 3);
    EXPECT_EQ(run_cli({"gen", "--models", p("models"), "--distance-min", "500", "--out", p("o")}).code, 2);
}

TEST_F(CliTest, EvalPerfectShiftedAndUnknownObject) {
    ASSERT_EQ(run_cli({"gen", "--models", p("models"), "--scenes", "2", "--cams", "2", "--out", p("ds")}).code, 0);
    const auto r = run_cli({"eval", "--dataset", p("ds"), "--results", perfect_results(dir / "ds", 0), "--out",
                            p("ev")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto summary = nlohmann::json::parse(read_text(dir / "ev" / "summary.json"));
    EXPECT_EQ(summary["overall"]["AR"], 1.0);
    EXPECT_NE(r.out.find("overall,1.000000"), std::string::npos);

    ASSERT_EQ(run_cli({"eval", "--dataset", p("ds"), "--results", perfect_results(dir / "ds", 1000), "--out",
                       p("ev2")})
                  .code,
              0);
    summary = nlohmann::json::parse(read_text(dir / "ev2" / "summary.json"));
    EXPECT_EQ(summary["overall"]["AR"], 0.0);

    const auto u = run_cli({"eval", "--dataset", p("ds"), "--results", perfect_results(dir / "ds", 0, 99), "--out",
                            p("ev3")});
    EXPECT_EQ(u.code, 4);
    EXPECT_NE(u.err.find("99"), std::string::npos);
}

TEST_F(CliTest, ConfigFileSuppliesDefaults) {
    write_text(dir / "cfg.json", R"({"keypoints": {"samples": 2000, "tau-rel": 1.01}})");
    const auto r = run_cli({"--config", p("cfg.json"), "keypoints", p("cube.ply"), "--out", p("c.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(load_keypoints(dir / "c.json").empty());
    const auto m = nlohmann::json::parse(read_text(dir / "c.json.manifest.json"));
    EXPECT_EQ(m["config"]["samples"], 2000);
    // the command line wins over the file
    ASSERT_EQ(run_cli({"--config", p("cfg.json"), "keypoints", p("cube.ply"), "--tau-rel", "0.6", "--out",
                       p("c2.json")})
                  .code,
              0);
    EXPECT_FALSE(load_keypoints(dir / "c2.json").empty());
}
