#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace posekit;

namespace {

TriMesh quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    TriMesh m;
    m.vertices = {a, b, c, d};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

}  // namespace

TEST(Project, SpecExamples) {
    const CameraIntrinsics k{500, 500, 320, 240, 640, 480};
    const std::vector<Vec3> pts{{0, 0, 1000}, {100, 0, 1000}, {0, 0, -5}};
    const auto p = project(k, Pose{}, pts);
    EXPECT_TRUE(p[0].valid);
    EXPECT_EQ(p[0].u, 320);
    EXPECT_EQ(p[0].v, 240);
    EXPECT_EQ(p[0].z, 1000);
    EXPECT_EQ(p[1].u, 370);
    EXPECT_EQ(p[1].v, 240);
    EXPECT_FALSE(p[2].valid);
    EXPECT_FALSE(project_camera_point(k, {1, 1, 1e-9}).valid);
}

TEST(Project, EquivariantUnderRigidTransforms) {
    Rng rng(1);
    const auto k = fixtures::default_camera();
    for (int trial = 0; trial < 50; ++trial) {
        const Pose pose = fixtures::random_pose_in_view(rng);
        const Pose g{rng.rotation(), {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)}};
        std::vector<Vec3> pts, moved;
        for (int i = 0; i < 20; ++i) {
            pts.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)});
            moved.push_back(g.apply(pts.back()));
        }
        const auto a = project(k, pose * g, pts), b = project(k, pose, moved);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            EXPECT_NEAR(a[i].u, b[i].u, 1e-9 * std::abs(b[i].u));
            EXPECT_NEAR(a[i].v, b[i].v, 1e-9 * std::abs(b[i].v));
            EXPECT_NEAR(a[i].z, b[i].z, 1e-9 * std::abs(b[i].z));
        }
    }
}

TEST(Rasterize, ConstantDepthTriangle) {
    const CameraIntrinsics k{100, 100, 32, 24, 64, 48};
    TriMesh m;
    m.vertices = {{-1000, -1000, 100}, {3000, -1000, 100}, {-1000, 3000, 100}};
    m.triangles = {{0, 1, 2}};
    const auto d = rasterize_depth(m, Pose{}, k);
    EXPECT_EQ(d.covered_pixels(), 64u * 48u);
    for (float v : d.values) EXPECT_EQ(v, 100.0f);
}

TEST(Rasterize, NearerSurfaceWinsInOverlap) {
    const CameraIntrinsics k{100, 100, 32, 32, 64, 64};
    const TriMesh far = quad({-100, -100, 100}, {100, -100, 100}, {100, 100, 100}, {-100, 100, 100});
    const TriMesh near = quad({0, -50, 50}, {50, -50, 50}, {50, 50, 50}, {0, 50, 50});
    for (int order = 0; order < 2; ++order) {
        ZBuffer zb(k);
        zb.draw(order ? near : far, Pose{}, order ? 1 : 0);
        zb.draw(order ? far : near, Pose{}, order ? 0 : 1);
        const auto& d = zb.depth();
        // near quad covers u in [32, 132) and v in [-68, 132)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) EXPECT_EQ(d.at(x, y), x >= 32 ? 50.0f : 100.0f) << x << "," << y;
    }
}

TEST(Rasterize, UnitSquareFootprint) {
    // corners project to u, v = 2 * coordinate + 16
    const CameraIntrinsics k{1000, 1000, 16, 16, 32, 32};
    const TriMesh sq = quad({-0.5, -0.5, 500}, {0.5, -0.5, 500}, {0.5, 0.5, 500}, {-0.5, 0.5, 500});
    const auto d = rasterize_depth(sq, Pose{}, k);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool inside = x + 0.5 > 15 && x + 0.5 < 17 && y + 0.5 > 15 && y + 0.5 < 17;
            EXPECT_EQ(d.at(x, y) > 0, inside) << x << "," << y;
        }
    EXPECT_EQ(d.covered_pixels(), 4u);
}

TEST(Rasterize, RandomRectangleFootprints) {
    Rng rng(2);
    const CameraIntrinsics k{1000, 1000, 16, 16, 32, 32};
    for (int trial = 0; trial < 200; ++trial) {
        const double z = 500;
        const double x0 = rng.uniform(-9, 7), x1 = x0 + rng.uniform(0.1, 8);
        const double y0 = rng.uniform(-9, 7), y1 = y0 + rng.uniform(0.1, 8);
        const TriMesh r = quad({x0, y0, z}, {x1, y0, z}, {x1, y1, z}, {x0, y1, z});
        const auto d = rasterize_depth(r, Pose{}, k);
        const double u0 = 2 * x0 + 16, u1 = 2 * x1 + 16, v0 = 2 * y0 + 16, v1 = 2 * y1 + 16;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const bool inside = x + 0.5 > u0 && x + 0.5 < u1 && y + 0.5 > v0 && y + 0.5 < v1;
                ASSERT_EQ(d.at(x, y) > 0, inside) << trial << ": " << x << "," << y;
            }
    }
}

TEST(Rasterize, SharedEdgesAreCoveredExactlyOnce) {
    // top-left rule: a fan of triangles through pixel centers never
    // double-covers or drops a pixel
    const CameraIntrinsics k{1, 1, 0, 0, 16, 16};
    TriMesh fan;
    fan.vertices = {{8, 8, 1}, {0, 0, 1}, {16, 0, 1}, {16, 16, 1}, {0, 16, 1}};
    fan.triangles = {{0, 1, 2}, {0, 2, 3}, {0, 3, 4}, {0, 4, 1}};
    ZBuffer zb(k);
    for (std::size_t t = 0; t < fan.triangles.size(); ++t) {
        TriMesh one;
        one.vertices = fan.vertices;
        one.triangles = {fan.triangles[t]};
        zb.draw(one, Pose{}, static_cast<int>(t));
    }
    EXPECT_EQ(zb.depth().covered_pixels(), 256u);
    std::size_t total = 0;
    for (std::size_t t = 0; t < fan.triangles.size(); ++t) {
        TriMesh one;
        one.vertices = fan.vertices;
        one.triangles = {fan.triangles[t]};
        total += rasterize_depth(one, Pose{}, k).covered_pixels();
    }
    EXPECT_EQ(total, 256u);
}

TEST(Rasterize, PerspectiveCorrectDepthMatchesRaycast) {
    Rng rng(3);
    const CameraIntrinsics k{300, 300, 40, 30, 80, 60};
    for (int trial = 0; trial < 20; ++trial) {
        const TriMesh m = fixtures::convex_fixture(rng, trial);
        const Pose pose = fixtures::random_pose_in_view(rng, 300, 500);
        const auto d = rasterize_depth(m, pose, k);
        for (int y = 0; y < k.height; ++y)
            for (int x = 0; x < k.width; ++x) {
                const double ref = oracle::raycast_depth(m, pose, k, x, y);
                if ((ref > 0) != (d.at(x, y) > 0)) continue;  // silhouette ties
                EXPECT_NEAR(d.at(x, y), ref, 1e-4 * ref) << trial << ": " << x << "," << y;
            }
    }
}

TEST(Rasterize, NearPlaneClipping) {
    const CameraIntrinsics k{100, 100, 32, 32, 64, 64};
    // a floor crossing behind the camera; only the part with z >= 0.1 draws
    const TriMesh floor = quad({-500, 10, -100}, {500, 10, -100}, {500, 10, 1000}, {-500, 10, 1000});
    const auto d = rasterize_depth(floor, Pose{}, k);
    ASSERT_GT(d.covered_pixels(), 0u);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const float v = d.at(x, y);
            if (v == 0) continue;
            EXPECT_GE(v, kNearPlane);
            EXPECT_GT(y + 0.5, 32);  // floor lies below the horizon
            EXPECT_NEAR(v, 10 * 100 / (y + 0.5 - 32), 1e-3 * v);
        }
    const TriMesh behind = quad({-5, -5, -10}, {5, -5, -10}, {5, 5, -10}, {-5, 5, -10});
    EXPECT_EQ(rasterize_depth(behind, Pose{}, k).covered_pixels(), 0u);
}

TEST(Rasterize, ResolutionConsistencyOnPlanes) {
    Rng rng(4);
    const CameraIntrinsics k{120, 120, 24, 20, 48, 40};
    const auto k2 = k.scaled_to(96, 80);
    for (int trial = 0; trial < 30; ++trial) {
        const Pose pose{rng.rotation(), {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(200, 400)}};
        const TriMesh plane = quad({-80, -80, 0}, {80, -80, 0}, {80, 80, 0}, {-80, 80, 0});
        const auto lo = rasterize_depth(plane, pose, k), hi = rasterize_depth(plane, pose, k2);
        for (int y = 0; y < k.height; ++y)
            for (int x = 0; x < k.width; ++x) {
                if (lo.at(x, y) == 0) continue;
                float pooled = std::numeric_limits<float>::infinity();
                bool full = true;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const float v = hi.at(2 * x + dx, 2 * y + dy);
                        full = full && v > 0;
                        pooled = std::min(pooled, v);
                    }
                if (!full) continue;
                EXPECT_GE(lo.at(x, y), pooled * (1 - 1e-6)) << trial;
            }
    }
}

TEST(Visibility, SphereFrontHemisphere) {
    // distant camera: the visible cap covers (1 - r / D) / 2 of the area.
    // Pixels must be small against eps or limb samples fail the depth test.
    const double r = 50, dist = 5000;
    const auto sphere = fixtures::sphere(r, 64, 128);
    const CameraIntrinsics k{80000, 80000, 1024, 1024, 2048, 2048};
    const Pose pose{Mat3::identity(), {0, 0, dist}};
    const auto samples = sample_surface(sphere, 10000, 5);
    const auto depth = rasterize_depth(sphere, pose, k);
    const auto mask = visible_mask(samples, pose, k, depth, default_visibility_eps(2 * r));
    const double frac = static_cast<double>(std::count(mask.begin(), mask.end(), 1)) / 10000.0;
    EXPECT_NEAR(frac, 0.5, 0.02);
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (mask[i]) {
            EXPECT_LT(samples.points[i].z, 1.0);
        }
}

TEST(Visibility, OutsideImageAndFullOcclusion) {
    const auto sphere = fixtures::sphere(20, 16, 32);
    const auto k = fixtures::default_camera();
    const auto samples = sample_surface(sphere, 2000, 6);

    const Pose off{Mat3::identity(), {5000, 0, 500}};
    const auto d_off = rasterize_depth(sphere, off, k);
    const auto m_off = visible_mask(samples, off, k, d_off, 0.5);
    EXPECT_EQ(std::count(m_off.begin(), m_off.end(), 1), 0);

    const Pose pose{Mat3::identity(), {0, 0, 500}};
    ZBuffer zb(k);
    zb.draw(sphere, pose);
    zb.draw(quad({-1000, -1000, 100}, {1000, -1000, 100}, {1000, 1000, 100}, {-1000, 1000, 100}), Pose{}, 1);
    const auto m = visible_mask(samples, pose, k, zb.depth(), 0.5);
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 0);

    EXPECT_THROW(visible_mask(samples, pose, k, zb.depth(), 0.0), PreconditionError);
}

TEST(Visibility, VisibleSamplesHaveUnobstructedSegments) {
    Rng rng(7);
    const CameraIntrinsics k{400, 400, 80, 60, 160, 120};
    for (int trial = 0; trial < 16; ++trial) {
        const TriMesh m = fixtures::convex_fixture(rng, trial);
        ASSERT_LE(m.triangles.size(), 500u);
        const Pose pose = fixtures::random_pose_in_view(rng, 300, 600);
        const auto samples = sample_surface(m, 400, static_cast<std::uint64_t>(trial));
        const double eps = default_visibility_eps(mesh_diameter(m));
        const auto depth = rasterize_depth(m, pose, k);
        const auto mask = visible_mask(samples, pose, k, depth, eps);
        std::size_t visible = 0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!mask[i]) continue;
            ++visible;
            EXPECT_FALSE(oracle::segment_blocked(m, pose, pose.apply(samples.points[i]), eps)) << trial << ":" << i;
        }
        EXPECT_GT(visible, 0u);
    }
}

// ---------------------------------------------------------------------------
// image I/O
// ---------------------------------------------------------------------------

TEST(ImageIo, DepthPngRoundTrip) {
    fixtures::TempDir dir("png");
    DepthMap d(7, 5);
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = static_cast<float>(i * 12.3);
    write_depth_png(dir / "d.png", d);
    const auto img = read_png16(dir / "d.png");
    EXPECT_EQ(img.width, 7);
    EXPECT_EQ(img.height, 5);
    EXPECT_EQ(img.values[10], static_cast<std::uint16_t>(std::round(10 * 12.3f / 0.1)));
    const auto back = read_depth_png(dir / "d.png");
    for (std::size_t i = 0; i < d.values.size(); ++i) EXPECT_NEAR(back.values[i], d.values[i], 0.05 + 1e-4);

    DepthMap big(1, 1);
    big.values[0] = 7000.0f;
    EXPECT_THROW(depth_to_png16(big), PreconditionError);
    EXPECT_NO_THROW(depth_to_png16(big, 1.0));
}

TEST(ImageIo, RawFloatRoundTripAndHeader) {
    fixtures::TempDir dir("raw");
    DepthMap d(3, 2);
    d.values = {0.0f, 1.5f, 2.25f, 1e6f, 3.0f, 0.125f};
    write_depth_raw(dir / "d.raw", d);
    EXPECT_EQ(std::filesystem::file_size(dir / "d.raw"), 8u + 6u * 4u);
    std::ifstream in(dir / "d.raw", std::ios::binary);
    unsigned char hdr[8];
    in.read(reinterpret_cast<char*>(hdr), 8);
    EXPECT_EQ(hdr[0], 3);
    EXPECT_EQ(hdr[4], 2);
    const auto back = read_depth_raw(dir / "d.raw");
    EXPECT_EQ(back.values, d.values);

    std::ofstream(dir / "short.raw", std::ios::binary) << "abc";
    EXPECT_THROW(read_depth_raw(dir / "short.raw"), ParseError);
    EXPECT_THROW(read_depth_raw(dir / "missing.raw"), IoError);
    EXPECT_THROW(read_png16(dir / "missing.png"), IoError);
    std::ofstream(dir / "bad.png", std::ios::binary) << "not a png";
    EXPECT_THROW(read_png16(dir / "bad.png"), ParseError);
}
