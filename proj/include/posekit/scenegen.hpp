#pragma once

// Synthetic scene layouts (MiSo: 1-10 instances of one object, SiMo: 1-10
// distinct objects), look-at cameras on the upper hemisphere, and BOP-format
// ground truth with rasterized depth and per-instance visibility masks.
//
// Lighting, background and material records are metadata only; they do not
// change the depth output. Placement is free-floating with disjoint bounding
// spheres (no physics settling).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "posekit/bopio.hpp"
#include "posekit/core.hpp"
#include "posekit/geometry.hpp"
#include "posekit/image_io.hpp"
#include "posekit/ply.hpp"
#include "posekit/raster.hpp"

namespace posekit {

enum class PlacementMode { MiSo, SiMo };

inline constexpr int kLightingCount = 5;
enum class Lighting { AmbientPoint, PointOnly, AmbientOnly, AmbientSpot, MultiSpot };

inline constexpr int kBackgroundCount = 3;
enum class Background { Black, FloorTexture, HDRI };

inline const char* mode_name(PlacementMode m) { return m == PlacementMode::MiSo ? "miso" : "simo"; }

inline std::optional<PlacementMode> parse_mode(std::string_view s) {
    if (s == "miso" || s == "MiSo") return PlacementMode::MiSo;
    if (s == "simo" || s == "SiMo") return PlacementMode::SiMo;
    return std::nullopt;
}

inline const char* lighting_name(Lighting l) {
    switch (l) {
        case Lighting::AmbientPoint: return "ambient_point";
        case Lighting::PointOnly: return "point";
        case Lighting::AmbientOnly: return "ambient";
        case Lighting::AmbientSpot: return "ambient_spot";
        case Lighting::MultiSpot: return "multi_spot";
    }
    return "?";
}

inline const char* background_name(Background b) {
    switch (b) {
        case Background::Black: return "black";
        case Background::FloorTexture: return "floor_texture";
        case Background::HDRI: return "hdri";
    }
    return "?";
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Interval&) const = default;
};

struct Material {
    double metallic = 0.0;
    double specular = 0.0;
    double roughness = 0.0;
};

struct GenConfig {
    PlacementMode mode = PlacementMode::MiSo;
    int scene_count = 1;
    int cameras_per_scene = 1;
    std::uint64_t seed = 0;
    int min_instances = 1;
    int max_instances = 10;
    /// Placement box for instance centers, world frame. Unset: a cube of edge
    /// 3 * (largest diameter) centered at the origin.
    std::optional<BoundingBox> placement_box;
    /// Camera distance from the scene centroid. Unset: [7, 10] * largest diameter.
    std::optional<Interval> camera_distance;
    CameraIntrinsics camera{600.0, 600.0, 320.0, 240.0, 640, 480};
    double depth_scale = kDefaultDepthScale;
    Interval metallic{0.7, 1.0};
    Interval specular{0.3, 1.0};
    Interval roughness{0.0, 0.4};
    /// Extra occluding meshes per scene, recorded with obj_id 0 and excluded
    /// from ground truth. Each reuses a randomly chosen input mesh.
    int distractors = 0;

    void validate() const {
        if (scene_count < 1) throw PreconditionError("scene count must be >= 1");
        if (cameras_per_scene < 1) throw PreconditionError("cameras per scene must be >= 1");
        if (min_instances < 1 || max_instances > 10 || min_instances > max_instances)
            throw PreconditionError("instance count range must lie within [1, 10]");
        if (distractors < 0) throw PreconditionError("distractor count must be >= 0");
        if (camera_distance && !(camera_distance->lo > 0.0 && camera_distance->lo <= camera_distance->hi))
            throw PreconditionError("camera distance range must satisfy 0 < lo <= hi");
        if (placement_box) {
            const Vec3 d = placement_box->max - placement_box->min;
            if (!(d.x >= 0.0 && d.y >= 0.0 && d.z >= 0.0))
                throw PreconditionError("placement box min must not exceed max");
        }
        for (const Interval* r : {&metallic, &specular, &roughness})
            if (!(r->lo >= 0.0 && r->lo <= r->hi && r->hi <= 1.0))
                throw PreconditionError("material ranges must satisfy 0 <= lo <= hi <= 1");
        if (!(depth_scale > 0.0)) throw PreconditionError("depth scale must be > 0");
        camera.validate();
    }

    /// 10 scenes x 5 cameras per (object, lighting, background) combination.
    static GenConfig full_miso() {
        GenConfig c;
        c.mode = PlacementMode::MiSo;
        c.scene_count = 10;
        c.cameras_per_scene = 5;
        return c;
    }

    /// 120 scenes x 25 cameras per (lighting, background) combination.
    static GenConfig full_simo() {
        GenConfig c;
        c.mode = PlacementMode::SiMo;
        c.scene_count = 120;
        c.cameras_per_scene = 25;
        return c;
    }
};

inline long long images_per_combination(const GenConfig& cfg) {
    return static_cast<long long>(cfg.scene_count) * cfg.cameras_per_scene;
}

/// Images for a full dataset. A MiSo combination is (object, lighting,
/// background); a SiMo scene mixes objects, so its combination is
/// (lighting, background) only.
inline long long dataset_image_count(const GenConfig& cfg, int objects, int lightings = kLightingCount,
                                     int backgrounds = kBackgroundCount) {
    const long long combos = static_cast<long long>(lightings) * backgrounds *
                             (cfg.mode == PlacementMode::MiSo ? objects : 1);
    return images_per_combination(cfg) * combos;
}

struct GenObject {
    int obj_id = 0;
    TriMesh mesh;
    SymmetrySpec symmetries;
};

struct SceneInstance {
    int obj_id = 0;            // 0 for distractors
    std::size_t object = 0;    // index into the object list
    Pose model_to_world;
    Vec3 center;               // bounding-sphere center, world frame
    double radius = 0.0;
    Material material;
};

struct SceneLayout {
    int scene_index = 0;
    PlacementMode mode = PlacementMode::MiSo;
    std::vector<SceneInstance> instances;
    std::vector<SceneInstance> distractors;
    Lighting lighting = Lighting::AmbientPoint;
    Background background = Background::Black;

    Vec3 centroid() const {
        Vec3 c{};
        for (const auto& i : instances) c += i.center;
        return instances.empty() ? c : c / static_cast<double>(instances.size());
    }
};

namespace scenegen_detail {

struct Bounds {
    Vec3 center;
    double radius;
    double diameter;
};

inline Bounds bounds_of(const TriMesh& mesh) {
    const BoundingBox box = bounding_box(mesh.vertices);
    const Vec3 c = (box.min + box.max) * 0.5;
    double r = 0.0;
    for (const auto& v : mesh.vertices) r = std::max(r, (v - c).norm());
    return {c, r, mesh_diameter(mesh)};
}

inline double largest_diameter(std::span<const GenObject> objects) {
    double d = 0.0;
    for (const auto& o : objects) d = std::max(d, mesh_diameter(o.mesh));
    return d;
}

inline std::uint64_t scene_seed(std::uint64_t seed, int scene_index, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(scene_index))) ^ stream;
}

inline std::string id6(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", v);
    return buf;
}

}  // namespace scenegen_detail

inline BoundingBox effective_placement_box(std::span<const GenObject> objects, const GenConfig& cfg) {
    if (cfg.placement_box) return *cfg.placement_box;
    const double h = 1.5 * scenegen_detail::largest_diameter(objects);
    return {{-h, -h, -h}, {h, h, h}};
}

inline Interval effective_camera_distance(std::span<const GenObject> objects, const GenConfig& cfg) {
    if (cfg.camera_distance) return *cfg.camera_distance;
    const double d = scenegen_detail::largest_diameter(objects);
    return {7.0 * d, 10.0 * d};
}

/// Samples one scene layout. Fully determined by (cfg.seed, scene_index).
inline SceneLayout sample_layout(std::span<const GenObject> objects, const GenConfig& cfg, int scene_index) {
    if (objects.empty()) throw PreconditionError("sample_layout: no objects");
    cfg.validate();
    Rng rng(scenegen_detail::scene_seed(cfg.seed, scene_index, 0));
    std::vector<scenegen_detail::Bounds> bounds;
    for (const auto& o : objects) bounds.push_back(scenegen_detail::bounds_of(o.mesh));
    const BoundingBox box = effective_placement_box(objects, cfg);

    SceneLayout layout;
    layout.scene_index = scene_index;
    layout.mode = cfg.mode;
    int count = static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));

    // object choice
    std::vector<std::size_t> chosen;
    if (cfg.mode == PlacementMode::MiSo) {
        const auto o = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(objects.size()) - 1));
        chosen.assign(static_cast<std::size_t>(count), o);
    } else {
        // fewer distinct objects than drawn instances: fall back to fewer instances
        count = std::min<int>(count, static_cast<int>(objects.size()));
        std::vector<std::size_t> idx(objects.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (int i = 0; i < count; ++i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(i, static_cast<std::int64_t>(idx.size()) - 1));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        }
        chosen.assign(idx.begin(), idx.begin() + count);
    }

    auto place = [&](std::size_t obj, std::vector<SceneInstance>& placed, long long& budget) -> bool {
        const auto& b = bounds[obj];
        while (budget-- > 0) {
            SceneInstance inst;
            inst.object = obj;
            inst.obj_id = objects[obj].obj_id;
            inst.model_to_world.rotation = rng.rotation();
            const Vec3 p{rng.uniform(box.min.x, box.max.x), rng.uniform(box.min.y, box.max.y),
                         rng.uniform(box.min.z, box.max.z)};
            // the sphere center lands on p
            inst.model_to_world.translation = p - inst.model_to_world.rotation * b.center;
            inst.center = p;
            inst.radius = b.radius;
            const bool clear = std::all_of(placed.begin(), placed.end(), [&](const SceneInstance& q) {
                return (q.center - p).norm() >= q.radius + inst.radius;
            });
            if (clear) {
                placed.push_back(inst);
                return true;
            }
        }
        return false;
    };

    for (;;) {
        std::vector<SceneInstance> placed;
        long long budget = 10000;
        bool ok = true;
        for (int i = 0; i < count && ok; ++i) ok = place(chosen[static_cast<std::size_t>(i)], placed, budget);
        if (ok) {
            layout.instances = std::move(placed);
            break;
        }
        if (count == 1) throw PreconditionError("sample_layout: cannot place a single instance");
        --count;
        chosen.pop_back();
    }

    for (int d = 0; d < cfg.distractors; ++d) {
        const auto obj = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(objects.size()) - 1));
        std::vector<SceneInstance> all = layout.instances;
        all.insert(all.end(), layout.distractors.begin(), layout.distractors.end());
        long long budget = 10000;
        if (!place(obj, all, budget)) break;
        SceneInstance inst = all.back();
        inst.obj_id = 0;
        layout.distractors.push_back(inst);
    }

    layout.lighting = static_cast<Lighting>(rng.uniform_int(0, kLightingCount - 1));
    layout.background = static_cast<Background>(rng.uniform_int(0, kBackgroundCount - 1));
    for (auto* list : {&layout.instances, &layout.distractors})
        for (auto& inst : *list)
            inst.material = {rng.uniform(cfg.metallic.lo, cfg.metallic.hi),
                             rng.uniform(cfg.specular.lo, cfg.specular.hi),
                             rng.uniform(cfg.roughness.lo, cfg.roughness.hi)};
    return layout;
}

/// World-to-camera pose of a camera at `eye` looking at `target`. The up
/// vector is +z, or +x when the view direction is within 1 degree of vertical.
inline Pose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 f = (target - eye).normalized();
    if (!(f.norm() > 0.0)) throw PreconditionError("look_at: eye equals target");
    const Vec3 up = std::abs(f.z) > std::cos(kPi / 180.0) ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
    const Vec3 x = f.cross(up).normalized();
    const Vec3 y = f.cross(x);
    Pose w2c;
    w2c.rotation = Mat3::from_rows(x, y, f);
    w2c.translation = -(w2c.rotation * eye);
    return w2c;
}

/// `count` world-to-camera poses on the upper hemisphere around the layout
/// centroid; every instance center projects inside the image.
inline std::vector<Pose> sample_cameras(const SceneLayout& layout, const GenConfig& cfg, int count,
                                        const Interval& distance) {
    if (count < 1) throw PreconditionError("sample_cameras: count must be >= 1");
    if (!(distance.lo > 0.0 && distance.lo <= distance.hi))
        throw PreconditionError("sample_cameras: distance range must satisfy 0 < lo <= hi");
    Rng rng(scenegen_detail::scene_seed(cfg.seed, layout.scene_index, 0xCA3E5A3B1E5ULL));
    const Vec3 target = layout.centroid();
    const CameraIntrinsics& k = cfg.camera;
    std::vector<Pose> out;
    for (int c = 0; c < count; ++c) {
        bool found = false;
        for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
            const double z = 1.0 - rng.uniform();  // (0, 1]
            const double phi = rng.uniform(0.0, 2.0 * kPi);
            const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
            const Vec3 dir{s * std::cos(phi), s * std::sin(phi), z};
            const double dist = rng.uniform(distance.lo, distance.hi);
            const Pose w2c = look_at(target + dir * dist, target);
            found = std::all_of(layout.instances.begin(), layout.instances.end(), [&](const SceneInstance& i) {
                const Projection p = project_camera_point(k, w2c.apply(i.center));
                return p.valid && p.u >= 0.0 && p.v >= 0.0 && p.u < k.width && p.v < k.height;
            });
            if (found) out.push_back(w2c);
        }
        if (!found)
            throw PreconditionError("sample_cameras: no camera keeps every instance in view after 1000 attempts"
                                    " (scene " + std::to_string(layout.scene_index) + ")");
    }
    return out;
}

inline std::vector<Pose> sample_cameras(const SceneLayout& layout, std::span<const GenObject> objects,
                                        const GenConfig& cfg, int count) {
    return sample_cameras(layout, cfg, count, effective_camera_distance(objects, cfg));
}

/// Per (camera, instance) visibility statistics.
struct InstanceVisibility {
    std::size_t px_count_all = 0;
    std::size_t px_count_visib = 0;
    double visib_fract = 0.0;
};

/// Writes scene_gt.json, scene_camera.json, scene_gt_info.json,
/// metadata.json, depth/{im:06}.png and mask_visib/{im:06}_{inst:06}.png
/// into `scene_dir` (created if needed). Returns visibility per camera.
inline std::vector<std::vector<InstanceVisibility>> emit_bop_scene(const SceneLayout& layout,
                                                                   std::span<const Pose> cameras,
                                                                   std::span<const GenObject> objects,
                                                                   const GenConfig& cfg,
                                                                   const std::filesystem::path& scene_dir) {
    namespace fs = std::filesystem;
    for (const auto* list : {&layout.instances, &layout.distractors})
        for (const auto& inst : *list)
            if (inst.object >= objects.size())
                throw PreconditionError("emit_bop_scene: instance refers to a missing mesh");
    fs::create_directories(scene_dir / "depth");
    fs::create_directories(scene_dir / "mask_visib");
    const CameraIntrinsics& k = cfg.camera;

    SceneGt gt;
    SceneCamera cams;
    std::vector<std::vector<InstanceVisibility>> vis(cameras.size());
    for (std::size_t c = 0; c < cameras.size(); ++c) {
        const int im = static_cast<int>(c);
        const Pose& w2c = cameras[c];
        cams[im] = {k.fx, k.fy, k.cx, k.cy, cfg.depth_scale, w2c};
        auto& entries = gt[im];
        ZBuffer scene(k);
        for (std::size_t i = 0; i < layout.instances.size(); ++i) {
            const auto& inst = layout.instances[i];
            const Pose m2c = w2c * inst.model_to_world;
            entries.push_back({inst.obj_id, m2c});
            scene.draw(objects[inst.object].mesh, m2c, static_cast<int>(i));
        }
        for (const auto& d : layout.distractors)
            scene.draw(objects[d.object].mesh, w2c * d.model_to_world, -2);
        write_depth_png(scene_dir / "depth" / (scenegen_detail::id6(im) + ".png"), scene.depth(), cfg.depth_scale);

        for (std::size_t i = 0; i < layout.instances.size(); ++i) {
            const DepthMap alone = rasterize_depth(objects[layout.instances[i].object].mesh, entries[i].pose, k);
            GrayImage8 mask{k.width, k.height, std::vector<std::uint8_t>(alone.values.size(), 0)};
            InstanceVisibility v;
            v.px_count_all = alone.covered_pixels();
            for (std::size_t p = 0; p < mask.values.size(); ++p)
                if (scene.ids()[p] == static_cast<int>(i)) {
                    mask.values[p] = 255;
                    ++v.px_count_visib;
                }
            v.visib_fract = v.px_count_all ? static_cast<double>(v.px_count_visib) / v.px_count_all : 0.0;
            vis[c].push_back(v);
            write_png8(scene_dir / "mask_visib" /
                           (scenegen_detail::id6(im) + "_" + scenegen_detail::id6(static_cast<int>(i)) + ".png"),
                       mask);
        }
    }
    write_scene_gt(scene_dir / "scene_gt.json", gt);
    write_scene_camera(scene_dir / "scene_camera.json", cams);

    Json info = Json::object();
    Json vis_json = Json::object();
    for (std::size_t c = 0; c < vis.size(); ++c) {
        Json arr = Json::array(), fr = Json::array();
        for (const auto& v : vis[c]) {
            arr.push_back({{"px_count_all", v.px_count_all},
                           {"px_count_visib", v.px_count_visib},
                           {"visib_fract", v.visib_fract}});
            fr.push_back(v.visib_fract);
        }
        info[std::to_string(c)] = arr;
        vis_json[std::to_string(c)] = fr;
    }
    bop_detail::write_json_file(scene_dir / "scene_gt_info.json", info);

    auto inst_json = [](const SceneInstance& s) {
        return Json{{"obj_id", s.obj_id},
                    {"R_m2w", bop_detail::to_json(s.model_to_world.rotation)},
                    {"t_m2w", bop_detail::to_json(s.model_to_world.translation)},
                    {"material",
                     {{"metallic", s.material.metallic},
                      {"specular", s.material.specular},
                      {"roughness", s.material.roughness}}}};
    };
    Json insts = Json::array(), dis = Json::array();
    for (const auto& s : layout.instances) insts.push_back(inst_json(s));
    for (const auto& s : layout.distractors) dis.push_back(inst_json(s));
    bop_detail::write_json_file(scene_dir / "metadata.json",
                                {{"scene_index", layout.scene_index},
                                 {"mode", mode_name(layout.mode)},
                                 {"lighting", lighting_name(layout.lighting)},
                                 {"background", background_name(layout.background)},
                                 {"instances", insts},
                                 {"distractors", dis},
                                 {"visib_fract", vis_json}});
    return vis;
}

/// Loads every *.ply in `dir`. Files named obj_<n>.ply get obj_id n; other
/// names get ids 1, 2, ... in file-name order. Symmetries are taken from a
/// models_info.json in the same directory when present.
inline std::vector<GenObject> load_model_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("models directory '" + dir.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ply") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw PreconditionError("no .ply models in '" + dir.string() + "'");
    std::optional<ModelsInfo> infos;
    if (fs::exists(dir / "models_info.json")) infos = read_models_info(dir / "models_info.json");
    const std::regex named("obj_0*([0-9]+)");
    std::vector<GenObject> out;
    std::map<int, fs::path> seen;
    int next = 1;
    for (const auto& f : files) {
        std::smatch m;
        const std::string stem = f.stem().string();
        GenObject o;
        o.obj_id = std::regex_match(stem, m, named) ? std::stoi(m[1].str()) : next;
        ++next;
        if (o.obj_id < 1) throw PreconditionError("model '" + f.string() + "' has obj_id 0");
        if (auto [it, ok] = seen.emplace(o.obj_id, f); !ok)
            throw PreconditionError("models '" + it->second.string() + "' and '" + f.string() +
                                    "' share obj_id " + std::to_string(o.obj_id));
        o.mesh = load_mesh(f);
        if (infos && infos->count(o.obj_id)) o.symmetries = infos->at(o.obj_id).symmetries;
        out.push_back(std::move(o));
    }
    std::sort(out.begin(), out.end(), [](const GenObject& a, const GenObject& b) { return a.obj_id < b.obj_id; });
    return out;
}

/// Full dataset: models/, camera.json and scene_{:06}/ for every scene.
/// Everything is written to a sibling staging directory first and moved to
/// `out` on success. An existing `out` is replaced only if it holds a
/// previous generator output (a metadata-bearing scene tree or manifest).
inline void generate_dataset(std::span<const GenObject> objects, const GenConfig& cfg,
                             const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    if (objects.empty()) throw PreconditionError("generate_dataset: no objects");
    cfg.validate();
    if (fs::exists(out)) {
        if (!fs::is_directory(out)) throw PreconditionError("output '" + out.string() + "' is not a directory");
        const bool empty = fs::directory_iterator(out) == fs::directory_iterator();
        if (!empty && !fs::exists(out / "manifest.json") && !fs::exists(out / "models" / "models_info.json"))
            throw PreconditionError("output directory '" + out.string() +
                                    "' is not empty and does not hold a previous dataset");
    }
    const fs::path abs = fs::absolute(out).lexically_normal();
    const fs::path parent = abs.has_filename() ? abs.parent_path() : abs.parent_path().parent_path();
    const std::string name = (abs.has_filename() ? abs : abs.parent_path()).filename().string();
    const fs::path staging = parent / ("." + name + ".staging");
    fs::remove_all(staging);
    fs::create_directories(staging / "models");
    try {
        ModelsInfo infos;
        for (const auto& o : objects) {
            infos[o.obj_id] = model_info_for(o.mesh, o.symmetries);
            save_mesh(staging / "models" / model_file_name(o.obj_id), o.mesh, PlyEncoding::BinaryLittleEndian);
        }
        write_models_info(staging / "models" / "models_info.json", infos);
        write_camera(staging / "camera.json", cfg.camera, cfg.depth_scale);
        const Interval dist = effective_camera_distance(objects, cfg);
        parallel_for(
            static_cast<std::size_t>(cfg.scene_count),
            [&](std::size_t s) {
                const int idx = static_cast<int>(s);
                const SceneLayout layout = sample_layout(objects, cfg, idx);
                const auto cams = sample_cameras(layout, cfg, cfg.cameras_per_scene, dist);
                emit_bop_scene(layout, cams, objects, cfg, staging / ("scene_" + scenegen_detail::id6(idx)));
            },
            0, 1);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
    fs::remove_all(abs);
    fs::rename(staging, abs);
}

}  // namespace posekit
