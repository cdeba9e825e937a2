#pragma once

// BOP dataset layout: scene_gt.json, scene_camera.json, models_info.json,
// camera.json, the bop19 results CSV, an object-category sidecar, and
// dataset-level evaluation.
//
// Dataset root layout read by evaluate_dataset:
//
//     <root>/camera.json                      optional; image width/height
//     <root>/models/models_info.json
//     <root>/models/obj_{:06}.ply
//     <root>/scene_{:06}/scene_gt.json        ({:06} alone is also accepted)
//     <root>/scene_{:06}/scene_camera.json
//     <root>/scene_{:06}/depth/{:06}.png      only with EvalConfig::use_scene_depth

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "posekit/core.hpp"
#include "posekit/geometry.hpp"
#include "posekit/image_io.hpp"
#include "posekit/metrics.hpp"
#include "posekit/ply.hpp"
#include "posekit/raster.hpp"

namespace posekit {

using Json = nlohmann::json;

/// Rotations read from files are projected onto SO(3) when their
/// orthonormality error is at most this; larger errors are rejected.
inline constexpr double kRotationFileTolerance = 1e-4;

namespace bop_detail {

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError(path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    image_detail::atomic_write(path, [&](const std::filesystem::path& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write '" + path.string() + "'");
        out << text;
        out.flush();
        if (!out) throw Error("write failed for '" + path.string() + "'");
    });
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline int parse_id_key(const std::string& key, const std::string& ctx) {
    int v = 0;
    const auto* end = key.data() + key.size();
    const auto [p, ec] = std::from_chars(key.data(), end, v);
    if (ec != std::errc() || p != end || v < 0)
        throw ParseError(ctx + ": key '" + key + "' is not a non-negative integer");
    return v;
}

inline std::vector<double> numbers(const Json& parent, const char* key, std::size_t n,
                                   const std::string& ctx) {
    if (!parent.is_object() || !parent.contains(key))
        throw ParseError(ctx + ": missing key '" + key + "'");
    const Json& a = parent.at(key);
    if (!a.is_array() || a.size() != n)
        throw ParseError(ctx + ": '" + key + "' must be an array of " + std::to_string(n) +
                         " numbers" + (a.is_array() ? ", got " + std::to_string(a.size()) : ""));
    std::vector<double> out;
    out.reserve(n);
    for (const auto& v : a) {
        if (!v.is_number()) throw ParseError(ctx + ": '" + key + "' contains a non-number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ParseError(ctx + ": '" + key + "' contains a non-finite number");
        out.push_back(d);
    }
    return out;
}

inline double number(const Json& parent, const char* key, const std::string& ctx) {
    if (!parent.is_object() || !parent.contains(key))
        throw ParseError(ctx + ": missing key '" + key + "'");
    const Json& v = parent.at(key);
    if (!v.is_number()) throw ParseError(ctx + ": '" + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ParseError(ctx + ": '" + key + "' is not finite");
    return d;
}

inline Mat3 rotation_from(std::span<const double> r, const std::string& ctx) {
    Mat3 m;
    std::copy(r.begin(), r.end(), m.m.begin());
    const double err = orthonormality_error(m);
    if (!(err <= kRotationFileTolerance) || !(m.determinant() > 0.0))
        throw ParseError(ctx + ": rotation is not orthonormal and right-handed within 1e-4");
    // already-clean rotations are kept bit-for-bit so round trips are stable
    return err > 1e-12 ? nearest_rotation(m) : m;
}

inline Json to_json(const Mat3& m) { return Json(std::vector<double>(m.m.begin(), m.m.end())); }
inline Json to_json(const Vec3& v) { return Json(std::vector<double>{v.x, v.y, v.z}); }

inline std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace bop_detail

// ---------------------------------------------------------------------------
// scene_gt.json
// ---------------------------------------------------------------------------

struct SceneGtEntry {
    int obj_id = 0;
    Pose pose;  // model to camera
    bool operator==(const SceneGtEntry&) const = default;
};

using SceneGt = std::map<int, std::vector<SceneGtEntry>>;

inline SceneGt scene_gt_from_json(const Json& j, const std::string& source = "scene_gt.json") {
    if (!j.is_object()) throw ParseError(source + ": top level must be an object");
    SceneGt out;
    for (const auto& [key, entries] : j.items()) {
        const int im = bop_detail::parse_id_key(key, source);
        if (!entries.is_array()) throw ParseError(source + ": image " + key + " must map to an array");
        auto& list = out[im];
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const std::string ctx = source + ": image " + key + ", entry " + std::to_string(e);
            const Json& ej = entries[e];
            if (!ej.is_object() || !ej.contains("obj_id"))
                throw ParseError(ctx + ": missing key 'obj_id'");
            if (!ej.at("obj_id").is_number_integer() || ej.at("obj_id").get<long long>() < 1)
                throw ParseError(ctx + ": 'obj_id' must be a positive integer");
            SceneGtEntry entry;
            entry.obj_id = ej.at("obj_id").get<int>();
            const auto r = bop_detail::numbers(ej, "cam_R_m2c", 9, ctx);
            const auto t = bop_detail::numbers(ej, "cam_t_m2c", 3, ctx);
            entry.pose.rotation = bop_detail::rotation_from(r, ctx);
            entry.pose.translation = {t[0], t[1], t[2]};
            list.push_back(entry);
        }
    }
    return out;
}

inline Json scene_gt_to_json(const SceneGt& gt) {
    Json j = Json::object();
    for (const auto& [im, entries] : gt) {
        Json arr = Json::array();
        for (const auto& e : entries)
            arr.push_back({{"obj_id", e.obj_id},
                           {"cam_R_m2c", bop_detail::to_json(e.pose.rotation)},
                           {"cam_t_m2c", bop_detail::to_json(e.pose.translation)}});
        j[std::to_string(im)] = arr;
    }
    return j;
}

inline SceneGt read_scene_gt(const std::filesystem::path& path) {
    return scene_gt_from_json(bop_detail::read_json_file(path), path.string());
}

inline void write_scene_gt(const std::filesystem::path& path, const SceneGt& gt) {
    bop_detail::write_json_file(path, scene_gt_to_json(gt));
}

// ---------------------------------------------------------------------------
// scene_camera.json
// ---------------------------------------------------------------------------

struct SceneCameraEntry {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    double depth_scale = kDefaultDepthScale;
    /// World-to-camera transform, when the file carries cam_R_w2c / cam_t_w2c.
    std::optional<Pose> world_to_camera;

    CameraIntrinsics intrinsics(int width, int height) const { return {fx, fy, cx, cy, width, height}; }
    bool operator==(const SceneCameraEntry&) const = default;
};

using SceneCamera = std::map<int, SceneCameraEntry>;

inline SceneCamera scene_camera_from_json(const Json& j, const std::string& source = "scene_camera.json") {
    if (!j.is_object()) throw ParseError(source + ": top level must be an object");
    SceneCamera out;
    for (const auto& [key, ej] : j.items()) {
        const int im = bop_detail::parse_id_key(key, source);
        const std::string ctx = source + ": image " + key;
        const auto k = bop_detail::numbers(ej, "cam_K", 9, ctx);
        if (k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0)
            throw ParseError(ctx + ": 'cam_K' must be [fx,0,cx, 0,fy,cy, 0,0,1]");
        SceneCameraEntry e;
        e.fx = k[0];
        e.cx = k[2];
        e.fy = k[4];
        e.cy = k[5];
        if (!(e.fx > 0.0 && e.fy > 0.0)) throw ParseError(ctx + ": focal lengths must be positive");
        if (ej.contains("depth_scale")) {
            e.depth_scale = bop_detail::number(ej, "depth_scale", ctx);
            if (!(e.depth_scale > 0.0)) throw ParseError(ctx + ": 'depth_scale' must be positive");
        }
        if (ej.contains("cam_R_w2c") || ej.contains("cam_t_w2c")) {
            const auto r = bop_detail::numbers(ej, "cam_R_w2c", 9, ctx);
            const auto t = bop_detail::numbers(ej, "cam_t_w2c", 3, ctx);
            e.world_to_camera = Pose{bop_detail::rotation_from(r, ctx), {t[0], t[1], t[2]}};
        }
        out[im] = e;
    }
    return out;
}

inline Json scene_camera_to_json(const SceneCamera& cams) {
    Json j = Json::object();
    for (const auto& [im, e] : cams) {
        Json ej = {{"cam_K", std::vector<double>{e.fx, 0, e.cx, 0, e.fy, e.cy, 0, 0, 1}},
                   {"depth_scale", e.depth_scale}};
        if (e.world_to_camera) {
            ej["cam_R_w2c"] = bop_detail::to_json(e.world_to_camera->rotation);
            ej["cam_t_w2c"] = bop_detail::to_json(e.world_to_camera->translation);
        }
        j[std::to_string(im)] = ej;
    }
    return j;
}

inline SceneCamera read_scene_camera(const std::filesystem::path& path) {
    return scene_camera_from_json(bop_detail::read_json_file(path), path.string());
}

inline void write_scene_camera(const std::filesystem::path& path, const SceneCamera& cams) {
    bop_detail::write_json_file(path, scene_camera_to_json(cams));
}

// ---------------------------------------------------------------------------
// camera.json (dataset-level intrinsics with image size)
// ---------------------------------------------------------------------------

inline CameraIntrinsics camera_from_json(const Json& j, const std::string& source = "camera.json") {
    CameraIntrinsics k;
    k.fx = bop_detail::number(j, "fx", source);
    k.fy = bop_detail::number(j, "fy", source);
    k.cx = bop_detail::number(j, "cx", source);
    k.cy = bop_detail::number(j, "cy", source);
    const double w = bop_detail::number(j, "width", source);
    const double h = bop_detail::number(j, "height", source);
    if (w != std::floor(w) || h != std::floor(h) || w < 1 || h < 1 || w > 1e5 || h > 1e5)
        throw ParseError(source + ": width and height must be positive integers");
    k.width = static_cast<int>(w);
    k.height = static_cast<int>(h);
    try {
        k.validate();
    } catch (const PreconditionError& e) {
        throw ParseError(source + ": " + e.what());
    }
    return k;
}

inline Json camera_to_json(const CameraIntrinsics& k, double depth_scale = kDefaultDepthScale) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
            {"width", k.width}, {"height", k.height}, {"depth_scale", depth_scale}};
}

inline CameraIntrinsics read_camera(const std::filesystem::path& path) {
    return camera_from_json(bop_detail::read_json_file(path), path.string());
}

inline void write_camera(const std::filesystem::path& path, const CameraIntrinsics& k,
                         double depth_scale = kDefaultDepthScale) {
    bop_detail::write_json_file(path, camera_to_json(k, depth_scale));
}

// ---------------------------------------------------------------------------
// models_info.json
// ---------------------------------------------------------------------------

struct ModelInfo {
    double diameter = 0.0;
    Vec3 min{};
    Vec3 size{};
    SymmetrySpec symmetries;

    void validate(const std::string& ctx) const {
        if (!(diameter > 0.0)) throw ParseError(ctx + ": diameter must be > 0");
        const double extent = std::max({size.x, size.y, size.z});
        if (diameter < extent - 1e-6 * diameter)
            throw ParseError(ctx + ": diameter " + bop_detail::format_double(diameter) +
                             " is smaller than the largest extent " + bop_detail::format_double(extent));
    }
};

using ModelsInfo = std::map<int, ModelInfo>;

inline ModelInfo model_info_for(const TriMesh& mesh, SymmetrySpec symmetries = {}) {
    ModelInfo info;
    const BoundingBox box = bounding_box(mesh.vertices);
    info.diameter = mesh_diameter(mesh);
    info.min = box.min;
    info.size = box.max - box.min;
    info.symmetries = symmetries.normalized();
    return info;
}

inline ModelsInfo models_info_from_json(const Json& j, const std::string& source = "models_info.json") {
    if (!j.is_object()) throw ParseError(source + ": top level must be an object");
    ModelsInfo out;
    for (const auto& [key, ej] : j.items()) {
        const int id = bop_detail::parse_id_key(key, source);
        const std::string ctx = source + ": object " + key;
        ModelInfo info;
        info.diameter = bop_detail::number(ej, "diameter", ctx);
        auto opt = [&](const char* k) { return ej.contains(k) ? bop_detail::number(ej, k, ctx) : 0.0; };
        info.min = {opt("min_x"), opt("min_y"), opt("min_z")};
        info.size = {opt("size_x"), opt("size_y"), opt("size_z")};
        if (ej.contains("symmetries_discrete")) {
            const Json& list = ej.at("symmetries_discrete");
            if (!list.is_array()) throw ParseError(ctx + ": 'symmetries_discrete' must be an array");
            for (std::size_t s = 0; s < list.size(); ++s) {
                const std::string sctx = ctx + ", symmetries_discrete[" + std::to_string(s) + "]";
                const Json wrap = {{"m", list[s]}};
                const auto m = bop_detail::numbers(wrap, "m", 16, sctx);
                if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0)
                    throw ParseError(sctx + ": last row must be [0, 0, 0, 1]");
                const double r[9] = {m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
                info.symmetries.discrete.push_back(
                    {bop_detail::rotation_from(r, sctx), {m[3], m[7], m[11]}});
            }
        }
        if (ej.contains("symmetries_continuous")) {
            const Json& list = ej.at("symmetries_continuous");
            if (!list.is_array()) throw ParseError(ctx + ": 'symmetries_continuous' must be an array");
            for (std::size_t s = 0; s < list.size(); ++s) {
                const std::string sctx = ctx + ", symmetries_continuous[" + std::to_string(s) + "]";
                const auto a = bop_detail::numbers(list[s], "axis", 3, sctx);
                const auto o = bop_detail::numbers(list[s], "offset", 3, sctx);
                const Vec3 axis{a[0], a[1], a[2]};
                if (!(axis.norm() > 0.0)) throw ParseError(sctx + ": axis is zero");
                info.symmetries.continuous.push_back({axis, {o[0], o[1], o[2]}});
            }
        }
        info.symmetries = info.symmetries.normalized();
        info.validate(ctx);
        out[id] = info;
    }
    return out;
}

inline Json models_info_to_json(const ModelsInfo& models) {
    Json j = Json::object();
    for (const auto& [id, info] : models) {
        Json ej = {{"diameter", info.diameter},
                   {"min_x", info.min.x}, {"min_y", info.min.y}, {"min_z", info.min.z},
                   {"size_x", info.size.x}, {"size_y", info.size.y}, {"size_z", info.size.z}};
        Json disc = Json::array();
        for (const auto& s : info.symmetries.normalized().discrete) {
            if (s == Pose::identity()) continue;
            const auto& r = s.rotation.m;
            const auto& t = s.translation;
            disc.push_back(std::vector<double>{r[0], r[1], r[2], t.x, r[3], r[4], r[5], t.y,
                                               r[6], r[7], r[8], t.z, 0, 0, 0, 1});
        }
        if (!disc.empty()) ej["symmetries_discrete"] = disc;
        Json cont = Json::array();
        for (const auto& c : info.symmetries.continuous)
            cont.push_back({{"axis", bop_detail::to_json(c.axis)}, {"offset", bop_detail::to_json(c.offset)}});
        if (!cont.empty()) ej["symmetries_continuous"] = cont;
        j[std::to_string(id)] = ej;
    }
    return j;
}

inline ModelsInfo read_models_info(const std::filesystem::path& path) {
    return models_info_from_json(bop_detail::read_json_file(path), path.string());
}

inline void write_models_info(const std::filesystem::path& path, const ModelsInfo& models) {
    bop_detail::write_json_file(path, models_info_to_json(models));
}

inline std::string model_file_name(int obj_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "obj_%06d.ply", obj_id);
    return buf;
}

// ---------------------------------------------------------------------------
// Categories
// ---------------------------------------------------------------------------

enum class Category { Can, Household, Industry };

inline const char* category_name(Category c) {
    switch (c) {
        case Category::Can: return "Can";
        case Category::Household: return "Household";
        case Category::Industry: return "Industry";
    }
    return "?";
}

inline std::optional<Category> parse_category(std::string_view s) {
    if (s == "Can") return Category::Can;
    if (s == "Household") return Category::Household;
    if (s == "Industry") return Category::Industry;
    return std::nullopt;
}

using CategoryMap = std::map<int, Category>;

inline CategoryMap categories_from_json(const Json& j, const std::string& source = "categories.json") {
    if (!j.is_object()) throw ParseError(source + ": top level must be an object");
    CategoryMap out;
    for (const auto& [key, v] : j.items()) {
        const int id = bop_detail::parse_id_key(key, source);
        const auto c = v.is_string() ? parse_category(v.get<std::string>()) : std::nullopt;
        if (!c)
            throw ParseError(source + ": object " + key +
                             ": category must be one of \"Can\", \"Household\", \"Industry\"");
        out[id] = *c;
    }
    return out;
}

inline CategoryMap read_categories(const std::filesystem::path& path) {
    return categories_from_json(bop_detail::read_json_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

struct Estimate {
    int scene_id = 0;
    int im_id = 0;
    int obj_id = 0;
    double score = 0.0;
    Pose pose;
    double time = -1.0;
    /// 1-based line in the source file (0 when built in memory).
    std::size_t line = 0;
};

inline constexpr std::string_view kResultsHeader = "scene_id,im_id,obj_id,score,R,t,time";

namespace bop_detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view s, const std::string& ctx) {
    s = trim(s);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        throw ParseError(ctx + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

inline int parse_int(std::string_view s, const std::string& ctx) {
    s = trim(s);
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(ctx + ": cannot parse integer '" + std::string(s) + "'");
    return v;
}

inline std::vector<double> parse_floats(std::string_view s, std::size_t n, const std::string& ctx,
                                        const char* name) {
    std::vector<double> out;
    s = trim(s);
    while (!s.empty()) {
        const auto sp = s.find_first_of(" \t");
        out.push_back(parse_double(s.substr(0, sp), ctx));
        if (sp == std::string_view::npos) break;
        s = trim(s.substr(sp));
    }
    if (out.size() != n)
        throw ParseError(ctx + ": field " + name + " must hold " + std::to_string(n) +
                         " space-separated numbers, got " + std::to_string(out.size()));
    return out;
}

}  // namespace bop_detail

/// Parses bop19 results: header then one estimate per row. Each row has 7
/// comma-separated fields, 16 numbers before `time` (R holds 9, t holds 3).
inline std::vector<Estimate> parse_results_csv(std::istream& in, const std::string& source = "results") {
    std::vector<Estimate> out;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string ctx = source + ":" + std::to_string(lineno);
        const std::string_view row = bop_detail::trim(line);
        if (row.empty()) continue;
        if (!header_seen) {
            std::string compact;
            for (char c : row)
                if (c != ' ' && c != '\t') compact += c;
            if (compact != kResultsHeader)
                throw ParseError(ctx + ": expected header '" + std::string(kResultsHeader) + "'");
            header_seen = true;
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest = row;
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 7)
            throw ParseError(ctx + ": expected 7 comma-separated fields, got " + std::to_string(fields.size()));
        Estimate e;
        e.line = lineno;
        e.scene_id = bop_detail::parse_int(fields[0], ctx);
        e.im_id = bop_detail::parse_int(fields[1], ctx);
        e.obj_id = bop_detail::parse_int(fields[2], ctx);
        e.score = bop_detail::parse_double(fields[3], ctx);
        const auto r = bop_detail::parse_floats(fields[4], 9, ctx, "R");
        const auto t = bop_detail::parse_floats(fields[5], 3, ctx, "t");
        e.time = bop_detail::parse_double(fields[6], ctx);
        e.pose.rotation = bop_detail::rotation_from(r, ctx);
        e.pose.translation = {t[0], t[1], t[2]};
        out.push_back(e);
    }
    if (!header_seen) throw ParseError(source + ": empty file, expected a header line");
    return out;
}

inline std::vector<Estimate> read_results_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results file '" + path.string() + "'");
    return parse_results_csv(in, path.string());
}

inline std::string results_csv_string(std::span<const Estimate> ests) {
    using bop_detail::format_double;
    std::string s(kResultsHeader);
    s += '\n';
    for (const auto& e : ests) {
        s += std::to_string(e.scene_id) + ',' + std::to_string(e.im_id) + ',' + std::to_string(e.obj_id) +
             ',' + format_double(e.score) + ',';
        for (int i = 0; i < 9; ++i) s += (i ? " " : "") + format_double(e.pose.rotation.m[i]);
        s += ',' + format_double(e.pose.translation.x) + ' ' + format_double(e.pose.translation.y) + ' ' +
             format_double(e.pose.translation.z) + ',' + format_double(e.time) + '\n';
    }
    return s;
}

inline void write_results_csv(const std::filesystem::path& path, std::span<const Estimate> ests) {
    bop_detail::write_text_file(path, results_csv_string(ests));
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
    BopGrid grid = BopGrid::bop19();
    double symmetry_step_degrees = 1.0;
    /// Use depth/{im:06}.png as the VSD test depth instead of the ground-truth render.
    bool use_scene_depth = false;
};

struct DatasetSummary {
    RecallSummary overall;
    std::map<int, RecallSummary> per_object;
    std::map<std::string, RecallSummary> per_category;
    std::size_t estimates = 0;
    std::size_t unmatched_estimates = 0;
};

namespace bop_detail {

inline std::optional<std::filesystem::path> find_scene_dir(const std::filesystem::path& root, int scene_id) {
    char a[32], b[32];
    std::snprintf(a, sizeof a, "scene_%06d", scene_id);
    std::snprintf(b, sizeof b, "%06d", scene_id);
    for (const char* name : {a, b})
        if (std::filesystem::is_directory(root / name)) return root / name;
    return std::nullopt;
}

inline std::vector<int> list_scene_ids(const std::filesystem::path& root) {
    std::vector<int> ids;
    if (!std::filesystem::is_directory(root))
        throw PreconditionError("dataset root '" + root.string() + "' is not a directory");
    for (const auto& e : std::filesystem::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        std::string name = e.path().filename().string();
        if (name.rfind("scene_", 0) == 0) name = name.substr(6);
        if (name.size() != 6 || !std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) continue;
        if (!std::filesystem::exists(e.path() / "scene_gt.json")) continue;
        ids.push_back(std::stoi(name));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

struct Target {
    int scene_id;
    int im_id;
    std::size_t gt_index;
    int obj_id;
};

}  // namespace bop_detail

/// Evaluates `results` against every ground-truth instance under `root`.
///
/// Matching, per (scene, image, obj_id): only the n_gt highest-scoring rows
/// are kept (ties by line order); they are visited in descending score and
/// each takes the still-unmatched ground-truth instance with the smallest
/// MSSD (ties by instance order). Unmatched instances count as failures.
inline DatasetSummary evaluate_dataset(const std::filesystem::path& root, std::span<const Estimate> results,
                                       const std::optional<CategoryMap>& categories = std::nullopt,
                                       const EvalConfig& cfg = {}) {
    namespace fs = std::filesystem;
    const fs::path info_path = root / "models" / "models_info.json";
    if (!fs::is_directory(root))
        throw PreconditionError("dataset root '" + root.string() + "' is not a directory");
    if (!fs::exists(info_path)) throw PreconditionError("missing '" + info_path.string() + "'");
    const ModelsInfo infos = read_models_info(info_path);
    std::optional<CameraIntrinsics> root_camera;
    if (fs::exists(root / "camera.json")) root_camera = read_camera(root / "camera.json");

    struct SceneData {
        SceneGt gt;
        SceneCamera cams;
        fs::path dir;
    };
    std::map<int, SceneData> scenes;
    for (int id : bop_detail::list_scene_ids(root)) {
        SceneData d;
        d.dir = *bop_detail::find_scene_dir(root, id);
        d.gt = read_scene_gt(d.dir / "scene_gt.json");
        if (!fs::exists(d.dir / "scene_camera.json"))
            throw PreconditionError("missing '" + (d.dir / "scene_camera.json").string() + "'");
        d.cams = read_scene_camera(d.dir / "scene_camera.json");
        scenes.emplace(id, std::move(d));
    }

    // every referenced object needs models_info, a mesh and (with categories) a category
    std::map<int, TriMesh> meshes;
    std::map<int, ObjectModel> models;
    auto require_model = [&](int obj_id, const std::string& who) -> const ObjectModel& {
        if (auto it = models.find(obj_id); it != models.end()) return it->second;
        const auto info = infos.find(obj_id);
        if (info == infos.end())
            throw PreconditionError(who + ": object " + std::to_string(obj_id) + " is not in models_info.json");
        if (categories && !categories->count(obj_id))
            throw PreconditionError(who + ": object " + std::to_string(obj_id) + " has no category");
        const fs::path mp = root / "models" / model_file_name(obj_id);
        if (!fs::exists(mp)) throw PreconditionError(who + ": missing model file '" + mp.string() + "'");
        meshes.emplace(obj_id, load_mesh(mp));
        ObjectModel m;
        m.mesh = &meshes.at(obj_id);
        m.diameter = info->second.diameter;
        m.symmetries = expand_symmetries(info->second.symmetries, cfg.symmetry_step_degrees);
        return models.emplace(obj_id, std::move(m)).first->second;
    };

    auto intrinsics_for = [&](const SceneData& s, int im, const std::string& who) {
        const auto it = s.cams.find(im);
        if (it == s.cams.end())
            throw PreconditionError(who + ": image " + std::to_string(im) + " has no scene_camera entry");
        int w, h;
        if (root_camera) {
            w = root_camera->width;
            h = root_camera->height;
        } else {
            w = static_cast<int>(std::lround(2.0 * it->second.cx));
            h = static_cast<int>(std::lround(2.0 * it->second.cy));
        }
        return it->second.intrinsics(w, h);
    };

    // targets in (scene, image, instance) order
    std::vector<bop_detail::Target> targets;
    for (const auto& [sid, s] : scenes)
        for (const auto& [im, entries] : s.gt)
            for (std::size_t g = 0; g < entries.size(); ++g) {
                const std::string who = s.dir.string() + ": image " + std::to_string(im);
                require_model(entries[g].obj_id, who);
                targets.push_back({sid, im, g, entries[g].obj_id});
            }

    using SlotKey = std::tuple<int, int, int>;
    std::map<SlotKey, std::vector<const Estimate*>> slots;
    for (const auto& e : results) {
        const std::string who = "results line " + std::to_string(e.line);
        const auto s = scenes.find(e.scene_id);
        if (s == scenes.end() || !s->second.gt.count(e.im_id))
            throw PreconditionError(who + ": scene " + std::to_string(e.scene_id) + " image " +
                                    std::to_string(e.im_id) + " is not in the dataset");
        require_model(e.obj_id, who);
        slots[{e.scene_id, e.im_id, e.obj_id}].push_back(&e);
    }

    // greedy matching
    std::map<std::tuple<int, int, std::size_t>, const Estimate*> match;
    std::size_t unmatched = 0;
    for (auto& [key, ests] : slots) {
        const auto [sid, im, obj] = key;
        const auto& entries = scenes.at(sid).gt.at(im);
        std::vector<std::size_t> gts;
        for (std::size_t g = 0; g < entries.size(); ++g)
            if (entries[g].obj_id == obj) gts.push_back(g);
        std::stable_sort(ests.begin(), ests.end(), [](const Estimate* a, const Estimate* b) {
            return a->score > b->score || (a->score == b->score && a->line < b->line);
        });
        if (ests.size() > gts.size()) {
            unmatched += ests.size() - gts.size();
            ests.resize(gts.size());
        }
        const ObjectModel& model = models.at(obj);
        std::vector<bool> taken(gts.size(), false);
        for (const Estimate* e : ests) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_j = gts.size();
            for (std::size_t j = 0; j < gts.size(); ++j) {
                if (taken[j]) continue;
                const double d = mssd(model.mesh->vertices, e->pose, entries[gts[j]].pose, model.symmetries);
                if (best_j == gts.size() || d < best) {
                    best = d;
                    best_j = j;
                }
            }
            taken[best_j] = true;
            match[{sid, im, gts[best_j]}] = e;
        }
    }

    std::vector<std::optional<PoseErrorReport>> reports(targets.size());
    std::vector<std::size_t> matched_idx;
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (match.count({targets[i].scene_id, targets[i].im_id, targets[i].gt_index})) matched_idx.push_back(i);
    parallel_for(matched_idx.size(), [&](std::size_t m) {
        const auto& t = targets[matched_idx[m]];
        const auto& s = scenes.at(t.scene_id);
        const Estimate* e = match.at({t.scene_id, t.im_id, t.gt_index});
        const std::string who = s.dir.string() + ": image " + std::to_string(t.im_id);
        const CameraIntrinsics k = intrinsics_for(s, t.im_id, who);
        const Pose& gt = s.gt.at(t.im_id)[t.gt_index].pose;
        std::optional<DepthMap> test;
        if (cfg.use_scene_depth) {
            char name[32];
            std::snprintf(name, sizeof name, "%06d.png", t.im_id);
            test = read_depth_png(s.dir / "depth" / name, s.cams.at(t.im_id).depth_scale);
            if (test->width != k.width || test->height != k.height)
                throw PreconditionError(who + ": depth image size does not match the camera");
        }
        reports[matched_idx[m]] =
            evaluate_pose(models.at(t.obj_id), e->pose, gt, k, cfg.grid, test ? &*test : nullptr);
    });

    DatasetSummary out;
    out.estimates = results.size();
    out.unmatched_estimates = unmatched;
    out.overall = summarize(reports, cfg.grid);
    std::map<int, std::vector<std::optional<PoseErrorReport>>> by_obj;
    std::map<std::string, std::vector<std::optional<PoseErrorReport>>> by_cat;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        by_obj[targets[i].obj_id].push_back(reports[i]);
        if (categories) by_cat[category_name(categories->at(targets[i].obj_id))].push_back(reports[i]);
    }
    for (const auto& [id, r] : by_obj) out.per_object[id] = summarize(r, cfg.grid);
    for (const auto& [c, r] : by_cat) out.per_category[c] = summarize(r, cfg.grid);
    return out;
}

// ---------------------------------------------------------------------------
// Summary output
// ---------------------------------------------------------------------------

inline Json recall_summary_to_json(const RecallSummary& s) {
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return {{"AR", s.ar},
            {"AD(0.1)", s.ad_recall},
            {"MSPD", s.ar_mspd},
            {"MSSD", s.ar_mssd},
            {"reS(10)", s.re_recall},
            {"teS(10)", s.te_recall},
            {"VSD", s.ar_vsd},
            {"targets", s.targets},
            {"matched", s.matched},
            {"mean_errors",
             {{"vsd_at_smallest_tau", opt(s.mean_vsd)},
              {"mssd_mm", opt(s.mean_mssd)},
              {"mspd_px", opt(s.mean_mspd)},
              {"add_mm", opt(s.mean_add)},
              {"adi_mm", opt(s.mean_adi)},
              {"reS_deg", opt(s.mean_re)},
              {"teS_mm", opt(s.mean_te)}}}};
}

inline Json summary_to_json(const DatasetSummary& s) {
    Json objects = Json::object(), cats = Json::object();
    for (const auto& [id, r] : s.per_object) objects[std::to_string(id)] = recall_summary_to_json(r);
    for (const auto& [c, r] : s.per_category) cats[c] = recall_summary_to_json(r);
    return {{"overall", recall_summary_to_json(s.overall)},
            {"objects", objects},
            {"categories", cats},
            {"estimates", s.estimates},
            {"unmatched_estimates", s.unmatched_estimates}};
}

/// Table-style CSV: one row per category, then per object, then overall.
inline std::string summary_to_csv(const DatasetSummary& s) {
    std::ostringstream out;
    out << "group,AR,AD(0.1),MSPD,MSSD,reS(10),teS(10),VSD,reS_mean_deg,teS_mean_mm\n";
    auto row = [&](const std::string& name, const RecallSummary& r) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.ar, r.ad_recall, r.ar_mspd,
                      r.ar_mssd, r.re_recall, r.te_recall, r.ar_vsd);
        out << name << ',' << buf << ',';
        if (r.mean_re) out << bop_detail::format_double(*r.mean_re);
        out << ',';
        if (r.mean_te) out << bop_detail::format_double(*r.mean_te);
        out << '\n';
    };
    for (const auto& [c, r] : s.per_category) row(c, r);
    for (const auto& [id, r] : s.per_object) row("obj_" + std::to_string(id), r);
    row("overall", s.overall);
    return out.str();
}

}  // namespace posekit
