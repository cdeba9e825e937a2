#include "cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "posekit/posekit.hpp"

namespace posekit::cli {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kCommands = {"keypoints", "heatmap", "depth", "gen", "eval"};

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
    for (std::size_t i = 1; i < args.size(); ++i)
        if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    return false;
}

std::optional<std::string> flag_value(const std::vector<std::string>& args, const std::string& flag) {
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind(flag + "=", 0) == 0) return args[i].substr(flag.size() + 1);
    }
    return std::nullopt;
}

std::string config_scalar(const Json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
    throw ParseError("config: value of '" + key + "' must be a string, number or boolean");
}

/// Inserts options from --config that are not given on the command line.
/// Global keys go before the subcommand, {"<command>": {...}} keys after it.
std::vector<std::string> apply_config(const std::vector<std::string>& args) {
    const auto path = flag_value(args, "--config");
    if (!path) return args;
    const Json cfg = bop_detail::read_json_file(*path);
    if (!cfg.is_object()) throw ParseError(*path + ": config must be a JSON object");
    std::size_t sub = args.size();
    for (std::size_t i = 1; i < args.size() && sub == args.size(); ++i)
        if (std::find(kCommands.begin(), kCommands.end(), args[i]) != kCommands.end()) sub = i;

    auto expand = [&](const Json& obj, std::vector<std::string>& into) {
        for (const auto& [key, v] : obj.items()) {
            if (std::find(kCommands.begin(), kCommands.end(), key) != kCommands.end() || key == "config") continue;
            const std::string flag = "--" + key;
            if (has_flag(args, flag) || v.is_null()) continue;
            if (v.is_boolean()) {
                if (v.get<bool>()) into.push_back(flag);
                continue;
            }
            into.push_back(flag);
            into.push_back(config_scalar(v, key));
        }
    };
    std::vector<std::string> global, local;
    expand(cfg, global);
    if (sub < args.size() && cfg.contains(args[sub])) {
        const Json& c = cfg.at(args[sub]);
        if (!c.is_object()) throw ParseError(*path + ": '" + args[sub] + "' must be an object");
        expand(c, local);
    }
    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(std::min(sub, args.size())));
    out.insert(out.end(), global.begin(), global.end());
    if (sub < args.size()) {
        out.push_back(args[sub]);
        out.insert(out.end(), local.begin(), local.end());
        out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, args.end());
    }
    return out;
}

CameraIntrinsics load_camera_json(const std::string& path) { return read_camera(path); }

Pose load_pose_json(const std::string& path) {
    const Json j = bop_detail::read_json_file(path);
    const auto r = bop_detail::numbers(j, "cam_R_m2c", 9, path);
    const auto t = bop_detail::numbers(j, "cam_t_m2c", 3, path);
    return {bop_detail::rotation_from(r, path), {t[0], t[1], t[2]}};
}

struct Manifest {
    explicit Manifest(std::string cmd) : command(std::move(cmd)) {}

    std::string command;
    Json config = Json::object();
    std::uint64_t seed = 0;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const fs::path& path) const {
        Json digests = Json::object();
        for (const auto& p : inputs) digests[p.string()] = sha256_file(p);
        Json outs = Json::array();
        for (const auto& p : outputs) outs.push_back(p.string());
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bop_detail::write_json_file(path, {{"command", command},
                                           {"config", config},
                                           {"seed", seed},
                                           {"tool_version", kVersion},
                                           {"input_sha256", digests},
                                           {"outputs", outs},
                                           {"wall_time_s", wall}});
    }
};

fs::path sibling_manifest(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

struct KeypointsArgs {
    std::string model, out, camera, pose;
    std::size_t samples = 10000;
    std::size_t k = 16;
    double tau_rel = 0.6;
    std::optional<double> nms_radius;
    std::optional<double> eps;
    double density_factor = 2.0;
    std::size_t max_kp = 64;
    std::uint64_t seed = 0;
};

int cmd_keypoints(const KeypointsArgs& a, std::ostream& out) {
    if (a.camera.empty() != a.pose.empty())
        throw CLI::ValidationError("--camera and --pose must be given together");
    Manifest m{"keypoints"};
    m.seed = a.seed;
    m.inputs.push_back(a.model);
    const TriMesh mesh = load_mesh(a.model);
    KeypointConfig cfg;
    cfg.samples = a.samples;
    cfg.k = a.k;
    cfg.tau_rel = a.tau_rel;
    cfg.nms_radius = a.nms_radius;
    cfg.max_count = a.max_kp;
    cfg.density_radius_factor = a.density_factor;
    cfg.seed = a.seed;
    std::optional<ViewSpec> view;
    if (!a.camera.empty()) {
        view = ViewSpec{load_camera_json(a.camera), load_pose_json(a.pose), a.eps, {}};
        m.inputs.push_back(a.camera);
        m.inputs.push_back(a.pose);
    }
    const KeypointResult full = extract_keypoints(mesh, cfg);
    std::optional<KeypointResult> visible;
    if (view) visible = extract_keypoints(mesh, cfg, view);

    const fs::path out_path = a.out;
    ensure_parent(out_path);
    bop_detail::write_json_file(out_path, keypoints_to_json(full.keypoints));
    m.outputs.push_back(out_path);
    if (visible) {
        const fs::path vis_path = out_path.parent_path() / (out_path.stem().string() + "_visible.json");
        bop_detail::write_json_file(vis_path, keypoints_to_json(visible->keypoints));
        m.outputs.push_back(vis_path);
        out << visible->keypoints.size() << " visible keypoints -> " << vis_path.string() << "\n";
    }
    m.config = {{"model", a.model},
                {"samples", a.samples},
                {"k", a.k},
                {"tau-rel", a.tau_rel},
                {"nms-radius", full.nms_radius},
                {"density-radius", full.density_radius},
                {"density-factor", a.density_factor},
                {"max-kp", a.max_kp},
                {"seed", a.seed},
                {"camera", a.camera.empty() ? Json(nullptr) : Json(a.camera)},
                {"pose", a.pose.empty() ? Json(nullptr) : Json(a.pose)},
                {"eps", a.eps ? Json(*a.eps) : Json(nullptr)},
                {"out", a.out}};
    m.write(sibling_manifest(out_path));
    out << full.keypoints.size() << " keypoints -> " << out_path.string() << "\n";
    return kOk;
}

struct HeatmapArgs {
    std::string keypoints, camera, pose, out;
    std::string size = "64x64";
    double sigma = 2.0;
    std::string combine = "max";
};

std::pair<int, int> parse_size(const std::string& s) {
    int w = 0, h = 0;
    char x = 0, extra = 0;
    if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w < 1 ||
        h < 1 || w > 16384 || h > 16384)
        throw CLI::ValidationError("--size", "expected WxH with positive integers, got '" + s + "'");
    return {w, h};
}

int cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
    const auto [w, h] = parse_size(a.size);
    Manifest m{"heatmap"};
    m.inputs = {a.keypoints, a.camera, a.pose};
    const KeypointSet kps = load_keypoints(a.keypoints);
    const CameraIntrinsics k = load_camera_json(a.camera);
    const Pose pose = load_pose_json(a.pose);
    const Heatmap hm = render_heatmap(kps, pose, k.scaled_to(w, h), w, h, a.sigma,
                                      a.combine == "sum" ? HeatmapCombine::SumClamp : HeatmapCombine::Max);
    const fs::path out_path = a.out;
    ensure_parent(out_path);
    write_png16(out_path, heatmap_to_png16(hm));
    m.outputs.push_back(out_path);
    m.config = {{"keypoints", a.keypoints}, {"camera", a.camera}, {"pose", a.pose},
                {"size", a.size}, {"sigma", a.sigma}, {"combine", a.combine}, {"out", a.out}};
    m.write(sibling_manifest(out_path));
    out << "heatmap " << w << "x" << h << " -> " << out_path.string() << "\n";
    return kOk;
}

struct DepthArgs {
    std::string model, camera, pose, out;
    std::string format = "auto";
    double depth_scale = kDefaultDepthScale;
};

int cmd_depth(const DepthArgs& a, std::ostream& out) {
    std::string format = a.format;
    const fs::path out_path = a.out;
    if (format == "auto") {
        const std::string ext = out_path.extension().string();
        if (ext == ".png")
            format = "png";
        else if (ext == ".raw")
            format = "raw";
        else
            throw CLI::ValidationError("--format", "cannot infer format from '" + a.out + "'; use .png or .raw");
    }
    Manifest m{"depth"};
    m.inputs = {a.model, a.camera, a.pose};
    const TriMesh mesh = load_mesh(a.model);
    const CameraIntrinsics k = load_camera_json(a.camera);
    const Pose pose = load_pose_json(a.pose);
    const DepthMap d = rasterize_depth(mesh, pose, k);
    ensure_parent(out_path);
    if (format == "png")
        write_depth_png(out_path, d, a.depth_scale);
    else
        write_depth_raw(out_path, d);
    m.outputs.push_back(out_path);
    m.config = {{"model", a.model}, {"camera", a.camera}, {"pose", a.pose},
                {"format", format}, {"depth-scale", a.depth_scale}, {"out", a.out}};
    m.write(sibling_manifest(out_path));
    out << d.covered_pixels() << " covered pixels -> " << out_path.string() << "\n";
    return kOk;
}

struct GenArgs {
    std::string mode = "miso";
    std::string models, out, camera;
    int scenes = 1;
    int cams = 1;
    std::uint64_t seed = 0;
    int distractors = 0;
    double depth_scale = kDefaultDepthScale;
    std::optional<double> distance_min, distance_max, box_half;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    if (a.distance_min.has_value() != a.distance_max.has_value())
        throw CLI::ValidationError("--distance-min and --distance-max must be given together");
    Manifest m{"gen"};
    m.seed = a.seed;
    const auto objects = load_model_dir(a.models);
    for (const auto& e : fs::directory_iterator(a.models))
        if (e.is_regular_file()) m.inputs.push_back(e.path());
    std::sort(m.inputs.begin(), m.inputs.end());
    GenConfig cfg;
    cfg.mode = *parse_mode(a.mode);
    cfg.scene_count = a.scenes;
    cfg.cameras_per_scene = a.cams;
    cfg.seed = a.seed;
    cfg.distractors = a.distractors;
    cfg.depth_scale = a.depth_scale;
    if (!a.camera.empty()) {
        cfg.camera = load_camera_json(a.camera);
        m.inputs.push_back(a.camera);
    }
    if (a.distance_min) cfg.camera_distance = Interval{*a.distance_min, *a.distance_max};
    if (a.box_half) cfg.placement_box = BoundingBox{{-*a.box_half, -*a.box_half, -*a.box_half},
                                                    {*a.box_half, *a.box_half, *a.box_half}};
    generate_dataset(objects, cfg, a.out);
    const BoundingBox box = effective_placement_box(objects, cfg);
    const Interval dist = effective_camera_distance(objects, cfg);
    m.outputs.push_back(a.out);
    m.config = {{"mode", mode_name(cfg.mode)},
                {"models", a.models},
                {"scenes", a.scenes},
                {"cams", a.cams},
                {"seed", a.seed},
                {"distractors", a.distractors},
                {"depth-scale", a.depth_scale},
                {"camera", camera_to_json(cfg.camera, cfg.depth_scale)},
                {"camera-distance", {dist.lo, dist.hi}},
                {"placement-box", {{"min", bop_detail::to_json(box.min)}, {"max", bop_detail::to_json(box.max)}}},
                {"metallic", {cfg.metallic.lo, cfg.metallic.hi}},
                {"specular", {cfg.specular.lo, cfg.specular.hi}},
                {"roughness", {cfg.roughness.lo, cfg.roughness.hi}},
                {"out", a.out}};
    m.write(fs::path(a.out) / "manifest.json");
    out << a.scenes << " scenes x " << a.cams << " cameras -> " << a.out << "\n";
    return kOk;
}

struct EvalArgs {
    std::string dataset, results, categories, out;
    std::string grid = "bop19";
    bool scene_depth = false;
    double symmetry_step = 1.0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    Manifest m{"eval"};
    const auto results = read_results_csv(a.results);
    m.inputs.push_back(a.results);
    std::optional<CategoryMap> cats;
    if (!a.categories.empty()) {
        cats = read_categories(a.categories);
        m.inputs.push_back(a.categories);
    }
    EvalConfig cfg;
    cfg.grid = BopGrid::bop19();
    cfg.use_scene_depth = a.scene_depth;
    cfg.symmetry_step_degrees = a.symmetry_step;
    const DatasetSummary s = evaluate_dataset(a.dataset, results, cats, cfg);
    const fs::path info = fs::path(a.dataset) / "models" / "models_info.json";
    if (fs::exists(info)) m.inputs.push_back(info);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    Json summary = summary_to_json(s);
    summary["config"] = {{"grid", a.grid}, {"vsd_delta_mm", cfg.grid.vsd_delta},
                         {"symmetry_step_deg", cfg.symmetry_step_degrees},
                         {"depth_test", a.scene_depth ? "scene_depth" : "gt_render"}};
    bop_detail::write_json_file(dir / "summary.json", summary);
    const std::string csv = summary_to_csv(s);
    bop_detail::write_text_file(dir / "summary.csv", csv);
    m.outputs = {dir / "summary.json", dir / "summary.csv"};
    m.config = {{"dataset", a.dataset}, {"results", a.results},
                {"categories", a.categories.empty() ? Json(nullptr) : Json(a.categories)},
                {"grid", a.grid}, {"scene-depth", a.scene_depth},
                {"symmetry-step", a.symmetry_step}, {"out", a.out}};
    m.write(dir / "manifest.json");
    out << csv;
    return kOk;
}

// ---------------------------------------------------------------------------
// error reporting
// ---------------------------------------------------------------------------

void report(std::ostream& err, bool json, int code, const std::string& kind, const std::string& message) {
    if (json)
        err << Json{{"error", {{"exit_code", code}, {"kind", kind}, {"message", message}}}}.dump() << "\n";
    else
        err << "error: " << message << "\n";
}

}  // namespace

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 init failed");
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    char b[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(b, sizeof b, "%02x", md[i]);
        hex += b;
    }
    return hex;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    const bool json_errors = has_flag(raw_args, "--json-errors");
    if (raw_args.empty()) {
        report(err, json_errors, kUsage, "usage", "missing program name");
        return kUsage;
    }
    std::vector<std::string> args;
    try {
        args = apply_config(raw_args);
    } catch (const Error& e) {
        report(err, json_errors, kParse, "parse", e.what());
        return kParse;
    }

    CLI::App app{"posekit: keypoints, depth rendering, synthetic BOP scenes and BOP evaluation", "posekit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    std::string config_path;
    unsigned jobs = 0;
    bool json_flag = false;
    app.add_option("--config", config_path, "JSON file with default option values");
    app.add_option("--jobs", jobs, "Worker threads (0 = all cores)")->check(CLI::Range(0u, 4096u));
    app.add_flag("--json-errors", json_flag, "Report errors as JSON on standard error");

    KeypointsArgs ka;
    auto* kp = app.add_subcommand("keypoints", "Extract geometric keypoints from a PLY model");
    kp->add_option("model", ka.model, "PLY model (mm)")->required();
    kp->add_option("--samples", ka.samples, "Surface samples")->check(CLI::Range(std::size_t{17}, std::size_t{10000000}));
    kp->add_option("--k", ka.k, "Neighborhood size")->check(CLI::Range(std::size_t{4}, std::size_t{1024}));
    kp->add_option("--tau-rel", ka.tau_rel, "Threshold relative to max saliency")->check(CLI::Range(0.0, 1e6));
    kp->add_option("--nms-radius", ka.nms_radius, "Suppression radius in mm (0 disables)")->check(CLI::Range(0.0, 1e12));
    kp->add_option("--density-factor", ka.density_factor, "Density radius / mean sample spacing")
        ->check(CLI::Range(1e-6, 1e6));
    kp->add_option("--max-kp", ka.max_kp, "Maximum keypoints")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
    kp->add_option("--seed", ka.seed, "Sampling seed");
    kp->add_option("--camera", ka.camera, "Camera JSON {fx,fy,cx,cy,width,height}");
    kp->add_option("--pose", ka.pose, "Pose JSON {cam_R_m2c,cam_t_m2c}");
    kp->add_option("--eps", ka.eps, "Visibility tolerance in mm")->check(CLI::Range(1e-12, 1e12));
    kp->add_option("--out", ka.out, "Output keypoint JSON")->required();

    HeatmapArgs ha;
    auto* hm = app.add_subcommand("heatmap", "Render a keypoint heatmap as a 16-bit PNG");
    hm->add_option("keypoints", ha.keypoints, "Keypoint JSON")->required();
    hm->add_option("--camera", ha.camera, "Camera JSON")->required();
    hm->add_option("--pose", ha.pose, "Pose JSON")->required();
    hm->add_option("--size", ha.size, "Heatmap size WxH");
    hm->add_option("--sigma", ha.sigma, "Gaussian sigma in heatmap pixels")->check(CLI::Range(1e-6, 1e6));
    hm->add_option("--combine", ha.combine, "Overlap rule")->check(CLI::IsMember({"max", "sum"}));
    hm->add_option("--out", ha.out, "Output PNG")->required();

    DepthArgs da;
    auto* dp = app.add_subcommand("depth", "Rasterize a depth map of a posed model");
    dp->add_option("model", da.model, "PLY model (mm)")->required();
    dp->add_option("--camera", da.camera, "Camera JSON")->required();
    dp->add_option("--pose", da.pose, "Pose JSON")->required();
    dp->add_option("--format", da.format, "png, raw or auto (from extension)")
        ->check(CLI::IsMember({"auto", "png", "raw"}));
    dp->add_option("--depth-scale", da.depth_scale, "PNG value = depth_mm / scale")->check(CLI::Range(1e-9, 1e9));
    dp->add_option("--out", da.out, "Output file")->required();

    GenArgs ga;
    auto* gn = app.add_subcommand("gen", "Generate a synthetic BOP scene tree");
    gn->add_option("--mode", ga.mode, "miso or simo")->check(CLI::IsMember({"miso", "simo"}));
    gn->add_option("--models", ga.models, "Directory of PLY models")->required();
    gn->add_option("--scenes", ga.scenes, "Scene count")->check(CLI::Range(1, 1000000));
    gn->add_option("--cams", ga.cams, "Cameras per scene")->check(CLI::Range(1, 100000));
    gn->add_option("--seed", ga.seed, "Seed");
    gn->add_option("--distractors", ga.distractors, "Distractor meshes per scene")->check(CLI::Range(0, 100));
    gn->add_option("--depth-scale", ga.depth_scale, "PNG value = depth_mm / scale")->check(CLI::Range(1e-9, 1e9));
    gn->add_option("--camera", ga.camera, "Camera JSON (default 640x480, f=600)");
    gn->add_option("--distance-min", ga.distance_min, "Minimum camera distance in mm")->check(CLI::Range(1e-9, 1e12));
    gn->add_option("--distance-max", ga.distance_max, "Maximum camera distance in mm")->check(CLI::Range(1e-9, 1e12));
    gn->add_option("--box-half", ga.box_half, "Half edge of the placement cube in mm")->check(CLI::Range(0.0, 1e12));
    gn->add_option("--out", ga.out, "Output directory")->required();

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a results CSV against a BOP dataset");
    ev->add_option("--dataset", ea.dataset, "Dataset root")->required();
    ev->add_option("--results", ea.results, "bop19 results CSV")->required();
    ev->add_option("--categories", ea.categories, "categories.json");
    ev->add_option("--grid", ea.grid, "Threshold grid")->check(CLI::IsMember({"bop19"}));
    ev->add_flag("--scene-depth", ea.scene_depth, "Use depth/{im}.png as the VSD test depth");
    ev->add_option("--symmetry-step", ea.symmetry_step, "Continuous symmetry step in degrees")
        ->check(CLI::Range(1e-3, 360.0));
    ev->add_option("--out", ea.out, "Output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kOk;
        }
        report(err, json_errors, kUsage, "usage", e.what());
        return kUsage;
    }

    if (jobs > 0) set_default_jobs(jobs);
    try {
        if (*kp) return cmd_keypoints(ka, out);
        if (*hm) return cmd_heatmap(ha, out);
        if (*dp) return cmd_depth(da, out);
        if (*gn) return cmd_gen(ga, out);
        if (*ev) return cmd_eval(ea, out);
    } catch (const CLI::Error& e) {
        report(err, json_errors, kUsage, "usage", e.what());
        return kUsage;
    } catch (const ParseError& e) {
        report(err, json_errors, kParse, "parse", e.what());
        return kParse;
    } catch (const PreconditionError& e) {
        report(err, json_errors, kPrecondition, "precondition", e.what());
        return kPrecondition;
    } catch (const std::exception& e) {
        report(err, json_errors, kFailure, "failure", e.what());
        return kFailure;
    }
    return kUsage;
}

}  // namespace posekit::cli
