#pragma once

// Synthetic dynamic-scene generator: textured ground plane plus rigid
// textured boxes/spheres rendered by per-pixel ray casting (equivalent to a
// z-buffer at one sample per pixel), with exact camera/depth/mask/point/track
// ground truth. Deterministic given (config, seed).

#include "q4dg/checkpoint.hpp"
#include "q4dg/geometry.hpp"
#include "q4dg/grid.hpp"
#include "q4dg/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

struct SceneConfig {
    std::size_t views = 1;
    std::size_t times = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    CameraSetting setting = CameraSetting::MonoStatic;
    std::size_t object_count = 3;
    double motion_amplitude = 0.5;
    double scene_scale = 1.0;  // uniform world-unit scale; images are invariant
    std::uint64_t texture_seed = 0;
    std::size_t query_count = 16;

    void validate(std::size_t patch_size = 8) const {
        if (setting != CameraSetting::MultiStatic && views != 1)
            throw std::invalid_argument("scene config: monocular settings require V = 1");
        if (views < 1 || times < 1) throw std::invalid_argument("scene config: V, T >= 1");
        if (height % patch_size != 0 || width % patch_size != 0)
            throw std::invalid_argument("scene config: H, W must be divisible by patch size");
        if (motion_amplitude < 0) throw std::invalid_argument("scene config: negative motion");
        if (!(scene_scale > 0)) throw std::invalid_argument("scene config: scene_scale must be > 0");
    }
};

struct SceneSequence {
    SceneConfig config;
    std::uint64_t seed = 0;
    FrameStack frames;
    std::vector<CameraParams> gt_cameras;          // [V*T], frames ordered (v, t)
    std::vector<Pinhole> gt_pinholes;              // same order; render-side cameras
    std::vector<std::vector<double>> gt_depth;     // per frame, H*W
    std::vector<std::vector<double>> gt_mask;      // per frame, H*W in {0,1}
    std::vector<std::vector<double>> gt_points;    // per frame, H*W*3, reference-camera coords
    std::vector<std::vector<std::uint8_t>> validity;  // per frame, H*W
    std::vector<std::vector<int>> object_ids;      // per frame, H*W; -1 ground, -2 miss
    TrackSet gt_tracks;                            // tracked in view 0 across t

    std::size_t frame_count() const { return config.views * config.times; }
    std::size_t frame_index(std::size_t v, std::size_t t) const { return v * config.times + t; }
};

namespace scene_detail {

struct SceneObject {
    enum class Kind { Sphere, Box } kind = Kind::Sphere;
    Vec3 base_center = Vec3::Zero();
    double radius = 0.8;            // sphere radius or box half-extent
    Vec3 half_extent = Vec3::Ones();
    bool dynamic = false;
    Vec3 motion_amp = Vec3::Zero();  // sinusoidal translation amplitude
    Vec3 motion_phase = Vec3::Zero();
    double motion_freq = 1.0;
    std::array<Vec3, 3> tex_freq;    // per-channel texture wave vectors
    std::array<double, 3> tex_phase{};

    Vec3 center_at(double t) const {
        if (!dynamic) return base_center;
        Vec3 c = base_center;
        for (int i = 0; i < 3; ++i)
            c[i] += motion_amp[i] * std::sin(motion_freq * t + motion_phase[i]);
        return c;
    }
};

inline std::array<double, 3> texture_color(const SceneObject& obj, const Vec3& local) {
    std::array<double, 3> rgb;
    for (int ch = 0; ch < 3; ++ch)
        rgb[static_cast<std::size_t>(ch)] =
            0.5 + 0.45 * std::sin(obj.tex_freq[static_cast<std::size_t>(ch)].dot(local) +
                                  obj.tex_phase[static_cast<std::size_t>(ch)]);
    return rgb;
}

struct Hit {
    double s = std::numeric_limits<double>::infinity();  // ray parameter
    int object = -2;                                     // -1 ground, -2 miss
    Vec3 world = Vec3::Zero();
    Vec3 local = Vec3::Zero();  // texture coordinates (object frame)
};

inline std::optional<double> ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
    const Vec3 oc = o - c;
    const double b = oc.dot(d);
    const double q = oc.squaredNorm() - r * r;
    const double disc = b * b - q;
    if (disc < 0) return std::nullopt;
    const double s = -b - std::sqrt(disc);
    if (s <= 1e-9) return std::nullopt;
    return s;
}

inline std::optional<double> ray_box(const Vec3& o, const Vec3& d, const Vec3& c, const Vec3& he) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-12) {
            if (std::abs(o[i] - c[i]) > he[i]) return std::nullopt;
            continue;
        }
        double t1 = (c[i] - he[i] - o[i]) / d[i];
        double t2 = (c[i] + he[i] - o[i]) / d[i];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (tmax < tmin || tmax <= 1e-9) return std::nullopt;
    return tmin > 1e-9 ? tmin : tmax;
}

inline Hit trace(const Vec3& origin, const Vec3& dir, const std::vector<SceneObject>& objects,
                 double time) {
    Hit hit;
    // ground plane z = 0
    if (dir.z() < -1e-12) {
        const double s = -origin.z() / dir.z();
        if (s > 1e-9) {
            hit.s = s;
            hit.object = -1;
            hit.world = origin + s * dir;
            hit.local = hit.world;
        }
    }
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& obj = objects[i];
        const Vec3 c = obj.center_at(time);
        std::optional<double> s;
        if (obj.kind == SceneObject::Kind::Sphere) s = ray_sphere(origin, dir, c, obj.radius);
        else s = ray_box(origin, dir, c, obj.half_extent);
        if (s && *s < hit.s) {
            hit.s = *s;
            hit.object = static_cast<int>(i);
            hit.world = origin + *s * dir;
            hit.local = hit.world - c;
        }
    }
    return hit;
}

inline std::vector<SceneObject> make_objects(const SceneConfig& cfg, Rng& rng) {
    std::vector<SceneObject> objects;
    for (std::size_t i = 0; i < cfg.object_count; ++i) {
        SceneObject obj;
        const double angle = rng.uniform(0, 2 * M_PI);
        const double dist = rng.uniform(0.3, 1.6);
        obj.kind = (i % 3 == 0) ? SceneObject::Kind::Box : SceneObject::Kind::Sphere;
        if (obj.kind == SceneObject::Kind::Sphere) {
            obj.radius = rng.uniform(0.8, 1.2);
            obj.base_center = Vec3(dist * std::cos(angle), dist * std::sin(angle), obj.radius);
        } else {
            obj.half_extent = Vec3(rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9),
                                   rng.uniform(0.4, 0.8));
            obj.base_center = Vec3(dist * std::cos(angle), dist * std::sin(angle),
                                   obj.half_extent.z());
        }
        // spheres move, boxes stay: "a subset of objects" are dynamic
        obj.dynamic = (obj.kind == SceneObject::Kind::Sphere) && cfg.motion_amplitude > 0;
        if (obj.dynamic) {
            obj.motion_amp = Vec3(cfg.motion_amplitude * rng.uniform(0.5, 1.0),
                                  cfg.motion_amplitude * rng.uniform(0.5, 1.0),
                                  cfg.motion_amplitude * rng.uniform(0.0, 0.3));
            obj.motion_phase = Vec3(rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI),
                                    rng.uniform(0, 2 * M_PI));
            obj.motion_freq = rng.uniform(0.5, 1.0);
        }
        for (int ch = 0; ch < 3; ++ch) {
            obj.tex_freq[static_cast<std::size_t>(ch)] =
                Vec3(rng.uniform(2.0, 5.0), rng.uniform(2.0, 5.0), rng.uniform(2.0, 5.0));
            obj.tex_phase[static_cast<std::size_t>(ch)] = rng.uniform(0, 2 * M_PI);
        }
        // uniform world scale: geometry scales by k, texture frequency by 1/k
        // so the rendered images are scale-invariant
        const double k = cfg.scene_scale;
        obj.base_center *= k;
        obj.radius *= k;
        obj.half_extent *= k;
        obj.motion_amp *= k;
        for (auto& f : obj.tex_freq) f /= k;
        objects.push_back(obj);
    }
    return objects;
}

inline Pinhole make_camera(const SceneConfig& cfg, std::size_t v, std::size_t t, Rng& ring) {
    // ring of cameras at height ~4 looking at the scene center; monocular
    // settings use view slot 0 only
    const double base_angle = 2.0 * M_PI * static_cast<double>(v) / std::max<std::size_t>(cfg.views, 1);
    double angle = base_angle;
    const double k = cfg.scene_scale;
    double radius = 5.0 * k, height = 4.0 * k;
    const double tt = static_cast<double>(t) / std::max<double>(1.0, static_cast<double>(cfg.times));
    switch (cfg.setting) {
        case CameraSetting::MonoStatic:
            break;  // fixed camera
        case CameraSetting::MonoDynamic:
            angle += 0.9 * tt + 0.15 * std::sin(2.0 * M_PI * tt);
            height += 0.6 * k * std::sin(M_PI * tt);
            break;
        case CameraSetting::MultiStatic:
            // cameras differ per view and drift smoothly over time
            angle += 0.35 * tt + 0.08 * std::sin(2.0 * M_PI * tt + base_angle);
            height += 0.3 * k * std::sin(M_PI * tt + base_angle);
            break;
    }
    (void)ring;
    Pinhole cam;
    const Vec3 eye(radius * std::cos(angle), radius * std::sin(angle), height);
    const Vec3 target(0, 0, 0.5 * k);
    cam.rotation = look_at(eye, target);
    cam.translation = -cam.rotation * eye;
    cam.fx = static_cast<double>(cfg.width);
    cam.fy = static_cast<double>(cfg.height);
    cam.cx = static_cast<double>(cfg.width) / 2.0;
    cam.cy = static_cast<double>(cfg.height) / 2.0;
    return cam;
}

}  // namespace scene_detail

inline SceneSequence generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SceneSequence seq;
    seq.config = cfg;
    seq.seed = seed;
    Rng rng(seed ^ cfg.texture_seed * 0x9e3779b97f4a7c15ULL);
    auto objects = scene_detail::make_objects(cfg, rng);

    const std::size_t frames = cfg.views * cfg.times;
    seq.frames = FrameStack::zeros(cfg.views, cfg.times, cfg.height, cfg.width);
    seq.gt_cameras.resize(frames);
    seq.gt_pinholes.resize(frames);
    seq.gt_depth.assign(frames, std::vector<double>(cfg.height * cfg.width, 0.0));
    seq.gt_mask.assign(frames, std::vector<double>(cfg.height * cfg.width, 0.0));
    seq.gt_points.assign(frames, std::vector<double>(cfg.height * cfg.width * 3, 0.0));
    seq.validity.assign(frames, std::vector<std::uint8_t>(cfg.height * cfg.width, 0));
    seq.object_ids.assign(frames, std::vector<int>(cfg.height * cfg.width, -2));

    for (std::size_t v = 0; v < cfg.views; ++v)
        for (std::size_t t = 0; t < cfg.times; ++t) {
            const std::size_t f = seq.frame_index(v, t);
            seq.gt_pinholes[f] = scene_detail::make_camera(cfg, v, t, rng);
            seq.gt_cameras[f] =
                CameraParams::from_pinhole(seq.gt_pinholes[f], cfg.width, cfg.height);
        }
    const Pinhole& ref_cam = seq.gt_pinholes[0];

    scene_detail::SceneObject ground;
    ground.tex_freq = {Vec3(3.1, 2.3, 0.7) / cfg.scene_scale, Vec3(1.7, 3.7, 0.9) / cfg.scene_scale,
                       Vec3(2.9, 1.3, 1.1) / cfg.scene_scale};
    ground.tex_phase = {0.0, 1.3, 2.1};

    bool any_hit = false;
    for (std::size_t v = 0; v < cfg.views; ++v)
        for (std::size_t t = 0; t < cfg.times; ++t) {
            const std::size_t f = seq.frame_index(v, t);
            const Pinhole& cam = seq.gt_pinholes[f];
            const Vec3 origin = cam.center();
            const double time = static_cast<double>(t);
            for (std::size_t y = 0; y < cfg.height; ++y)
                for (std::size_t x = 0; x < cfg.width; ++x) {
                    const Vec3 dir_cam((static_cast<double>(x) - cam.cx) / cam.fx,
                                       (static_cast<double>(y) - cam.cy) / cam.fy, 1.0);
                    const Vec3 dir = (cam.rotation.transpose() * dir_cam).normalized();
                    const auto hit = scene_detail::trace(origin, dir, objects, time);
                    const std::size_t p = y * cfg.width + x;
                    seq.object_ids[f][p] = hit.object;
                    if (hit.object == -2) continue;  // sky; invalid pixel
                    any_hit = true;
                    seq.validity[f][p] = 1;
                    const Vec3 pc = cam.to_camera(hit.world);
                    seq.gt_depth[f][p] = pc.z();
                    seq.gt_mask[f][p] =
                        (hit.object >= 0 && objects[static_cast<std::size_t>(hit.object)].dynamic)
                            ? 1.0 : 0.0;
                    const Vec3 pref = ref_cam.to_camera(hit.world);
                    for (int c = 0; c < 3; ++c) seq.gt_points[f][p * 3 + static_cast<std::size_t>(c)] = pref[c];
                    const auto rgb = hit.object >= 0
                        ? scene_detail::texture_color(objects[static_cast<std::size_t>(hit.object)], hit.local)
                        : scene_detail::texture_color(ground, hit.local);
                    for (int c = 0; c < 3; ++c)
                        seq.frames.at(v, t, y, x, static_cast<std::size_t>(c)) = rgb[static_cast<std::size_t>(c)];
                }
        }
    if (!any_hit) throw std::runtime_error("generate_scene: degenerate config, nothing visible");

    // track queries: sampled in frame (v=0, t=0), at least half on dynamic objects
    seq.gt_tracks.tracks_2d.assign(cfg.times, {});
    seq.gt_tracks.tracks_3d.assign(cfg.times, {});
    const std::size_t want_dynamic =
        cfg.motion_amplitude > 0 ? (cfg.query_count + 1) / 2 : 0;
    std::size_t accepted = 0, accepted_dynamic = 0;
    const int max_attempts = 20000;
    for (int attempt = 0; attempt < max_attempts && accepted < cfg.query_count; ++attempt) {
        const std::size_t x = rng.integer(1, cfg.width - 2);
        const std::size_t y = rng.integer(1, cfg.height - 2);
        const std::size_t p = y * cfg.width + x;
        const int obj = seq.object_ids[0][p];
        if (obj == -2) continue;
        const bool dyn = obj >= 0 && objects[static_cast<std::size_t>(obj)].dynamic;
        if (accepted_dynamic < want_dynamic && !dyn) continue;  // fill dynamic quota first

        // anchor: object-local point for dynamic objects, world point otherwise
        const Pinhole& cam0 = seq.gt_pinholes[seq.frame_index(0, 0)];
        const Vec3 world0 = unproject_pixel(static_cast<double>(x), static_cast<double>(y),
                                            seq.gt_depth[0][p], cam0);
        const Vec3 local = dyn ? Vec3(world0 - objects[static_cast<std::size_t>(obj)].center_at(0.0))
                               : world0;

        std::vector<std::array<double, 2>> track2(cfg.times);
        std::vector<std::array<double, 3>> track3(cfg.times);
        bool ok = true;
        for (std::size_t t = 0; t < cfg.times && ok; ++t) {
            const Vec3 world = dyn
                ? Vec3(objects[static_cast<std::size_t>(obj)].center_at(static_cast<double>(t)) + local)
                : local;
            const Pinhole& cam = seq.gt_pinholes[seq.frame_index(0, t)];
            try {
                const auto px = project_point(world, cam);
                const double margin = 1.0;
                if (px.u < margin || px.v < margin || px.u > cfg.width - 1 - margin ||
                    px.v > cfg.height - 1 - margin) { ok = false; break; }
                track2[t] = {px.u, px.v};
                const Vec3 pref = ref_cam.to_camera(world);
                track3[t] = {pref.x(), pref.y(), pref.z()};
            } catch (const std::runtime_error&) { ok = false; }
        }
        if (!ok) continue;
        seq.gt_tracks.queries.push_back({static_cast<double>(x), static_cast<double>(y)});
        for (std::size_t t = 0; t < cfg.times; ++t) {
            seq.gt_tracks.tracks_2d[t].push_back(track2[t]);
            seq.gt_tracks.tracks_3d[t].push_back(track3[t]);
        }
        ++accepted;
        if (dyn) ++accepted_dynamic;
    }
    if (accepted < cfg.query_count)
        throw std::runtime_error("generate_scene: could not place track queries");
    return seq;
}

// ---------------------------------------------------------------------------
// Dataset serialization
// ---------------------------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

// Layout: meta.json (config + queries), arrays.q4dg (frames, cameras, depth,
// mask, points, validity), tracks.csv (frame,query,u,v,x,y,z). Round-trips
// losslessly; the per-pixel object id debug buffer is not persisted.
inline void write_dataset(const SceneSequence& seq, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto& cfg = seq.config;

    nlohmann::json meta;
    meta["format_version"] = kDatasetFormatVersion;
    meta["seed"] = seq.seed;
    meta["views"] = cfg.views;
    meta["times"] = cfg.times;
    meta["height"] = cfg.height;
    meta["width"] = cfg.width;
    meta["setting"] = setting_name(cfg.setting);
    meta["object_count"] = cfg.object_count;
    meta["motion_amplitude"] = cfg.motion_amplitude;
    meta["scene_scale"] = cfg.scene_scale;
    meta["texture_seed"] = cfg.texture_seed;
    meta["query_count"] = cfg.query_count;
    meta["queries"] = nlohmann::json::array();
    for (const auto& q : seq.gt_tracks.queries) meta["queries"].push_back({q[0], q[1]});
    {
        std::ofstream os(fs::path(dir) / "meta.json");
        if (!os) throw std::runtime_error("cannot open for writing: " + dir + "/meta.json");
        os << meta.dump(2) << "\n";
    }

    const std::size_t frames = seq.frame_count();
    const std::size_t hw = cfg.height * cfg.width;
    std::map<std::string, NamedTensor> arrays;
    arrays["frames"] = NamedTensor{{cfg.views, cfg.times, cfg.height, cfg.width, 3},
                                   seq.frames.pixels};
    NamedTensor cams{{frames, 9}, std::vector<double>(frames * 9)};
    for (std::size_t f = 0; f < frames; ++f) {
        const auto g = seq.gt_cameras[f].encode();
        std::copy(g.begin(), g.end(), cams.data.begin() + static_cast<std::ptrdiff_t>(f * 9));
    }
    arrays["cameras"] = std::move(cams);
    auto pack_frames = [&](const std::vector<std::vector<double>>& src, std::size_t ch) {
        NamedTensor t;
        t.shape = ch == 1 ? Shape{cfg.views, cfg.times, cfg.height, cfg.width}
                          : Shape{cfg.views, cfg.times, cfg.height, cfg.width, ch};
        t.data.reserve(frames * hw * ch);
        for (const auto& fr : src) t.data.insert(t.data.end(), fr.begin(), fr.end());
        return t;
    };
    arrays["depth"] = pack_frames(seq.gt_depth, 1);
    arrays["mask"] = pack_frames(seq.gt_mask, 1);
    arrays["points"] = pack_frames(seq.gt_points, 3);
    NamedTensor vt{{cfg.views, cfg.times, cfg.height, cfg.width},
                   std::vector<double>(frames * hw)};
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t p = 0; p < hw; ++p) vt.data[f * hw + p] = seq.validity[f][p] ? 1.0 : 0.0;
    arrays["validity"] = std::move(vt);
    write_container((fs::path(dir) / "arrays.q4dg").string(), arrays);

    std::ofstream csv(fs::path(dir) / "tracks.csv");
    if (!csv) throw std::runtime_error("cannot open for writing: " + dir + "/tracks.csv");
    csv << "frame,query,u,v,x,y,z\n";
    char buf[512];
    for (std::size_t t = 0; t < cfg.times; ++t)
        for (std::size_t i = 0; i < seq.gt_tracks.query_count(); ++i) {
            const auto& p2 = seq.gt_tracks.tracks_2d[t][i];
            const auto& p3 = seq.gt_tracks.tracks_3d[t][i];
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, i,
                          p2[0], p2[1], p3[0], p3[1], p3[2]);
            csv << buf;
        }
    if (!csv) throw std::runtime_error("write failed: " + dir + "/tracks.csv");
}

inline SceneSequence read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream ms(fs::path(dir) / "meta.json");
    if (!ms) throw std::runtime_error("cannot open: " + dir + "/meta.json");
    nlohmann::json meta;
    try {
        ms >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt dataset: bad meta.json: " + std::string(e.what()));
    }
    if (!meta.contains("format_version") || meta["format_version"].get<int>() != kDatasetFormatVersion)
        throw std::runtime_error("unsupported dataset format version in " + dir);

    SceneSequence seq;
    auto& cfg = seq.config;
    cfg.views = meta.at("views").get<std::size_t>();
    cfg.times = meta.at("times").get<std::size_t>();
    cfg.height = meta.at("height").get<std::size_t>();
    cfg.width = meta.at("width").get<std::size_t>();
    cfg.setting = parse_setting(meta.at("setting").get<std::string>());
    cfg.object_count = meta.at("object_count").get<std::size_t>();
    cfg.motion_amplitude = meta.at("motion_amplitude").get<double>();
    if (meta.contains("scene_scale")) cfg.scene_scale = meta.at("scene_scale").get<double>();
    cfg.texture_seed = meta.at("texture_seed").get<std::uint64_t>();
    cfg.query_count = meta.at("query_count").get<std::size_t>();
    seq.seed = meta.at("seed").get<std::uint64_t>();

    const std::size_t frames = cfg.views * cfg.times;
    const std::size_t hw = cfg.height * cfg.width;
    auto arrays = read_container((fs::path(dir) / "arrays.q4dg").string());
    auto fetch = [&](const char* name, const Shape& want) -> NamedTensor& {
        auto it = arrays.find(name);
        if (it == arrays.end())
            throw std::runtime_error("corrupt dataset: missing array " + std::string(name));
        if (it->second.shape != want)
            throw std::runtime_error("corrupt dataset: bad shape for " + std::string(name));
        return it->second;
    };
    seq.frames = FrameStack::zeros(cfg.views, cfg.times, cfg.height, cfg.width);
    seq.frames.pixels = fetch("frames", {cfg.views, cfg.times, cfg.height, cfg.width, 3}).data;
    const auto& cams = fetch("cameras", {frames, 9});
    seq.gt_cameras.resize(frames);
    seq.gt_pinholes.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        seq.gt_cameras[f] = CameraParams::from_encoding(cams.data.data() + f * 9);
        seq.gt_pinholes[f] = seq.gt_cameras[f].to_pinhole(cfg.width, cfg.height);
    }
    auto unpack = [&](const char* name, std::size_t ch) {
        const Shape want = ch == 1 ? Shape{cfg.views, cfg.times, cfg.height, cfg.width}
                                   : Shape{cfg.views, cfg.times, cfg.height, cfg.width, ch};
        const auto& t = fetch(name, want);
        std::vector<std::vector<double>> out(frames);
        for (std::size_t f = 0; f < frames; ++f)
            out[f].assign(t.data.begin() + static_cast<std::ptrdiff_t>(f * hw * ch),
                          t.data.begin() + static_cast<std::ptrdiff_t>((f + 1) * hw * ch));
        return out;
    };
    seq.gt_depth = unpack("depth", 1);
    seq.gt_mask = unpack("mask", 1);
    seq.gt_points = unpack("points", 3);
    const auto valid = unpack("validity", 1);
    seq.validity.assign(frames, std::vector<std::uint8_t>(hw, 0));
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t p = 0; p < hw; ++p) seq.validity[f][p] = valid[f][p] != 0.0 ? 1 : 0;

    for (const auto& q : meta.at("queries"))
        seq.gt_tracks.queries.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
    const std::size_t nq = seq.gt_tracks.queries.size();
    seq.gt_tracks.tracks_2d.assign(cfg.times, std::vector<std::array<double, 2>>(nq));
    seq.gt_tracks.tracks_3d.assign(cfg.times, std::vector<std::array<double, 3>>(nq));
    std::ifstream csv(fs::path(dir) / "tracks.csv");
    if (!csv) throw std::runtime_error("cannot open: " + dir + "/tracks.csv");
    std::string line;
    std::getline(csv, line);
    if (line != "frame,query,u,v,x,y,z")
        throw std::runtime_error("corrupt dataset: bad tracks.csv header");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::size_t t, i;
        double u, v, x, y, z;
        if (!(ls >> t >> i >> u >> v >> x >> y >> z) || t >= cfg.times || i >= nq)
            throw std::runtime_error("corrupt dataset: bad tracks.csv row");
        seq.gt_tracks.tracks_2d[t][i] = {u, v};
        seq.gt_tracks.tracks_3d[t][i] = {x, y, z};
        ++rows;
    }
    if (rows != cfg.times * nq) throw std::runtime_error("corrupt dataset: tracks.csv row count");
    return seq;
}

}  // namespace q4dg
