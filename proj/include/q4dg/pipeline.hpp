#pragma once

// Two-stage training orchestration, ground-truth alignment to (sub)sampled
// grids, evaluation over scenes, and the metrics.csv / train_log.csv writers.

#include "q4dg/checkpoint.hpp"
#include "q4dg/losses.hpp"
#include "q4dg/metrics.hpp"
#include "q4dg/model.hpp"
#include "q4dg/optim.hpp"
#include "q4dg/scenes.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

inline const std::vector<std::string> kParamGroups = {"encoder",  "cvgf",       "ctlf",
                                                      "head_cam", "head_dense", "head_track"};

enum class Task { Pose, Depth, Mask, Point, Track, All };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::Pose: return "pose";
        case Task::Depth: return "depth";
        case Task::Mask: return "mask";
        case Task::Point: return "point";
        case Task::Track: return "track";
        case Task::All: return "all";
    }
    throw std::logic_error("bad task");
}

inline Task parse_task(const std::string& s) {
    for (Task t : {Task::Pose, Task::Depth, Task::Mask, Task::Point, Task::Track, Task::All})
        if (s == task_name(t)) return t;
    throw std::invalid_argument("unknown task: " + s);
}

inline std::string task_head_group(Task t) {
    switch (t) {
        case Task::Pose: return "head_cam";
        case Task::Depth:
        case Task::Mask:
        case Task::Point: return "head_dense";
        case Task::Track: return "head_track";
        case Task::All: return "";
    }
    throw std::logic_error("bad task");
}

// ---------------------------------------------------------------------------
// Ground truth aligned to a (possibly subsampled) grid
// ---------------------------------------------------------------------------

// All supervision targets re-expressed for the frame subset (view_ids x
// time_ids): point maps and 3D tracks are transformed into the subset's first
// frame, matching the model's reference-frame convention; track queries are
// the ground-truth 2D positions at the window start (view 0 only).
struct GridTruth {
    std::size_t height = 0, width = 0;
    std::vector<double> cameras;  // F x 9 canonical encodings, (v, t) order
    std::vector<Pinhole> pinholes;
    std::vector<std::vector<double>> depth, mask, points;
    std::vector<std::vector<std::uint8_t>> valid;
    bool has_tracks = false;  // true iff view 0 is in the subset
    std::vector<std::array<double, 2>> queries;
    TrackSet tracks;
};

inline GridTruth make_grid_truth(const SceneSequence& seq,
                                 const std::vector<std::size_t>& view_ids,
                                 const std::vector<std::size_t>& time_ids) {
    if (view_ids.empty() || time_ids.empty())
        throw std::invalid_argument("grid truth: empty frame subset");
    GridTruth gt;
    gt.height = seq.config.height;
    gt.width = seq.config.width;
    const Pinhole& old_ref = seq.gt_pinholes[0];
    const Pinhole& new_ref = seq.gt_pinholes[seq.frame_index(view_ids[0], time_ids[0])];
    auto rereference = [&](const Vec3& p_old) {
        return new_ref.to_camera(old_ref.to_world(p_old));
    };

    for (std::size_t v : view_ids)
        for (std::size_t t : time_ids) {
            const std::size_t f = seq.frame_index(v, t);
            const auto enc = seq.gt_cameras[f].encode();
            gt.cameras.insert(gt.cameras.end(), enc.begin(), enc.end());
            gt.pinholes.push_back(seq.gt_pinholes[f]);
            gt.depth.push_back(seq.gt_depth[f]);
            gt.mask.push_back(seq.gt_mask[f]);
            gt.valid.push_back(seq.validity[f]);
            std::vector<double> pts = seq.gt_points[f];
            for (std::size_t p = 0; p < pts.size(); p += 3) {
                const Vec3 q = rereference(Vec3(pts[p], pts[p + 1], pts[p + 2]));
                pts[p] = q.x(); pts[p + 1] = q.y(); pts[p + 2] = q.z();
            }
            gt.points.push_back(std::move(pts));
        }

    gt.has_tracks = view_ids[0] == 0 && seq.gt_tracks.query_count() > 0;
    if (gt.has_tracks) {
        const std::size_t t0 = time_ids[0];
        gt.queries = seq.gt_tracks.tracks_2d[t0];
        gt.tracks.queries = gt.queries;
        for (std::size_t t : time_ids) {
            gt.tracks.tracks_2d.push_back(seq.gt_tracks.tracks_2d[t]);
            auto pts = seq.gt_tracks.tracks_3d[t];
            for (auto& p : pts) {
                const Vec3 q = rereference(Vec3(p[0], p[1], p[2]));
                p = {q.x(), q.y(), q.z()};
            }
            gt.tracks.tracks_3d.push_back(std::move(pts));
        }
    }
    return gt;
}

inline GridTruth full_grid_truth(const SceneSequence& seq) {
    std::vector<std::size_t> vs(seq.config.views), ts(seq.config.times);
    for (std::size_t i = 0; i < vs.size(); ++i) vs[i] = i;
    for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = i;
    return make_grid_truth(seq, vs, ts);
}

// ---------------------------------------------------------------------------
// Loss evaluation for one task on one grid
// ---------------------------------------------------------------------------

inline Tensor task_loss(const Model& model, const TokenGrid& grid, const GridTruth& gt,
                        Task task, const LossWeights& lw, LossReport* report = nullptr) {
    const bool want_tracks = (task == Task::Track || task == Task::All) && gt.has_tracks;
    ForwardRequest req;
    req.cameras = task == Task::Pose || task == Task::All;
    req.dense = task != Task::Pose;
    const auto out =
        model.forward(grid, want_tracks ? gt.queries : std::vector<std::array<double, 2>>{}, req);

    const std::size_t h = gt.height, w = gt.width;
    Tensor cam, depth, mask, point, track;
    if (task == Task::Pose || task == Task::All) cam = camera_loss(out.cameras, gt.cameras, lw);
    if (task == Task::Depth || task == Task::All)
        depth = depth_loss(out.dense.depth, gt.depth, gt.valid, h, w, lw);
    if (task == Task::Mask || task == Task::All) mask = mask_loss(out.dense.dyn_mask, gt.mask);
    if (task == Task::Point || task == Task::All)
        point = point_loss(out.dense.point_map, gt.points, gt.valid, h, w, lw);
    if (want_tracks) track = tracking_loss(out.tracks, gt.tracks, lw);
    if (task == Task::Track && !gt.has_tracks)
        throw std::runtime_error("task_loss: track task needs view 0 in the sampled grid");

    if (task == Task::All) return total_loss(cam, depth, mask, point, track, lw, report);
    Tensor single;
    switch (task) {
        case Task::Pose: single = cam; break;
        case Task::Depth: single = depth; break;
        case Task::Mask: single = mask; break;
        case Task::Point: single = point; break;
        case Task::Track: single = track; break;
        case Task::All: break;
    }
    if (report) {
        *report = LossReport{};
        const double v = single.item();
        switch (task) {
            case Task::Pose: report->cam = v; break;
            case Task::Depth: report->depth = v; break;
            case Task::Mask: report->mask = v; break;
            case Task::Point: report->point = v; break;
            case Task::Track: report->track = v; break;
            case Task::All: break;
        }
        report->total = v;
    }
    return single;
}

// ---------------------------------------------------------------------------
// Staged training
// ---------------------------------------------------------------------------

struct StagePlan {
    int stage = 1;
    std::vector<Task> tasks;             // trained in order
    std::vector<std::string> trainable;  // group prefixes; stage-1 entries are
                                         // completed per task with its head
    std::vector<std::string> frozen;
    std::size_t steps_per_task = 500;
    LossWeights weights;
};

inline StagePlan make_stage1_plan(Task task, std::size_t steps, LossWeights weights = {}) {
    StagePlan p;
    p.stage = 1;
    p.tasks = task == Task::All
                  ? std::vector<Task>{Task::Pose, Task::Depth, Task::Mask, Task::Point, Task::Track}
                  : std::vector<Task>{task};
    p.trainable = {"encoder", "cvgf", "ctlf"};
    p.steps_per_task = steps;
    p.weights = weights;
    return p;
}

inline StagePlan make_stage2_plan(std::size_t steps, LossWeights weights = {}) {
    StagePlan p;
    p.stage = 2;
    p.tasks = {Task::All};
    p.trainable = {"head_cam", "head_dense", "head_track"};
    p.frozen = {"encoder", "cvgf", "ctlf"};
    p.steps_per_task = steps;
    p.weights = weights;
    return p;
}

// Single-stage ablation: everything trainable against the joint loss.
inline StagePlan make_single_stage_plan(std::size_t steps, LossWeights weights = {}) {
    StagePlan p;
    p.stage = 2;
    p.tasks = {Task::All};
    p.trainable = kParamGroups;
    p.steps_per_task = steps;
    p.weights = weights;
    return p;
}

struct TrainOptions {
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    bool no_avg = false;  // train on the full grid, no subgrid sampling
    SamplePolicy policy;  // clamped to each scene's dims
    std::string log_path;
    std::size_t checksum_every = 100;
};

namespace pipeline_detail {

inline std::vector<Tensor> collect_groups(ParamStore& ps, const std::vector<std::string>& groups) {
    std::vector<Tensor> out;
    for (const auto& g : groups)
        for (auto& t : ps.group(g + ".")) out.push_back(t);
    return out;
}

struct FreezeGuard {
    ParamStore* params = nullptr;
    std::vector<std::pair<std::string, std::uint64_t>> checksums;

    FreezeGuard(ParamStore& ps, const std::vector<std::string>& frozen) : params(&ps) {
        for (const auto& g : frozen) checksums.emplace_back(g, ps.checksum(g + "."));
    }
    void verify() const {
        for (const auto& [g, sum] : checksums)
            if (params->checksum(g + ".") != sum)
                throw std::runtime_error("freeze contract violated: group " + g + " changed");
    }
};

}  // namespace pipeline_detail

// Runs the plan over the scene list (round-robin). Frozen groups are
// checksummed every checksum_every steps and once per task end; any change is
// a hard failure.
inline void train(Model& model, const std::vector<SceneSequence>& scenes, const StagePlan& plan,
                  const TrainOptions& opt) {
    if (scenes.empty()) throw std::invalid_argument("train: no scenes");
    plan.weights.validate();
    Rng rng(opt.seed);

    std::ofstream log;
    if (!opt.log_path.empty()) {
        log.open(opt.log_path, std::ios::app);
        if (!log) throw std::runtime_error("cannot open for writing: " + opt.log_path);
        if (log.tellp() == 0) log << "stage,task,step,cam,depth,mask,point,track,total,lr\n";
    }

    for (Task task : plan.tasks) {
        std::vector<std::string> trainable = plan.trainable;
        std::vector<std::string> frozen = plan.frozen;
        if (plan.stage == 1) {
            trainable.push_back(task_head_group(task));
            for (const auto& g : kParamGroups)
                if (std::find(trainable.begin(), trainable.end(), g) == trainable.end())
                    frozen.push_back(g);
        }
        AdamW adamw(pipeline_detail::collect_groups(model.params(), trainable),
                    AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
        pipeline_detail::FreezeGuard guard(model.params(), frozen);

        for (std::size_t step = 0; step < plan.steps_per_task; ++step) {
            const SceneSequence& scene = scenes[step % scenes.size()];
            GridLayout layout;
            layout.views = scene.config.views;
            layout.times = scene.config.times;
            layout.setting = scene.config.setting;
            TokenGrid grid = model.encode(scene.frames, layout);

            GridTruth gt;
            if (opt.no_avg) {
                gt = full_grid_truth(scene);
            } else {
                SamplePolicy policy = opt.policy;
                policy.max_views = std::min(policy.max_views, layout.views);
                policy.max_window = std::min(policy.max_window, layout.times);
                TokenGrid sub = sample_subgrid(grid, policy, rng);
                // tracking ground truth lives in view 0's image sequence
                while ((task == Task::Track || task == Task::All) && sub.view_ids[0] != 0)
                    sub = sample_subgrid(grid, policy, rng);
                gt = make_grid_truth(scene, sub.view_ids, sub.time_ids);
                grid = std::move(sub);
            }

            model.params().zero_grads();
            LossReport report;
            Tensor loss = task_loss(model, grid, gt, task, plan.weights, &report);
            backward(loss);
            adamw.step();

            if (log) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "%d,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%g\n",
                              plan.stage, task_name(task), step, report.cam, report.depth,
                              report.mask, report.point, report.track, report.total, opt.lr);
                log << buf;
            }
            if ((step + 1) % opt.checksum_every == 0) guard.verify();
        }
        guard.verify();
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsReport {
    PoseMetrics pose;
    DepthMetrics depth;
    SegMetrics seg;
    CloudMetrics cloud;
    std::vector<TrackDeviation> track;  // horizons 12 and 24 (clamped to T-1)
};

inline MetricsReport evaluate_scene(const Model& model, const SceneSequence& seq,
                                    bool align_disparity = false) {
    const auto& cfg = seq.config;
    GridLayout layout;
    layout.views = cfg.views;
    layout.times = cfg.times;
    layout.setting = cfg.setting;
    const TokenGrid grid = model.encode(seq.frames, layout);
    const GridTruth gt = full_grid_truth(seq);
    const auto out = model.forward(grid, gt.queries);

    MetricsReport rep;
    const std::size_t frames = cfg.views * cfg.times;
    const std::size_t hw = cfg.height * cfg.width;

    std::vector<Pinhole> pred_cams(frames);
    for (std::size_t f = 0; f < frames; ++f)
        pred_cams[f] = CameraParams::from_encoding(out.cameras.value().data() + f * 9)
                           .to_pinhole(cfg.width, cfg.height);
    rep.pose = pose_metrics(pred_cams, gt.pinholes);

    std::vector<double> pd, gd;
    std::vector<std::uint8_t> dv;
    std::vector<std::vector<double>> pm(frames);
    std::vector<Vec3> pred_cloud, gt_cloud;
    for (std::size_t f = 0; f < frames; ++f) {
        const auto& dval = out.dense.depth[f].value();
        pd.insert(pd.end(), dval.begin(), dval.end());
        gd.insert(gd.end(), gt.depth[f].begin(), gt.depth[f].end());
        dv.insert(dv.end(), gt.valid[f].begin(), gt.valid[f].end());
        pm[f] = out.dense.dyn_mask[f].value();
        const auto& pts = out.dense.point_map[f].value();
        for (std::size_t p = 0; p < hw; ++p) {
            if (!gt.valid[f][p]) continue;
            pred_cloud.emplace_back(pts[p * 3], pts[p * 3 + 1], pts[p * 3 + 2]);
            gt_cloud.emplace_back(gt.points[f][p * 3], gt.points[f][p * 3 + 1],
                                  gt.points[f][p * 3 + 2]);
        }
    }
    rep.depth = depth_metrics(pd, gd, dv, align_disparity);
    rep.seg = seg_metrics(pm, gt.mask);
    rep.cloud = pointmap_metrics(pred_cloud, gt_cloud);

    std::vector<std::vector<std::array<double, 2>>> pred_tracks(cfg.times);
    for (std::size_t t = 0; t < cfg.times; ++t) {
        const auto& uv = out.tracks.tracks_2d[t].value();
        for (std::size_t i = 0; i < gt.queries.size(); ++i)
            pred_tracks[t].push_back({uv[i * 2], uv[i * 2 + 1]});
    }
    rep.track = tracking_metrics(pred_tracks, seq.gt_tracks);
    return rep;
}

inline std::vector<std::pair<std::string, double>> metrics_rows(const MetricsReport& r) {
    std::vector<std::pair<std::string, double>> rows = {
        {"ate", r.pose.ate},           {"rte", r.pose.rte},
        {"rre", r.pose.rre},           {"abs_rel", r.depth.abs_rel},
        {"delta_125", r.depth.delta_125}, {"j_mean", r.seg.j_mean},
        {"j_recall", r.seg.j_recall},  {"acc_mean", r.cloud.acc_mean},
        {"acc_median", r.cloud.acc_median}, {"comp_mean", r.cloud.comp_mean},
        {"comp_median", r.cloud.comp_median}, {"nc_mean", r.cloud.nc_mean},
        {"nc_median", r.cloud.nc_median},
    };
    for (const auto& d : r.track) {
        const std::string h = std::to_string(d.horizon);
        rows.emplace_back("deviation_px_h" + h, d.mean_px);
        rows.emplace_back("deviation_pct_h" + h, d.percent);
    }
    return rows;
}

// metrics.csv: "scene,metric,value" with full-precision values, deterministic
// row order.
inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, MetricsReport>>& reports) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "scene,metric,value\n";
    char buf[256];
    for (const auto& [scene, rep] : reports)
        for (const auto& [metric, value] : metrics_rows(rep)) {
            std::snprintf(buf, sizeof buf, "%s,%s,%.17g\n", scene.c_str(), metric.c_str(), value);
            os << buf;
        }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace q4dg
