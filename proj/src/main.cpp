// Command-line entry point: data generation, staged training, evaluation,
// inference, and attention-mask inspection.

#include "q4dg/checkpoint.hpp"
#include "q4dg/config.hpp"
#include "q4dg/grid.hpp"
#include "q4dg/model.hpp"
#include "q4dg/pipeline.hpp"
#include "q4dg/scenes.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace q4dg;

namespace {

std::size_t worker_count() {
    if (const char* env = std::getenv("Q4DG_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return 1;
}

AppConfig load_optional_config(const std::string& path) {
    return path.empty() ? AppConfig{} : load_config(path);
}

// A dataset directory is either one scene (meta.json present) or a directory
// of scene subdirectories.
std::vector<std::pair<std::string, SceneSequence>> load_scenes(const std::string& dir) {
    std::vector<std::pair<std::string, SceneSequence>> out;
    if (fs::exists(fs::path(dir) / "meta.json")) {
        out.emplace_back(fs::path(dir).filename().string(), read_dataset(dir));
        return out;
    }
    std::vector<fs::path> subdirs;
    if (fs::is_directory(dir))
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
                subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& p : subdirs) out.emplace_back(p.filename().string(), read_dataset(p.string()));
    if (out.empty()) throw std::runtime_error("no datasets found under " + dir);
    return out;
}

struct AblationFlags {
    bool no_cvgf = false, no_ctlf = false;
    bool no_spatial_mask = false, no_temporal_mask = false;

    void add_to(CLI::App* cmd) {
        cmd->add_flag("--no-cvgf", no_cvgf, "Bypass cross-view global fusion (identity)");
        cmd->add_flag("--no-ctlf", no_ctlf, "Bypass cross-time local fusion (identity)");
        cmd->add_flag("--no-spatial-mask", no_spatial_mask, "Replace the spatial mask with all-true");
        cmd->add_flag("--no-temporal-mask", no_temporal_mask,
                      "Replace the temporal mask with all-true");
    }
    void apply(ModelConfig& m) const {
        m.no_cvgf = no_cvgf;
        m.no_ctlf = no_ctlf;
        m.no_spatial_mask = no_spatial_mask;
        m.no_temporal_mask = no_temporal_mask;
    }
};

void run_gen_data(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
                  std::size_t count) {
    AppConfig cfg = load_optional_config(config_path);
    cfg.scene.validate(cfg.model.patch_size);
    fs::create_directories(out_dir);
    write_resolved_config(cfg, out_dir);

    auto generate_one = [&](std::size_t k) {
        const SceneSequence seq = generate_scene(cfg.scene, seed + k);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%03zu", k);
        write_dataset(seq, (fs::path(out_dir) / name).string());
    };
    const std::size_t workers = std::min(worker_count(), count);
    if (workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) generate_one(k);
    } else {
        std::vector<std::future<void>> jobs;
        for (std::size_t k = 0; k < count; ++k)
            jobs.push_back(std::async(std::launch::async, generate_one, k));
        for (auto& j : jobs) j.get();
    }
}

void run_train(const std::string& config_path, const std::string& data_dir, int stage,
               const std::string& task_str, std::size_t steps, const std::string& ckpt,
               std::uint64_t seed, double lr_override, bool no_avg, bool single_stage,
               bool track_l2, const AblationFlags& ablation) {
    AppConfig cfg = load_optional_config(config_path);
    ablation.apply(cfg.model);
    cfg.train.no_avg = no_avg;
    cfg.train.seed = seed;
    if (lr_override > 0) cfg.train.lr = lr_override;
    if (track_l2) cfg.weights.track_l2 = true;

    auto named = load_scenes(data_dir);
    std::vector<SceneSequence> scenes;
    scenes.reserve(named.size());
    for (auto& [name, s] : named) scenes.push_back(std::move(s));

    Model model(cfg.model, seed);
    if (fs::exists(ckpt)) load_params(ckpt, model.params());

    const fs::path ckpt_dir = fs::path(ckpt).has_parent_path() ? fs::path(ckpt).parent_path()
                                                               : fs::path(".");
    fs::create_directories(ckpt_dir);
    write_resolved_config(cfg, ckpt_dir.string());
    cfg.train.log_path = (ckpt_dir / "train_log.csv").string();

    StagePlan plan;
    if (single_stage) plan = make_single_stage_plan(steps, cfg.weights);
    else if (stage == 1) plan = make_stage1_plan(parse_task(task_str), steps, cfg.weights);
    else if (stage == 2) plan = make_stage2_plan(steps, cfg.weights);
    else throw std::invalid_argument("stage must be 1 or 2");

    train(model, scenes, plan, cfg.train);
    save_params(ckpt, model.params());
}

void run_eval(const std::string& config_path, const std::string& ckpt, const std::string& data_dir,
              const std::string& out_csv, bool align_disparity, const AblationFlags& ablation) {
    AppConfig cfg = load_optional_config(config_path);
    ablation.apply(cfg.model);
    Model model(cfg.model, 0);
    load_params(ckpt, model.params());

    const auto named = load_scenes(data_dir);
    std::vector<std::pair<std::string, MetricsReport>> reports(named.size());
    const std::size_t workers = std::min(worker_count(), named.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < named.size(); ++i)
            reports[i] = {named[i].first,
                          evaluate_scene(model, named[i].second, align_disparity)};
    } else {
        // forward over frozen parameters is thread-safe; ordered reduction
        std::vector<std::future<MetricsReport>> jobs;
        for (const auto& [name, scene] : named)
            jobs.push_back(std::async(std::launch::async, [&model, &scene, align_disparity] {
                return evaluate_scene(model, scene, align_disparity);
            }));
        for (std::size_t i = 0; i < named.size(); ++i)
            reports[i] = {named[i].first, jobs[i].get()};
    }
    if (fs::path(out_csv).has_parent_path())
        write_resolved_config(cfg, fs::path(out_csv).parent_path().string());
    write_metrics_csv(out_csv, reports);
}

void run_infer(const std::string& config_path, const std::string& ckpt,
               const std::string& data_dir, const std::string& out_dir,
               const AblationFlags& ablation) {
    AppConfig cfg = load_optional_config(config_path);
    ablation.apply(cfg.model);
    Model model(cfg.model, 0);
    load_params(ckpt, model.params());
    fs::create_directories(out_dir);
    write_resolved_config(cfg, out_dir);

    for (const auto& [name, seq] : load_scenes(data_dir)) {
        const auto& sc = seq.config;
        GridLayout layout;
        layout.views = sc.views;
        layout.times = sc.times;
        layout.setting = sc.setting;
        const GridTruth gt = full_grid_truth(seq);
        const auto out = model.forward(model.encode(seq.frames, layout), gt.queries);

        const std::size_t frames = sc.views * sc.times;
        std::map<std::string, NamedTensor> pred;
        pred["cameras"] = NamedTensor{{frames, 9}, out.cameras.value()};
        auto pack = [&](const std::vector<Tensor>& maps, std::size_t ch) {
            NamedTensor t;
            t.shape = ch == 1 ? Shape{sc.views, sc.times, sc.height, sc.width}
                              : Shape{sc.views, sc.times, sc.height, sc.width, ch};
            for (const auto& m : maps) t.data.insert(t.data.end(), m.value().begin(), m.value().end());
            return t;
        };
        pred["depth"] = pack(out.dense.depth, 1);
        pred["mask"] = pack(out.dense.dyn_mask, 1);
        pred["points"] = pack(out.dense.point_map, 3);

        const fs::path scene_dir = fs::path(out_dir) / name;
        fs::create_directories(scene_dir);
        write_container((scene_dir / "predictions.q4dg").string(), pred);

        std::ofstream csv(scene_dir / "tracks.csv");
        if (!csv) throw std::runtime_error("cannot open for writing: " + scene_dir.string());
        csv << "frame,query,u,v,x,y,z\n";
        char buf[512];
        for (std::size_t t = 0; t < sc.times; ++t) {
            const auto& uv = out.tracks.tracks_2d[t].value();
            const auto& xyz = out.tracks.tracks_3d[t].value();
            for (std::size_t i = 0; i < gt.queries.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, i,
                              uv[i * 2], uv[i * 2 + 1], xyz[i * 3], xyz[i * 3 + 1], xyz[i * 3 + 2]);
                csv << buf;
            }
        }
    }
}

void run_dump_masks(std::size_t views, std::size_t times, std::size_t patches, std::size_t window,
                    const std::string& setting, const std::string& kind, const std::string& out) {
    GridLayout layout;
    layout.views = views;
    layout.times = times;
    layout.patch_rows = patches;
    layout.patch_cols = 1;
    layout.setting = parse_setting(setting);
    if (kind == "spatial") dump_mask_file(build_spatial_mask(layout), out);
    else if (kind == "temporal") dump_mask_file(build_temporal_mask(layout, window), out);
    else throw std::invalid_argument("kind must be spatial or temporal");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatiotemporal geometry model: data generation, training, evaluation"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_config, gd_out;
    std::uint64_t gd_seed = 0;
    std::size_t gd_count = 1;
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic scene datasets");
    gen->add_option("--config", gd_config, "JSON config file");
    gen->add_option("--out", gd_out, "Output directory")->required();
    gen->add_option("--seed", gd_seed, "Base RNG seed (scene k uses seed+k)")->required();
    gen->add_option("--count", gd_count, "Number of scenes");
    gen->callback([&] { run_gen_data(gd_config, gd_out, gd_seed, gd_count); });

    // train
    std::string tr_config, tr_data, tr_task = "all", tr_ckpt;
    int tr_stage = 1;
    std::size_t tr_steps = 0;
    std::uint64_t tr_seed = 0;
    double tr_lr = 0.0;
    bool tr_no_avg = false, tr_single_stage = false, tr_track_l2 = false;
    AblationFlags tr_ablation;
    auto* tr = app.add_subcommand("train", "Train a model stage");
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--stage", tr_stage, "Training stage")->check(CLI::IsMember({1, 2}))->required();
    tr->add_option("--task", tr_task, "Stage-1 task")
        ->check(CLI::IsMember({"pose", "depth", "mask", "point", "track", "all"}));
    tr->add_option("--steps", tr_steps, "Steps (per task in stage 1)")->required();
    tr->add_option("--ckpt", tr_ckpt, "Checkpoint path (loaded if present, saved after)")
        ->required();
    tr->add_option("--seed", tr_seed, "RNG seed")->required();
    tr->add_option("--lr", tr_lr, "Learning-rate override");
    tr->add_flag("--no-avg", tr_no_avg, "Disable random subgrid sampling (full grid)");
    tr->add_flag("--single-stage", tr_single_stage, "Joint training of all groups (ablation)");
    tr->add_flag("--track-l2", tr_track_l2, "Direct L2 tracking loss instead of Chamfer");
    tr_ablation.add_to(tr);
    tr->callback([&] {
        run_train(tr_config, tr_data, tr_stage, tr_task, tr_steps, tr_ckpt, tr_seed, tr_lr,
                  tr_no_avg, tr_single_stage, tr_track_l2, tr_ablation);
    });

    // eval
    std::string ev_config, ev_ckpt, ev_data, ev_out;
    bool ev_disparity = false;
    AblationFlags ev_ablation;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on datasets");
    ev->add_option("--config", ev_config, "JSON config file");
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--out", ev_out, "Output metrics.csv path")->required();
    ev->add_flag("--align-disparity", ev_disparity, "Scale-shift depth alignment in disparity space");
    ev_ablation.add_to(ev);
    ev->callback([&] { run_eval(ev_config, ev_ckpt, ev_data, ev_out, ev_disparity, ev_ablation); });

    // infer
    std::string in_config, in_ckpt, in_data, in_out;
    AblationFlags in_ablation;
    auto* inf = app.add_subcommand("infer", "Run inference, writing predictions");
    inf->add_option("--config", in_config, "JSON config file");
    inf->add_option("--ckpt", in_ckpt, "Checkpoint path")->required();
    inf->add_option("--data", in_data, "Dataset directory")->required();
    inf->add_option("--out", in_out, "Output directory")->required();
    in_ablation.add_to(inf);
    inf->callback([&] { run_infer(in_config, in_ckpt, in_data, in_out, in_ablation); });

    // dump-masks
    std::size_t dm_views = 1, dm_times = 1, dm_patches = 1, dm_window = 1;
    std::string dm_setting, dm_kind, dm_out;
    auto* dm = app.add_subcommand("dump-masks", "Write an attention mask as text");
    dm->add_option("--views", dm_views, "View count V")->required();
    dm->add_option("--times", dm_times, "Time count T")->required();
    dm->add_option("--patches", dm_patches, "Patches per frame P")->required();
    dm->add_option("--window", dm_window, "Temporal window S (odd)")->required();
    dm->add_option("--setting", dm_setting, "Camera setting")
        ->check(CLI::IsMember({"mono-s", "mono-d", "multi-s"}))
        ->required();
    dm->add_option("--kind", dm_kind, "Mask kind")
        ->check(CLI::IsMember({"spatial", "temporal"}))
        ->required();
    dm->add_option("--out", dm_out, "Output file")->required();
    dm->callback(
        [&] { run_dump_masks(dm_views, dm_times, dm_patches, dm_window, dm_setting, dm_kind, dm_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
