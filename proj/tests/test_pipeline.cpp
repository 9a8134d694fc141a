#include "q4dg/pipeline.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace q4dg;

namespace {

ModelConfig micro_config() {
    ModelConfig c;
    c.dim = 8;
    c.heads = 2;
    c.layers = 1;
    c.window = 3;
    c.dec_c0 = 6;
    c.dec_c1 = 5;
    c.dense_dim = 4;
    return c;
}

SceneConfig micro_scene() {
    SceneConfig c;
    c.views = 1;
    c.times = 3;
    c.height = 16;
    c.width = 16;
    c.setting = CameraSetting::MonoDynamic;
    c.query_count = 4;
    return c;
}

std::map<std::string, std::uint64_t> all_checksums(const ParamStore& ps) {
    std::map<std::string, std::uint64_t> sums;
    for (const auto& g : kParamGroups) sums[g] = ps.checksum(g + ".");
    return sums;
}

}  // namespace

TEST_CASE("stage-1 freeze contract: only trunk and the active head change") {
    Model model(micro_config(), 1);
    auto scene = generate_scene(micro_scene(), 5);
    const auto before = all_checksums(model.params());

    TrainOptions opt;
    opt.seed = 2;
    train(model, {scene}, make_stage1_plan(Task::Depth, 3), opt);
    const auto after = all_checksums(model.params());
    CHECK(after.at("head_cam") == before.at("head_cam"));
    CHECK(after.at("head_track") == before.at("head_track"));
    CHECK(after.at("head_dense") != before.at("head_dense"));
    CHECK(after.at("encoder") != before.at("encoder"));
    CHECK(after.at("cvgf") != before.at("cvgf"));
    CHECK(after.at("ctlf") != before.at("ctlf"));
}

TEST_CASE("stage-2 freeze contract: trunk bit-identical, heads move") {
    Model model(micro_config(), 3);
    auto scene = generate_scene(micro_scene(), 5);
    const auto before = all_checksums(model.params());

    TrainOptions opt;
    opt.seed = 4;
    train(model, {scene}, make_stage2_plan(3), opt);
    const auto after = all_checksums(model.params());
    CHECK(after.at("encoder") == before.at("encoder"));
    CHECK(after.at("cvgf") == before.at("cvgf"));
    CHECK(after.at("ctlf") == before.at("ctlf"));
    CHECK(after.at("head_cam") != before.at("head_cam"));
    CHECK(after.at("head_dense") != before.at("head_dense"));
    CHECK(after.at("head_track") != before.at("head_track"));
}

TEST_CASE("zero steps leave every parameter untouched") {
    Model model(micro_config(), 7);
    auto scene = generate_scene(micro_scene(), 5);
    const auto before = all_checksums(model.params());
    TrainOptions opt;
    train(model, {scene}, make_stage2_plan(0), opt);
    CHECK(all_checksums(model.params()) == before);
}

TEST_CASE("all-zero loss weights with zero weight decay: heads bit-identical") {
    Model model(micro_config(), 9);
    auto scene = generate_scene(micro_scene(), 5);
    const auto before = all_checksums(model.params());

    LossWeights zero;
    zero.cam = zero.depth = zero.mask = zero.point = zero.track = 0.0;
    TrainOptions opt;
    opt.weight_decay = 0.0;
    train(model, {scene}, make_stage2_plan(3, zero), opt);
    CHECK(all_checksums(model.params()) == before);
}

TEST_CASE("training is deterministic given the seed") {
    auto scene = generate_scene(micro_scene(), 5);
    auto run = [&] {
        Model model(micro_config(), 11);
        TrainOptions opt;
        opt.seed = 12;
        train(model, {scene}, make_stage1_plan(Task::Pose, 5), opt);
        return all_checksums(model.params());
    };
    CHECK(run() == run());
}

TEST_CASE("single-scene depth run halves the depth loss over 500 steps") {
    namespace fs = std::filesystem;
    const auto log = (fs::temp_directory_path() / "q4dg_depth_log.csv").string();
    fs::remove(log);

    Model model(micro_config(), 13);
    auto scene = generate_scene(micro_scene(), 5);
    TrainOptions opt;
    opt.seed = 14;
    opt.log_path = log;
    train(model, {scene}, make_stage1_plan(Task::Depth, 500), opt);

    std::ifstream is(log);
    std::string line;
    std::getline(is, line);
    CHECK(line == "stage,task,step,cam,depth,mask,point,track,total,lr");
    double first = -1, last = -1;
    while (std::getline(is, line)) {
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const auto c3 = line.find(',', c2 + 1), c4 = line.find(',', c3 + 1);
        const auto c5 = line.find(',', c4 + 1);
        const double depth = std::stod(line.substr(c4 + 1, c5 - c4 - 1));
        if (first < 0) first = depth;
        last = depth;
    }
    REQUIRE(first > 0);
    CHECK(last < 0.5 * first);
    fs::remove(log);
}

TEST_CASE("grid truth re-references points into the sampled window's first frame") {
    SceneConfig sc;
    sc.views = 2;
    sc.times = 4;
    sc.height = 16;
    sc.width = 16;
    sc.setting = CameraSetting::MultiStatic;
    sc.query_count = 4;
    auto scene = generate_scene(sc, 21);

    // subset: views {1}, window t in {2, 3}; new reference = frame (v=1, t=2)
    auto gt = make_grid_truth(scene, {1}, {2, 3});
    REQUIRE(gt.pinholes.size() == 2);
    CHECK_FALSE(gt.has_tracks);  // view 0 absent

    const Pinhole& old_ref = scene.gt_pinholes[0];
    const Pinhole& new_ref = scene.gt_pinholes[scene.frame_index(1, 2)];
    for (std::size_t fi = 0; fi < 2; ++fi) {
        const std::size_t src = scene.frame_index(1, 2 + fi);
        CHECK(gt.depth[fi] == scene.gt_depth[src]);  // depth is per-frame, unchanged
        for (std::size_t p = 0; p < 16 * 16; p += 7) {
            if (!scene.validity[src][p]) continue;
            const Vec3 old_pt(scene.gt_points[src][p * 3], scene.gt_points[src][p * 3 + 1],
                              scene.gt_points[src][p * 3 + 2]);
            const Vec3 expect = new_ref.to_camera(old_ref.to_world(old_pt));
            for (int c = 0; c < 3; ++c)
                CHECK(gt.points[fi][p * 3 + static_cast<std::size_t>(c)] ==
                      Catch::Approx(expect[c]).margin(1e-12));
        }
    }

    // with view 0 included, tracks are available and re-referenced the same way
    auto gt0 = make_grid_truth(scene, {0, 1}, {1, 2});
    CHECK(gt0.has_tracks);
    const Pinhole& ref01 = scene.gt_pinholes[scene.frame_index(0, 1)];
    for (std::size_t i = 0; i < gt0.tracks.query_count(); ++i) {
        const auto& p3 = scene.gt_tracks.tracks_3d[1][i];
        const Vec3 expect = ref01.to_camera(old_ref.to_world(Vec3(p3[0], p3[1], p3[2])));
        for (int c = 0; c < 3; ++c)
            CHECK(gt0.tracks.tracks_3d[0][i][static_cast<std::size_t>(c)] ==
                  Catch::Approx(expect[c]).margin(1e-12));
        // 2D tracks and queries come from the window's frames in view 0
        CHECK(gt0.tracks.tracks_2d[0][i] == scene.gt_tracks.tracks_2d[1][i]);
        CHECK(gt0.queries[i] == scene.gt_tracks.tracks_2d[1][i]);
    }
}

TEST_CASE("full model forward produces type-invariant-satisfying outputs") {
    Model model(micro_config(), 31);
    auto scene = generate_scene(micro_scene(), 5);
    GridLayout layout;
    layout.views = 1;
    layout.times = 3;
    layout.setting = CameraSetting::MonoDynamic;
    auto grid = model.encode(scene.frames, layout);
    auto gt = full_grid_truth(scene);
    auto out = model.forward(grid, gt.queries, ForwardRequest{});

    REQUIRE(out.cameras.defined());
    CHECK(out.cameras.rows() == 3);
    for (std::size_t f = 0; f < 3; ++f) {
        double n2 = 0;
        for (int c = 0; c < 4; ++c) {
            const double q = out.cameras.value()[f * 9 + static_cast<std::size_t>(c)];
            n2 += q * q;
        }
        CHECK(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-9));
        CHECK(out.cameras.value()[f * 9] >= 0.0);
        CHECK(out.cameras.value()[f * 9 + 7] > 0.0);
        CHECK(out.cameras.value()[f * 9 + 8] > 0.0);
    }
    REQUIRE(out.dense.depth.size() == 3);
    for (const auto& d : out.dense.depth)
        for (double v : d.value()) CHECK(v > 0.0);
    for (const auto& m : out.dense.dyn_mask)
        for (double v : m.value()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    REQUIRE(out.tracks.tracks_2d.size() == 3);
    CHECK(out.tracks.tracks_2d[0].rows() == gt.queries.size());
}

TEST_CASE("evaluation produces a complete metrics table") {
    Model model(micro_config(), 33);
    auto scene = generate_scene(micro_scene(), 5);
    auto rep = evaluate_scene(model, scene);
    auto rows = metrics_rows(rep);
    REQUIRE(rows.size() >= 13);
    for (const auto& [name, value] : rows) {
        INFO(name);
        CHECK(std::isfinite(value));
    }

    namespace fs = std::filesystem;
    const auto csv = (fs::temp_directory_path() / "q4dg_metrics_test.csv").string();
    write_metrics_csv(csv, {{"scene_000", rep}});
    std::ifstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "scene,metric,value");
    std::size_t count = 0;
    for (std::string line; std::getline(is, line);) ++count;
    CHECK(count == rows.size());
    fs::remove(csv);
}
