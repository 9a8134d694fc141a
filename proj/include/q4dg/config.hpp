#pragma once

// Versioned JSON configuration: model / training / scene sections, all
// optional with desk-scale defaults. CLI flags override file values; the
// fully resolved configuration is serialized next to every output.

#include "q4dg/losses.hpp"
#include "q4dg/model.hpp"
#include "q4dg/pipeline.hpp"
#include "q4dg/scenes.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>

namespace q4dg {

inline constexpr int kConfigSchemaVersion = 1;

struct AppConfig {
    ModelConfig model;
    TrainOptions train;
    LossWeights weights;
    SceneConfig scene;
};

namespace config_detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

}  // namespace config_detail

inline AppConfig parse_config(const nlohmann::json& j) {
    using config_detail::take;
    if (!j.contains("schema_version"))
        throw std::invalid_argument("config: missing schema_version");
    if (j.at("schema_version").get<int>() != kConfigSchemaVersion)
        throw std::invalid_argument("config: unsupported schema_version");
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (key != "schema_version" && key != "model" && key != "train" && key != "scene")
            throw std::invalid_argument("config: unknown section: " + key);
    }

    AppConfig c;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        take(m, "dim", c.model.dim);
        take(m, "heads", c.model.heads);
        take(m, "layers", c.model.layers);
        take(m, "window", c.model.window);
        take(m, "patch_size", c.model.patch_size);
        take(m, "view_capacity", c.model.view_capacity);
        take(m, "time_capacity", c.model.time_capacity);
        take(m, "dec_c0", c.model.dec_c0);
        take(m, "dec_c1", c.model.dec_c1);
        take(m, "dense_dim", c.model.dense_dim);
        take(m, "ctlf_single_kv", c.model.ctlf_single_kv);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        take(t, "lr", c.train.lr);
        take(t, "weight_decay", c.train.weight_decay);
        take(t, "min_views", c.train.policy.min_views);
        take(t, "max_views", c.train.policy.max_views);
        take(t, "min_window", c.train.policy.min_window);
        take(t, "max_window", c.train.policy.max_window);
        take(t, "track_l2", c.weights.track_l2);
        take(t, "lambda_cam", c.weights.cam);
        take(t, "lambda_depth", c.weights.depth);
        take(t, "lambda_mask", c.weights.mask);
        take(t, "lambda_point", c.weights.point);
        take(t, "lambda_track", c.weights.track);
        take(t, "huber_delta", c.weights.huber_delta);
    }
    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        take(s, "views", c.scene.views);
        take(s, "times", c.scene.times);
        take(s, "height", c.scene.height);
        take(s, "width", c.scene.width);
        if (s.contains("setting")) c.scene.setting = parse_setting(s.at("setting").get<std::string>());
        take(s, "object_count", c.scene.object_count);
        take(s, "motion_amplitude", c.scene.motion_amplitude);
        take(s, "scene_scale", c.scene.scene_scale);
        take(s, "texture_seed", c.scene.texture_seed);
        take(s, "query_count", c.scene.query_count);
    }
    return c;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: invalid JSON: " + std::string(e.what()));
    }
    return parse_config(j);
}

inline nlohmann::json resolved_config_json(const AppConfig& c) {
    nlohmann::json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["model"] = {{"dim", c.model.dim},
                  {"heads", c.model.heads},
                  {"layers", c.model.layers},
                  {"window", c.model.window},
                  {"patch_size", c.model.patch_size},
                  {"view_capacity", c.model.view_capacity},
                  {"time_capacity", c.model.time_capacity},
                  {"dec_c0", c.model.dec_c0},
                  {"dec_c1", c.model.dec_c1},
                  {"dense_dim", c.model.dense_dim},
                  {"ctlf_single_kv", c.model.ctlf_single_kv},
                  {"no_cvgf", c.model.no_cvgf},
                  {"no_ctlf", c.model.no_ctlf},
                  {"no_spatial_mask", c.model.no_spatial_mask},
                  {"no_temporal_mask", c.model.no_temporal_mask}};
    j["train"] = {{"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"no_avg", c.train.no_avg},
                  {"min_views", c.train.policy.min_views},
                  {"max_views", c.train.policy.max_views},
                  {"min_window", c.train.policy.min_window},
                  {"max_window", c.train.policy.max_window},
                  {"track_l2", c.weights.track_l2},
                  {"lambda_cam", c.weights.cam},
                  {"lambda_depth", c.weights.depth},
                  {"lambda_mask", c.weights.mask},
                  {"lambda_point", c.weights.point},
                  {"lambda_track", c.weights.track},
                  {"huber_delta", c.weights.huber_delta}};
    j["scene"] = {{"views", c.scene.views},
                  {"times", c.scene.times},
                  {"height", c.scene.height},
                  {"width", c.scene.width},
                  {"setting", setting_name(c.scene.setting)},
                  {"object_count", c.scene.object_count},
                  {"motion_amplitude", c.scene.motion_amplitude},
                  {"scene_scale", c.scene.scene_scale},
                  {"texture_seed", c.scene.texture_seed},
                  {"query_count", c.scene.query_count}};
    return j;
}

inline void write_resolved_config(const AppConfig& c, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(std::filesystem::path(dir) / "resolved_config.json");
    if (!os) throw std::runtime_error("cannot open for writing: " + dir + "/resolved_config.json");
    os << resolved_config_json(c).dump(2) << "\n";
}

}  // namespace q4dg
