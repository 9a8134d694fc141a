#pragma once

// Full model assembly: patch encoder, the two fusion modules, and the five
// task heads, with ablation bypasses (identity fusion, all-true masks).

#include "q4dg/fusion.hpp"
#include "q4dg/grid.hpp"
#include "q4dg/heads.hpp"
#include "q4dg/params.hpp"
#include "q4dg/rng.hpp"

#include <array>
#include <stdexcept>
#include <vector>

namespace q4dg {

struct ModelConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t layers = 4;   // L
    std::size_t window = 3;   // S, odd
    std::size_t patch_size = 8;
    std::size_t view_capacity = 8;
    std::size_t time_capacity = 32;
    std::size_t dec_c0 = 32;
    std::size_t dec_c1 = 16;
    std::size_t dense_dim = 16;
    bool ctlf_single_kv = false;

    // ablation toggles; checkpoints are layout-compatible across all of them
    bool no_cvgf = false;
    bool no_ctlf = false;
    bool no_spatial_mask = false;
    bool no_temporal_mask = false;

    PatchEmbedConfig patch_embed() const {
        return PatchEmbedConfig{patch_size, dim, view_capacity, time_capacity};
    }
    FusionConfig fusion() const {
        return FusionConfig{layers, window, dim, heads, 4, ctlf_single_kv};
    }
    HeadsConfig head() const {
        return HeadsConfig{dim, heads, patch_size, dec_c0, dec_c1, dense_dim, 0.1};
    }
};

// Which heads to evaluate; tracking implies the dense pathway and cameras.
struct ForwardRequest {
    bool cameras = true;
    bool dense = true;
};

struct ModelOutputs {
    Tensor f_spatial;   // [V*T*P x d]
    Tensor f_temporal;  // [V*T*P x d]
    Tensor cameras;     // [V*T x 9], activated encodings
    DenseFeatures dense_features;
    DensePrediction dense;
    TrackOutputs tracks;  // empty when no queries given
};

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed)
        : cfg_(cfg),
          rng_(seed),
          encoder_(Encoder::create(params_, cfg.patch_embed(), rng_)),
          cvgf_(params_, cfg.fusion(), encoder_, rng_),
          ctlf_(params_, cfg.fusion(), encoder_, rng_),
          head_cam_(params_, cfg.head(), rng_),
          head_dense_(params_, cfg.head(), rng_),
          head_track_(params_, cfg.head(), rng_) {
        cfg.fusion().validate();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Encoder& encoder() const { return encoder_; }

    TokenGrid encode(const FrameStack& frames, const GridLayout& layout) const {
        return build_grid(frames, layout, encoder_);
    }

    ModelOutputs forward(const TokenGrid& grid,
                         const std::vector<std::array<double, 2>>& queries = {},
                         ForwardRequest req = {}) const {
        const GridLayout& lay = grid.layout;
        if (!queries.empty()) req = ForwardRequest{};  // tracking needs everything
        AttentionMask spatial = cfg_.no_spatial_mask ? all_true_mask(lay, MaskKind::Spatial)
                                                     : build_spatial_mask(lay);
        AttentionMask temporal = cfg_.no_temporal_mask
                                     ? all_true_mask(lay, MaskKind::Temporal)
                                     : build_temporal_mask(lay, cfg_.window);

        ModelOutputs out;
        out.f_spatial = cfg_.no_cvgf ? grid.tokens : cvgf_.forward(grid, spatial);
        out.f_temporal = cfg_.no_ctlf ? grid.tokens : ctlf_.forward(grid, temporal);
        if (req.cameras) out.cameras = head_cam_.forward(out.f_spatial, lay);
        if (req.dense) {
            out.dense_features = head_dense_.decode(out.f_spatial, out.f_temporal, lay);
            out.dense = head_dense_.predict(out.dense_features);
        }
        if (!queries.empty())
            out.tracks = head_track_.forward(out.f_temporal, out.dense_features, out.dense,
                                             out.cameras, lay, queries, 0, 0);
        return out;
    }

private:
    AttentionMask all_true_mask(const GridLayout& lay, MaskKind kind) const {
        AttentionMask m;
        m.n = lay.tokens();
        m.kind = kind;
        m.layout = lay;
        m.window = kind == MaskKind::Temporal ? cfg_.window : 0;
        m.bits.assign(m.n * m.n, 1);
        return m;
    }

    ModelConfig cfg_;
    ParamStore params_;
    Rng rng_;
    Encoder encoder_;
    CrossViewGlobalFusion cvgf_;
    CrossTimeLocalFusion ctlf_;
    CameraHead head_cam_;
    DenseDecoder head_dense_;
    TrackingHead head_track_;
};

}  // namespace q4dg
