#pragma once

// The five task-specific prediction heads: camera parameters, depth, dynamic
// mask, point map, and 2D/3D point tracks.

#include "q4dg/fusion.hpp"
#include "q4dg/geometry.hpp"
#include "q4dg/grid.hpp"
#include "q4dg/nn.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

struct HeadsConfig {
    std::size_t dim = 64;        // token dim d
    std::size_t heads = 4;
    std::size_t patch_size = 8;
    std::size_t dec_c0 = 32;     // decoder channels after token projection
    std::size_t dec_c1 = 16;
    std::size_t dense_dim = 16;  // d' of the full-resolution feature maps
    double softargmax_temp = 0.1;
};

// ---------------------------------------------------------------------------
// Small tensor-geometry helpers
// ---------------------------------------------------------------------------

// Rotation matrix [3x3] from a normalized quaternion row [1 x 4] (w,x,y,z).
// Entries are linear in the quaternion outer product, realized as a constant
// 16x9 combination matrix so gradients flow through plain matmuls.
inline Tensor rotation_from_quat(const Tensor& q) {
    if (q.rows() != 1 || q.cols() != 4) throw std::invalid_argument("rotation_from_quat: want [1x4]");
    static const Tensor comb = [] {
        std::vector<double> c(16 * 9, 0.0);
        auto set = [&](std::size_t o, std::size_t r, double w) { c[o * 9 + r] = w; };
        const std::size_t ww = 0, wx = 1, wy = 2, wz = 3, xx = 5, xy = 6, xz = 7, yy = 10,
                          yz = 11, zz = 15;
        (void)ww;
        set(yy, 0, -2); set(zz, 0, -2);            // R00 = 1 - 2yy - 2zz
        set(xy, 1, 2);  set(wz, 1, -2);            // R01 = 2xy - 2wz
        set(xz, 2, 2);  set(wy, 2, 2);             // R02 = 2xz + 2wy
        set(xy, 3, 2);  set(wz, 3, 2);             // R10 = 2xy + 2wz
        set(xx, 4, -2); set(zz, 4, -2);            // R11 = 1 - 2xx - 2zz
        set(yz, 5, 2);  set(wx, 5, -2);            // R12 = 2yz - 2wx
        set(xz, 6, 2);  set(wy, 6, -2);            // R20 = 2xz - 2wy
        set(yz, 7, 2);  set(wx, 7, 2);             // R21 = 2yz + 2wx
        set(xx, 8, -2); set(yy, 8, -2);            // R22 = 1 - 2xx - 2yy
        return Tensor::from({16, 9}, std::move(c));
    }();
    static const Tensor ident = Tensor::from({1, 9}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor outer = reshape(matmul(q, q, true, false), {1, 16});
    return reshape(add(matmul(outer, comb), ident), {3, 3});
}

// ---------------------------------------------------------------------------
// Camera head
// ---------------------------------------------------------------------------

struct CameraHeadLayer {
    LayerNormWeights ln_attn, ln_ff;
    AttentionWeights attn;
    FeedForwardWeights ff;
};

// Mean-pools patch tokens into per-frame descriptors, runs two self-attention
// layers over the V*T descriptors, and projects to the 9-value camera
// encoding. Quaternion normalized with canonical sign, focal through softplus.
class CameraHead {
public:
    CameraHead(ParamStore& ps, const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
        for (std::size_t l = 0; l < 2; ++l) {
            const std::string p = "head_cam.layer" + std::to_string(l);
            layers_.push_back(CameraHeadLayer{
                make_layer_norm(ps, p + ".ln_attn", cfg.dim),
                make_layer_norm(ps, p + ".ln_ff", cfg.dim),
                make_attention(ps, p + ".attn", cfg.dim, rng),
                make_feed_forward(ps, p + ".ff", cfg.dim, 4, rng),
            });
        }
        ln_out_ = make_layer_norm(ps, "head_cam.ln_out", cfg_.dim);
        out_ = make_linear(ps, "head_cam.out", cfg_.dim, 9, rng);
    }

    // Returns the activated encodings, [V*T x 9], frames ordered (v, t).
    Tensor forward(const Tensor& f_spatial, const GridLayout& layout) const {
        const std::size_t frames = layout.views * layout.times;
        const std::size_t p = layout.patches();
        std::vector<Tensor> descriptors;
        descriptors.reserve(frames);
        for (std::size_t f = 0; f < frames; ++f)
            descriptors.push_back(mean_rows(slice_rows(f_spatial, f * p, p)));
        Tensor x = concat_rows(descriptors);
        const MaskBits full(frames * frames, 1);
        for (const auto& layer : layers_) {
            x = add(x, self_attention(apply_layer_norm(x, layer.ln_attn), full, cfg_.heads,
                                      layer.attn));
            x = add(x, apply_feed_forward(apply_layer_norm(x, layer.ln_ff), layer.ff));
        }
        Tensor raw = apply_linear(apply_layer_norm(x, ln_out_), out_);
        return activate(raw);
    }

    // quaternion normalized to unit length with non-negative scalar part,
    // translation passed through, focal through softplus
    static Tensor activate(const Tensor& raw) {
        Tensor qraw = slice_cols(raw, 0, 4);
        Tensor inv_norm = pow_scalar(add_const(row_sum(mul(qraw, qraw)), 1e-12), -0.5);
        std::vector<double> signs(raw.rows());
        for (std::size_t i = 0; i < raw.rows(); ++i)
            signs[i] = raw.value()[i * raw.cols()] < 0.0 ? -1.0 : 1.0;
        Tensor sign = Tensor::from({raw.rows(), 1}, std::move(signs));
        Tensor quat = scale_rows(qraw, mul(inv_norm, sign));
        Tensor trans = slice_cols(raw, 4, 3);
        Tensor focal = softplus(slice_cols(raw, 7, 2));
        return concat_cols({quat, trans, focal});
    }

private:
    HeadsConfig cfg_;
    std::vector<CameraHeadLayer> layers_;
    LayerNormWeights ln_out_;
    LinearWeights out_;
};

// ---------------------------------------------------------------------------
// Dense decoder + pixel heads
// ---------------------------------------------------------------------------

inline RowMixPlan nearest_upsample_plan(std::size_t h, std::size_t w) {
    RowMixPlan plan(4 * h * w);
    for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t x = 0; x < 2 * w; ++x)
            plan[y * 2 * w + x] = {{(y / 2) * w + (x / 2), 1.0}};
    return plan;
}

// Align-corners-false bilinear x2, matching the sampling grid used elsewhere.
inline RowMixPlan bilinear_upsample_plan(std::size_t h, std::size_t w) {
    RowMixPlan plan(4 * h * w);
    for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t x = 0; x < 2 * w; ++x) {
            const double sy = (static_cast<double>(y) + 0.5) / 2.0 - 0.5;
            const double sx = (static_cast<double>(x) + 0.5) / 2.0 - 0.5;
            const double cy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            const double cx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            const std::size_t y0 = std::min(static_cast<std::size_t>(cy), h - (h > 1 ? 2 : 1));
            const std::size_t x0 = std::min(static_cast<std::size_t>(cx), w - (w > 1 ? 2 : 1));
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fy = cy - static_cast<double>(y0), fx = cx - static_cast<double>(x0);
            auto& cell = plan[y * 2 * w + x];
            cell = {{y0 * w + x0, (1 - fy) * (1 - fx)},
                    {y0 * w + x1, (1 - fy) * fx},
                    {y1 * w + x0, fy * (1 - fx)},
                    {y1 * w + x1, fy * fx}};
        }
    return plan;
}

// Per-frame full-resolution feature maps, one [H*W x d'] tensor per (v,t).
struct DenseFeatures {
    std::size_t height = 0, width = 0;
    std::vector<Tensor> maps;  // frames ordered (v, t)
};

struct DensePrediction {
    std::size_t height = 0, width = 0;
    std::vector<Tensor> depth;      // [H*W x 1] > 0
    std::vector<Tensor> dyn_mask;   // [H*W x 1] in (0,1)
    std::vector<Tensor> point_map;  // [H*W x 3], reference-camera coords
};

// Channel-concatenates F_S || F_T per token, reshapes to the patch map, and
// upsamples through two learned stride-2 stages plus a final bilinear stage
// with convolutional refinement (patch size 8 = three doublings).
class DenseDecoder {
public:
    DenseDecoder(ParamStore& ps, const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.patch_size != 8)
            throw std::invalid_argument("dense decoder: upsampling chain assumes patch size 8");
        lin_in_ = make_linear(ps, "head_dense.in", 2 * cfg.dim, cfg.dec_c0, rng);
        conv1_ = make_linear(ps, "head_dense.conv1", 9 * cfg.dec_c0, cfg.dec_c0, rng);
        conv2_ = make_linear(ps, "head_dense.conv2", 9 * cfg.dec_c0, cfg.dec_c1, rng);
        conv3_ = make_linear(ps, "head_dense.conv3", 9 * cfg.dec_c1, cfg.dense_dim, rng);
        depth_ = make_linear(ps, "head_dense.depth", cfg.dense_dim, 1, rng);
        mask_ = make_linear(ps, "head_dense.mask", cfg.dense_dim, 1, rng);
        point_ = make_linear(ps, "head_dense.point", cfg.dense_dim, 3, rng);
    }

    DenseFeatures decode(const Tensor& f_spatial, const Tensor& f_temporal,
                         const GridLayout& layout) const {
        const std::size_t pr = layout.patch_rows, pc = layout.patch_cols;
        const std::size_t p = layout.patches();
        const std::size_t frames = layout.views * layout.times;
        Tensor both = concat_cols({f_spatial, f_temporal});

        const RowMixPlan up1 = nearest_upsample_plan(pr, pc);
        const RowMixPlan up2 = nearest_upsample_plan(2 * pr, 2 * pc);
        const RowMixPlan up3 = bilinear_upsample_plan(4 * pr, 4 * pc);

        DenseFeatures out;
        out.height = 8 * pr;
        out.width = 8 * pc;
        out.maps.reserve(frames);
        for (std::size_t f = 0; f < frames; ++f) {
            Tensor x = apply_linear(slice_rows(both, f * p, p), lin_in_);  // [P x c0]
            x = row_mix(x, up1);
            x = gelu(apply_linear(im2col3x3(x, 2 * pr, 2 * pc), conv1_));
            x = row_mix(x, up2);
            x = gelu(apply_linear(im2col3x3(x, 4 * pr, 4 * pc), conv2_));
            x = row_mix(x, up3);
            x = apply_linear(im2col3x3(x, 8 * pr, 8 * pc), conv3_);
            out.maps.push_back(x);
        }
        return out;
    }

    DensePrediction predict(const DenseFeatures& feats) const {
        DensePrediction out;
        out.height = feats.height;
        out.width = feats.width;
        for (const auto& m : feats.maps) {
            out.depth.push_back(softplus(apply_linear(m, depth_)));
            out.dyn_mask.push_back(sigmoid(apply_linear(m, mask_)));
            out.point_map.push_back(apply_linear(m, point_));
        }
        return out;
    }

private:
    HeadsConfig cfg_;
    LinearWeights lin_in_, conv1_, conv2_, conv3_, depth_, mask_, point_;
};

// ---------------------------------------------------------------------------
// Tracking head
// ---------------------------------------------------------------------------

// Differentiable track tensors: per time step, [N x 2] pixels and [N x 3]
// reference-frame coordinates.
struct TrackOutputs {
    std::vector<std::array<double, 2>> queries;
    std::vector<Tensor> tracks_2d;  // [T][N x 2]
    std::vector<Tensor> tracks_3d;  // [T][N x 3]
};

// Coarse-to-fine correlation tracker: soft-argmax over the source-view token
// correlation map, plus a residual offset soft-argmaxed over a local
// 3x3-token neighborhood of the dense feature map, then back-projected
// through the predicted depth and cameras.
class TrackingHead {
public:
    TrackingHead(ParamStore& ps, const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
        proj_coarse_ = make_linear(ps, "head_track.coarse", cfg.dim, cfg.dim, rng);
        proj_fine_ = make_linear(ps, "head_track.fine", cfg.dense_dim, cfg.dense_dim, rng);
    }

    TrackOutputs forward(const Tensor& f_temporal, const DenseFeatures& dense,
                         const DensePrediction& pred, const Tensor& cameras,
                         const GridLayout& layout,
                         const std::vector<std::array<double, 2>>& queries,
                         std::size_t src_view, std::size_t src_time) const {
        const std::size_t pr = layout.patch_rows, pc = layout.patch_cols, p = layout.patches();
        const std::size_t ps = cfg_.patch_size;
        const std::size_t h = dense.height, w = dense.width;
        const double temp = cfg_.softargmax_temp;
        for (const auto& q : queries)
            if (q[0] < 0 || q[1] < 0 || q[0] > static_cast<double>(w - 1) ||
                q[1] > static_cast<double>(h - 1))
                throw std::invalid_argument("tracking: query outside source frame bounds");

        // token centers in pixel coordinates, [P x 2]
        std::vector<double> centers(p * 2);
        for (std::size_t r = 0; r < pr; ++r)
            for (std::size_t c = 0; c < pc; ++c) {
                centers[(r * pc + c) * 2 + 0] = (static_cast<double>(c) + 0.5) * ps - 0.5;
                centers[(r * pc + c) * 2 + 1] = (static_cast<double>(r) + 0.5) * ps - 0.5;
            }
        const Tensor centers_t = Tensor::from({p, 2}, centers);

        auto frame_index = [&](std::size_t t) { return src_view * layout.times + t; };
        auto frame_tokens = [&](std::size_t t) {
            return slice_rows(f_temporal, frame_index(t) * p, p);
        };

        const Tensor src_tokens = frame_tokens(src_time);
        const Tensor src_dense = dense.maps[frame_index(src_time)];

        // reference camera: first input frame of the grid
        const Tensor cam_ref = slice_rows(cameras, 0, 1);
        const Tensor rot_ref = rotation_from_quat(slice_cols(cam_ref, 0, 4));
        const Tensor t_ref = slice_cols(cam_ref, 4, 3);

        TrackOutputs out;
        out.queries = queries;
        out.tracks_2d.resize(layout.times);
        out.tracks_3d.resize(layout.times);

        std::vector<std::vector<Tensor>> uv_rows(layout.times), xyz_rows(layout.times);

        // per-frame projected token keys are query-independent; hoist them
        std::vector<Tensor> keys_coarse;
        keys_coarse.reserve(layout.times);
        for (std::size_t t = 0; t < layout.times; ++t)
            keys_coarse.push_back(apply_linear(frame_tokens(t), proj_coarse_));

        for (const auto& query : queries) {
            // query features: token map + dense map of the source frame
            std::vector<double> tok_pos = {(query[0] + 0.5) / ps - 0.5, (query[1] + 0.5) / ps - 0.5};
            Tensor qc = apply_linear(
                bilinear_sample(src_tokens, pr, pc, Tensor::from({1, 2}, tok_pos)), proj_coarse_);
            Tensor qf = apply_linear(
                bilinear_sample(src_dense, h, w, Tensor::from({1, 2}, {query[0], query[1]})),
                proj_fine_);

            for (std::size_t t = 0; t < layout.times; ++t) {
                // coarse: correlate against all tokens of the target frame
                const Tensor& kc = keys_coarse[t];
                Tensor scores = scale(matmul(qc, kc, false, true),
                                      1.0 / (std::sqrt(static_cast<double>(cfg_.dim)) * temp));
                Tensor coarse_uv = matmul(softmax_rows(scores), centers_t);  // [1 x 2]

                // fine: 3x3-token pixel neighborhood around the coarse position
                const double cu = std::clamp(coarse_uv.value()[0], 0.0, static_cast<double>(w - 1));
                const double cv = std::clamp(coarse_uv.value()[1], 0.0, static_cast<double>(h - 1));
                const long tc = static_cast<long>(cu / static_cast<double>(ps));
                const long tr = static_cast<long>(cv / static_cast<double>(ps));
                const long x0 = std::max(0L, (tc - 1) * static_cast<long>(ps));
                const long x1 = std::min(static_cast<long>(w) - 1, (tc + 2) * static_cast<long>(ps) - 1);
                const long y0 = std::max(0L, (tr - 1) * static_cast<long>(ps));
                const long y1 = std::min(static_cast<long>(h) - 1, (tr + 2) * static_cast<long>(ps) - 1);
                // window coordinates relative to the coarse token's center, so
                // the fine stage is a residual refinement added to coarse_uv:
                // the coarse correlation stays on the gradient path and can
                // learn to move the window onto the target
                const double wcx = (static_cast<double>(tc) + 0.5) * static_cast<double>(ps) - 0.5;
                const double wcy = (static_cast<double>(tr) + 0.5) * static_cast<double>(ps) - 0.5;
                std::vector<std::size_t> win;
                std::vector<double> win_rel;
                for (long y = y0; y <= y1; ++y)
                    for (long x = x0; x <= x1; ++x) {
                        win.push_back(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x));
                        win_rel.push_back(static_cast<double>(x) - wcx);
                        win_rel.push_back(static_cast<double>(y) - wcy);
                    }
                Tensor kf = apply_linear(gather_rows(dense.maps[frame_index(t)], win), proj_fine_);
                Tensor fscores = scale(matmul(qf, kf, false, true),
                                       1.0 / (std::sqrt(static_cast<double>(cfg_.dense_dim)) * temp));
                Tensor fine_uv = add(coarse_uv, matmul(softmax_rows(fscores),
                                                       Tensor::from({win.size(), 2}, win_rel)));

                uv_rows[t].push_back(fine_uv);

                // back-project through predicted depth and cameras into the
                // reference frame
                Tensor cam = slice_rows(cameras, frame_index(t), 1);
                Tensor rot = rotation_from_quat(slice_cols(cam, 0, 4));
                Tensor trans = slice_cols(cam, 4, 3);
                Tensor fx = scale(slice_cols(cam, 7, 1), static_cast<double>(w));
                Tensor fy = scale(slice_cols(cam, 8, 1), static_cast<double>(h));
                Tensor depth_at = bilinear_sample(pred.depth[frame_index(t)], h, w, fine_uv);
                Tensor px = add_const(slice_cols(fine_uv, 0, 1), -static_cast<double>(w) / 2.0);
                Tensor py = add_const(slice_cols(fine_uv, 1, 1), -static_cast<double>(h) / 2.0);
                Tensor cam_xyz = concat_cols({mul(depth_at, div(px, fx)),
                                              mul(depth_at, div(py, fy)), depth_at});
                Tensor world = matmul(sub(cam_xyz, trans), rot);
                Tensor ref_xyz = add(matmul(world, rot_ref, false, true), t_ref);
                xyz_rows[t].push_back(ref_xyz);
            }
        }
        for (std::size_t t = 0; t < layout.times; ++t) {
            out.tracks_2d[t] = concat_rows(uv_rows[t]);
            out.tracks_3d[t] = concat_rows(xyz_rows[t]);
        }
        return out;
    }

private:
    HeadsConfig cfg_;
    LinearWeights proj_coarse_, proj_fine_;
};

}  // namespace q4dg
