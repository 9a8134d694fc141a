#pragma once

// The five task losses and the weighted multi-task objective.

#include "q4dg/geometry.hpp"
#include "q4dg/heads.hpp"
#include "q4dg/tensor.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

struct LossWeights {
    double cam = 1.0;
    double depth = 0.8;
    double mask = 0.8;
    double point = 0.9;
    double track = 0.1;
    double huber_delta = 1.0;
    bool sum_reduction = false;  // restore literal per-pixel / per-frame sums
    bool track_l2 = false;       // direct per-query L2 instead of Chamfer

    void validate() const {
        if (cam < 0 || depth < 0 || mask < 0 || point < 0 || track < 0)
            throw std::invalid_argument("loss weights must be non-negative");
        if (huber_delta <= 0) throw std::invalid_argument("huber_delta must be > 0");
    }
};

struct LossReport {
    double cam = 0, depth = 0, mask = 0, point = 0, track = 0;
    double total = 0;
};

// ---------------------------------------------------------------------------

// Huber penalty over the 9-component camera encoding residuals. Ground truth
// quaternions must already be canonicalized (non-negative scalar part).
inline Tensor camera_loss(const Tensor& pred, const std::vector<double>& gt,
                          const LossWeights& w) {
    if (pred.cols() != 9) throw std::invalid_argument("camera_loss: pred must be [F x 9]");
    if (gt.size() != pred.numel())
        throw std::invalid_argument("camera_loss: frame index sets do not match");
    Tensor residual = sub(pred, Tensor::from(pred.shape(), gt));
    Tensor loss = huber_sum(residual, w.huber_delta);
    return w.sum_reduction ? loss : scale(loss, 1.0 / static_cast<double>(pred.numel()));
}

namespace loss_detail {

// L2 term over valid pixels plus L1 forward-difference gradient consistency
// over pixel pairs that are both valid. Shared by depth and point losses.
inline Tensor dense_regression_loss(const std::vector<Tensor>& preds,
                                    const std::vector<std::vector<double>>& gts,
                                    const std::vector<std::vector<std::uint8_t>>& valid,
                                    std::size_t h, std::size_t w, std::size_t channels,
                                    bool sum_reduction) {
    if (preds.empty()) throw std::invalid_argument("dense loss: no frames");
    if (gts.size() != preds.size() || valid.size() != preds.size())
        throw std::invalid_argument("dense loss: frame count mismatch");

    double l2_count = 0.0, grad_count = 0.0;
    std::vector<Tensor> l2_terms, grad_terms;
    for (std::size_t f = 0; f < preds.size(); ++f) {
        const Tensor& pred = preds[f];
        if (pred.rows() != h * w || pred.cols() != channels)
            throw std::invalid_argument("dense loss: prediction shape mismatch");
        if (gts[f].size() != pred.numel() || valid[f].size() != h * w)
            throw std::invalid_argument("dense loss: ground-truth shape mismatch");

        std::vector<double> vmask(pred.numel());
        for (std::size_t p = 0; p < h * w; ++p)
            for (std::size_t c = 0; c < channels; ++c)
                vmask[p * channels + c] = valid[f][p] ? 1.0 : 0.0;
        for (std::size_t p = 0; p < h * w; ++p) l2_count += valid[f][p] ? 1.0 : 0.0;

        Tensor diff = sub(pred, Tensor::from(pred.shape(), gts[f]));
        l2_terms.push_back(sum_all(mul_coeff(mul(diff, diff), vmask)));

        // forward differences, horizontal then vertical
        std::vector<std::size_t> from, to;
        std::vector<double> pair_mask;
        auto add_pairs = [&](bool horizontal) {
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    if (horizontal && x + 1 >= w) continue;
                    if (!horizontal && y + 1 >= h) continue;
                    const std::size_t a = y * w + x;
                    const std::size_t b = horizontal ? a + 1 : a + w;
                    from.push_back(a);
                    to.push_back(b);
                    const double m = (valid[f][a] && valid[f][b]) ? 1.0 : 0.0;
                    for (std::size_t c = 0; c < channels; ++c) pair_mask.push_back(m);
                    grad_count += m;
                }
        };
        add_pairs(true);
        add_pairs(false);
        Tensor grad_pred = sub(gather_rows(pred, to), gather_rows(pred, from));
        std::vector<double> grad_gt(from.size() * channels);
        for (std::size_t i = 0; i < from.size(); ++i)
            for (std::size_t c = 0; c < channels; ++c)
                grad_gt[i * channels + c] = gts[f][to[i] * channels + c] - gts[f][from[i] * channels + c];
        Tensor gdiff = sub(grad_pred, Tensor::from({from.size(), channels}, grad_gt));
        grad_terms.push_back(sum_all(mul_coeff(abs_t(gdiff), pair_mask)));
    }
    if (l2_count == 0.0) throw std::invalid_argument("dense loss: zero valid pixels");

    Tensor l2 = l2_terms[0];
    for (std::size_t i = 1; i < l2_terms.size(); ++i) l2 = add(l2, l2_terms[i]);
    Tensor gr = grad_terms[0];
    for (std::size_t i = 1; i < grad_terms.size(); ++i) gr = add(gr, grad_terms[i]);
    if (!sum_reduction) {
        l2 = scale(l2, 1.0 / l2_count);
        if (grad_count > 0.0) gr = scale(gr, 1.0 / grad_count);
    }
    return add(l2, gr);
}

}  // namespace loss_detail

inline Tensor depth_loss(const std::vector<Tensor>& preds,
                         const std::vector<std::vector<double>>& gts,
                         const std::vector<std::vector<std::uint8_t>>& valid, std::size_t h,
                         std::size_t w, const LossWeights& lw) {
    return loss_detail::dense_regression_loss(preds, gts, valid, h, w, 1, lw.sum_reduction);
}

inline Tensor point_loss(const std::vector<Tensor>& preds,
                         const std::vector<std::vector<double>>& gts,
                         const std::vector<std::vector<std::uint8_t>>& valid, std::size_t h,
                         std::size_t w, const LossWeights& lw) {
    return loss_detail::dense_regression_loss(preds, gts, valid, h, w, 3, lw.sum_reduction);
}

// Binary cross-entropy over all frames' pixels; ground truth must be {0,1}.
inline Tensor mask_loss(const std::vector<Tensor>& preds,
                        const std::vector<std::vector<double>>& gts) {
    if (preds.empty()) throw std::invalid_argument("mask_loss: no frames");
    std::vector<Tensor> cat;
    std::vector<double> target;
    for (std::size_t f = 0; f < preds.size(); ++f) {
        cat.push_back(preds[f]);
        target.insert(target.end(), gts[f].begin(), gts[f].end());
    }
    return bce_mean(concat_rows(cat), target);
}

namespace loss_detail {

// Symmetric Chamfer with squared Euclidean distances; nearest neighbours
// chosen on forward values, ties broken by first index.
inline Tensor chamfer(const Tensor& pred, const std::vector<double>& gt, std::size_t dim) {
    const std::size_t np = pred.rows(), ng = gt.size() / dim;
    if (np == 0 || ng == 0) throw std::invalid_argument("chamfer: empty point set");
    auto dist2 = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = pred.value()[i * dim + c] - gt[j * dim + c];
            s += d * d;
        }
        return s;
    };
    // pred -> gt: nearest gt per pred row
    std::vector<double> matched_a(np * dim);
    for (std::size_t i = 0; i < np; ++i) {
        std::size_t best = 0;
        double bd = dist2(i, 0);
        for (std::size_t j = 1; j < ng; ++j) {
            const double d = dist2(i, j);
            if (d < bd) { bd = d; best = j; }
        }
        for (std::size_t c = 0; c < dim; ++c) matched_a[i * dim + c] = gt[best * dim + c];
    }
    Tensor da = sub(pred, Tensor::from({np, dim}, matched_a));
    Tensor term_a = mean_all(row_sum(mul(da, da)));

    // gt -> pred: nearest pred row per gt point
    std::vector<std::size_t> nearest_pred(ng);
    for (std::size_t j = 0; j < ng; ++j) {
        std::size_t best = 0;
        double bd = dist2(0, j);
        for (std::size_t i = 1; i < np; ++i) {
            const double d = dist2(i, j);
            if (d < bd) { bd = d; best = i; }
        }
        nearest_pred[j] = best;
    }
    Tensor db = sub(gather_rows(pred, nearest_pred), Tensor::from({ng, dim}, gt));
    Tensor term_b = mean_all(row_sum(mul(db, db)));
    return add(term_a, term_b);
}

inline std::vector<double> flatten_points2(const std::vector<std::array<double, 2>>& pts) {
    std::vector<double> out;
    out.reserve(pts.size() * 2);
    for (const auto& p : pts) { out.push_back(p[0]); out.push_back(p[1]); }
    return out;
}
inline std::vector<double> flatten_points3(const std::vector<std::array<double, 3>>& pts) {
    std::vector<double> out;
    out.reserve(pts.size() * 3);
    for (const auto& p : pts) { out.push_back(p[0]); out.push_back(p[1]); out.push_back(p[2]); }
    return out;
}

}  // namespace loss_detail

// Per-frame Chamfer between predicted and ground-truth track point sets,
// 2D term plus 3D term. track_l2 switches to direct per-query L2.
inline Tensor tracking_loss(const TrackOutputs& pred, const TrackSet& gt, const LossWeights& lw) {
    const std::size_t frames = pred.tracks_2d.size();
    if (gt.frame_count() != frames)
        throw std::invalid_argument("tracking_loss: frame count mismatch");
    std::vector<Tensor> terms;
    for (std::size_t t = 0; t < frames; ++t) {
        const auto gt2 = loss_detail::flatten_points2(gt.tracks_2d[t]);
        const auto gt3 = loss_detail::flatten_points3(gt.tracks_3d[t]);
        if (lw.track_l2) {
            Tensor d2 = sub(pred.tracks_2d[t], Tensor::from({gt.query_count(), 2}, gt2));
            Tensor d3 = sub(pred.tracks_3d[t], Tensor::from({gt.query_count(), 3}, gt3));
            terms.push_back(add(mean_all(row_sum(mul(d2, d2))), mean_all(row_sum(mul(d3, d3)))));
        } else {
            terms.push_back(add(loss_detail::chamfer(pred.tracks_2d[t], gt2, 2),
                                loss_detail::chamfer(pred.tracks_3d[t], gt3, 3)));
        }
    }
    Tensor acc = terms[0];
    for (std::size_t t = 1; t < terms.size(); ++t) acc = add(acc, terms[t]);
    return lw.sum_reduction ? acc : scale(acc, 1.0 / static_cast<double>(frames));
}

// Weighted multi-task objective. Pass an undefined Tensor for absent tasks.
inline Tensor total_loss(const Tensor& cam, const Tensor& depth, const Tensor& mask,
                         const Tensor& point, const Tensor& track, const LossWeights& w,
                         LossReport* report = nullptr) {
    w.validate();
    Tensor total = Tensor::scalar(0.0);
    LossReport r;
    auto take = [&](const Tensor& t, double lambda, double& slot) {
        if (!t.defined()) return;
        slot = t.item();
        total = add(total, scale(t, lambda));
    };
    take(cam, w.cam, r.cam);
    take(depth, w.depth, r.depth);
    take(mask, w.mask, r.mask);
    take(point, w.point, r.point);
    take(track, w.track, r.track);
    r.total = total.item();
    if (report) *report = r;
    return total;
}

}  // namespace q4dg
