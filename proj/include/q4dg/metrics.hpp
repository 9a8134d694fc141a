#pragma once

// Evaluation: Umeyama similarity alignment, pose errors (ATE/RTE/RRE),
// aligned depth errors (AbsRel, delta<1.25), dynamic-mask IoU (J_M/J_R),
// point-cloud accuracy/completion/normal-consistency, and track deviation.

#include "q4dg/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace q4dg {

struct Similarity {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Closed-form least-squares similarity fit: minimizes sum ||b_i - (s R a_i + t)||^2.
// det(R) = +1 enforced by sign correction on the smallest singular direction.
inline Similarity umeyama_align(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    const std::size_t n = a.size();
    if (n != b.size()) throw std::invalid_argument("umeyama: point count mismatch");
    if (n < 3) throw std::invalid_argument("umeyama: need at least 3 points");

    Vec3 mu_a = Vec3::Zero(), mu_b = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) { mu_a += a[i]; mu_b += b[i]; }
    mu_a /= static_cast<double>(n);
    mu_b /= static_cast<double>(n);

    Mat3 cov = Mat3::Zero();
    double var_a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (b[i] - mu_b) * (a[i] - mu_a).transpose();
        var_a += (a[i] - mu_a).squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_a /= static_cast<double>(n);

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (var_a < 1e-18 || sv(1) < 1e-12 * std::max(sv(0), 1e-300))
        throw std::runtime_error("umeyama: degenerate point configuration");

    Vec3 s_diag = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s_diag(2) = -1.0;
    Similarity out;
    out.rotation = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
    out.scale = sv.dot(s_diag) / var_a;
    out.translation = mu_b - out.scale * (out.rotation * mu_a);
    return out;
}

struct PoseMetrics {
    double ate = 0.0;  // RMSE of aligned camera centers, scene units
    double rte = 0.0;  // mean relative translation error
    double rre = 0.0;  // mean relative rotation error, degrees
};

// ATE after Umeyama alignment of camera-center trajectories; falls back to
// translation-only alignment for degenerate (e.g. static-camera) trajectories.
// RTE/RRE over frame-to-frame relative poses.
inline PoseMetrics pose_metrics(const std::vector<Pinhole>& pred,
                                const std::vector<Pinhole>& gt) {
    const std::size_t n = pred.size();
    if (n != gt.size()) throw std::invalid_argument("pose_metrics: trajectory length mismatch");
    if (n < 2) throw std::invalid_argument("pose_metrics: need at least 2 frames");

    std::vector<Vec3> pc(n), gc(n);
    for (std::size_t i = 0; i < n; ++i) { pc[i] = pred[i].center(); gc[i] = gt[i].center(); }

    Similarity sim;
    try {
        sim = umeyama_align(pc, gc);
    } catch (const std::exception&) {
        Vec3 mu_p = Vec3::Zero(), mu_g = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) { mu_p += pc[i]; mu_g += gc[i]; }
        sim.translation = (mu_g - mu_p) / static_cast<double>(n);
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += (sim.apply(pc[i]) - gc[i]).squaredNorm();

    PoseMetrics m;
    m.ate = std::sqrt(sq / static_cast<double>(n));
    for (std::size_t i = 0; i + 1 < n; ++i) {
        // relative pose i -> i+1 in world-to-camera convention
        const Mat3 rp = pred[i + 1].rotation * pred[i].rotation.transpose();
        const Mat3 rg = gt[i + 1].rotation * gt[i].rotation.transpose();
        const Vec3 tp = pred[i + 1].translation - rp * pred[i].translation;
        const Vec3 tg = gt[i + 1].translation - rg * gt[i].translation;
        m.rte += (tp - tg).norm();
        m.rre += rotation_angle_deg(rp, rg);
    }
    m.rte /= static_cast<double>(n - 1);
    m.rre /= static_cast<double>(n - 1);
    return m;
}

struct DepthMetrics {
    double abs_rel = 0.0;
    double delta_125 = 0.0;  // inlier ratio, in [0,1]
};

// Least-squares scale+shift fit of prediction to ground truth over valid
// pixels, then AbsRel and the delta<1.25 inlier ratio. align_disparity fits
// the affine map between inverse depths instead.
inline DepthMetrics depth_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                                  const std::vector<std::uint8_t>& valid,
                                  bool align_disparity = false) {
    if (pred.size() != gt.size() || valid.size() != gt.size())
        throw std::invalid_argument("depth_metrics: size mismatch");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!valid[i]) continue;
        if (gt[i] <= 0.0) throw std::invalid_argument("depth_metrics: non-positive gt depth");
        if (align_disparity) {
            if (pred[i] <= 0.0)
                throw std::invalid_argument("depth_metrics: non-positive prediction in disparity mode");
            x.push_back(1.0 / pred[i]);
            y.push_back(1.0 / gt[i]);
        } else {
            x.push_back(pred[i]);
            y.push_back(gt[i]);
        }
    }
    const std::size_t n = x.size();
    if (n == 0) throw std::invalid_argument("depth_metrics: zero valid pixels");

    // normal equations for y ~ a x + b
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) { sx += x[i]; sy += y[i]; sxx += x[i] * x[i]; sxy += x[i] * y[i]; }
    const double det = static_cast<double>(n) * sxx - sx * sx;
    double a = 1.0, b = 0.0;
    if (std::abs(det) > 1e-12 * std::max(1.0, sxx)) {
        a = (static_cast<double>(n) * sxy - sx * sy) / det;
        b = (sxx * sy - sx * sxy) / det;
    } else {
        b = (sy - sx) / static_cast<double>(n);  // constant prediction: shift only
    }

    DepthMetrics m;
    for (std::size_t i = 0; i < n; ++i) {
        double dh = a * x[i] + b;
        double d = y[i];
        if (align_disparity) {
            if (dh <= 0.0) { m.abs_rel += 1.0; continue; }  // unusable pixel, no inlier
            dh = 1.0 / dh;
            d = 1.0 / d;
        }
        m.abs_rel += std::abs(dh - d) / d;
        if (dh > 0.0 && std::max(dh / d, d / dh) < 1.25) m.delta_125 += 1.0;
    }
    m.abs_rel /= static_cast<double>(n);
    m.delta_125 /= static_cast<double>(n);
    return m;
}

struct SegMetrics {
    double j_mean = 0.0;    // mean per-frame IoU
    double j_recall = 0.0;  // fraction of frames with IoU > 0.5
};

inline SegMetrics seg_metrics(const std::vector<std::vector<double>>& pred,
                              const std::vector<std::vector<double>>& gt,
                              double threshold = 0.5) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("seg_metrics: frame count mismatch");
    SegMetrics m;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].size() != gt[f].size())
            throw std::invalid_argument("seg_metrics: frame size mismatch");
        std::size_t inter = 0, uni = 0;
        for (std::size_t p = 0; p < pred[f].size(); ++p) {
            const bool a = pred[f][p] > threshold;
            const bool g = gt[f][p] > threshold;
            inter += (a && g) ? 1 : 0;
            uni += (a || g) ? 1 : 0;
        }
        const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        m.j_mean += iou;
        if (iou > 0.5) m.j_recall += 1.0;
    }
    m.j_mean /= static_cast<double>(pred.size());
    m.j_recall /= static_cast<double>(pred.size());
    return m;
}

struct CloudMetrics {
    double acc_mean = 0.0, acc_median = 0.0;    // pred -> gt nearest distance
    double comp_mean = 0.0, comp_median = 0.0;  // gt -> pred nearest distance
    double nc_mean = 0.0, nc_median = 0.0;      // |cos| between matched normals
};

namespace metric_detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// deterministic stride subsample to cap O(n^2) neighbor searches
inline std::vector<Vec3> subsample(const std::vector<Vec3>& cloud, std::size_t cap) {
    if (cloud.size() <= cap) return cloud;
    std::vector<Vec3> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(cloud[i * cloud.size() / cap]);
    return out;
}

inline std::size_t nearest_index(const Vec3& p, const std::vector<Vec3>& cloud) {
    std::size_t best = 0;
    double bd = (cloud[0] - p).squaredNorm();
    for (std::size_t j = 1; j < cloud.size(); ++j) {
        const double d = (cloud[j] - p).squaredNorm();
        if (d < bd) { bd = d; best = j; }
    }
    return best;
}

// per-point normals from an 8-nearest-neighbor plane fit
inline std::vector<Vec3> estimate_normals(const std::vector<Vec3>& cloud) {
    const std::size_t n = cloud.size();
    if (n < 9)
        throw std::invalid_argument("pointmap metrics: cloud too small for normal estimation");
    std::vector<Vec3> normals(n);
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) dist[j] = {(cloud[j] - cloud[i]).squaredNorm(), j};
        std::partial_sort(dist.begin(), dist.begin() + 9, dist.end());
        Vec3 mu = Vec3::Zero();
        for (std::size_t k = 0; k < 9; ++k) mu += cloud[dist[k].second];  // self included
        mu /= 9.0;
        Mat3 cov = Mat3::Zero();
        for (std::size_t k = 0; k < 9; ++k) {
            const Vec3 d = cloud[dist[k].second] - mu;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        normals[i] = eig.eigenvectors().col(0);  // smallest-eigenvalue direction
    }
    return normals;
}

}  // namespace metric_detail

// Umeyama-aligns pred onto gt, then nearest-neighbor distances both ways and
// normal consistency over the pred -> gt matches.
inline CloudMetrics pointmap_metrics(const std::vector<Vec3>& pred_in,
                                     const std::vector<Vec3>& gt_in,
                                     std::size_t subsample_cap = 2000) {
    if (pred_in.empty() || gt_in.empty())
        throw std::invalid_argument("pointmap metrics: empty cloud");
    auto pred = metric_detail::subsample(pred_in, subsample_cap);
    const auto gt = metric_detail::subsample(gt_in, subsample_cap);

    if (pred.size() >= 3 && gt.size() >= 3 && pred.size() == gt.size()) {
        try {
            const auto sim = umeyama_align(pred, gt);
            for (auto& p : pred) p = sim.apply(p);
        } catch (const std::exception&) {
            // unalignable (degenerate) clouds are scored as-is
        }
    }

    const auto pn = metric_detail::estimate_normals(pred);
    const auto gn = metric_detail::estimate_normals(gt);

    std::vector<double> acc(pred.size()), comp(gt.size()), nc(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::size_t j = metric_detail::nearest_index(pred[i], gt);
        acc[i] = (pred[i] - gt[j]).norm();
        nc[i] = std::abs(pn[i].dot(gn[j]));
    }
    for (std::size_t j = 0; j < gt.size(); ++j)
        comp[j] = (gt[j] - pred[metric_detail::nearest_index(gt[j], pred)]).norm();

    CloudMetrics m;
    for (double v : acc) m.acc_mean += v;
    for (double v : comp) m.comp_mean += v;
    for (double v : nc) m.nc_mean += v;
    m.acc_mean /= static_cast<double>(acc.size());
    m.comp_mean /= static_cast<double>(comp.size());
    m.nc_mean /= static_cast<double>(nc.size());
    m.acc_median = metric_detail::median(acc);
    m.comp_median = metric_detail::median(comp);
    m.nc_median = metric_detail::median(nc);
    return m;
}

struct TrackDeviation {
    std::size_t horizon = 0;
    double percent = 0.0;  // mean deviation / gt trajectory extent, in percent
    double mean_px = 0.0;  // raw mean 2D deviation, pixels
};

// Per query and horizon h: mean over frames 1..min(h, T-1) of the 2D error,
// normalized by the ground-truth trajectory's bounding-box diagonal (floored
// at 1 px for static queries), averaged over queries.
inline std::vector<TrackDeviation> tracking_metrics(
    const std::vector<std::vector<std::array<double, 2>>>& pred, const TrackSet& gt,
    std::vector<std::size_t> horizons = {12, 24}) {
    const std::size_t t_count = gt.frame_count();
    const std::size_t n = gt.query_count();
    if (pred.size() != t_count) throw std::invalid_argument("tracking_metrics: frame count mismatch");
    if (t_count < 2 || n == 0) throw std::invalid_argument("tracking_metrics: empty track set");
    for (const auto& f : pred)
        if (f.size() != n) throw std::invalid_argument("tracking_metrics: query count mismatch");

    std::vector<TrackDeviation> out;
    for (std::size_t h : horizons) {
        const std::size_t last = std::min(h, t_count - 1);
        TrackDeviation dev;
        dev.horizon = h;
        for (std::size_t i = 0; i < n; ++i) {
            double lo_u = gt.tracks_2d[0][i][0], hi_u = lo_u;
            double lo_v = gt.tracks_2d[0][i][1], hi_v = lo_v;
            double err = 0.0;
            for (std::size_t t = 1; t <= last; ++t) {
                const auto& g = gt.tracks_2d[t][i];
                lo_u = std::min(lo_u, g[0]); hi_u = std::max(hi_u, g[0]);
                lo_v = std::min(lo_v, g[1]); hi_v = std::max(hi_v, g[1]);
                const double du = pred[t][i][0] - g[0], dv = pred[t][i][1] - g[1];
                err += std::sqrt(du * du + dv * dv);
            }
            err /= static_cast<double>(last);
            const double extent =
                std::max(1.0, std::hypot(hi_u - lo_u, hi_v - lo_v));  // 1 px floor
            dev.mean_px += err;
            dev.percent += 100.0 * err / extent;
        }
        dev.mean_px /= static_cast<double>(n);
        dev.percent /= static_cast<double>(n);
        out.push_back(dev);
    }
    return out;
}

}  // namespace q4dg
