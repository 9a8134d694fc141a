#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace q4dg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rendering-side camera. World-to-camera convention: x_cam = R * x_world + t.
struct Pinhole {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 to_camera(const Vec3& p_world) const { return rotation * p_world + translation; }
    Vec3 to_world(const Vec3& p_cam) const {
        return rotation.transpose() * (p_cam - translation);
    }
    Vec3 center() const { return -rotation.transpose() * translation; }
};

struct PixelDepth {
    double u, v, depth;
};

inline PixelDepth project_point(const Vec3& p_world, const Pinhole& cam) {
    const Vec3 pc = cam.to_camera(p_world);
    if (pc.z() <= 0.0) throw std::runtime_error("project_point: point behind camera");
    return PixelDepth{cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy,
                      pc.z()};
}

inline Vec3 unproject_pixel(double u, double v, double depth, const Pinhole& cam) {
    const Vec3 pc((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
    return cam.to_world(pc);
}

// Learned camera encoding g in R^9: unit quaternion (w,x,y,z) with
// non-negative scalar part, translation (world units), normalized focal
// (fx / W, fy / H).
struct CameraParams {
    std::array<double, 4> quat{1.0, 0.0, 0.0, 0.0};
    std::array<double, 3> translation{0.0, 0.0, 0.0};
    double focal_x = 1.0, focal_y = 1.0;

    std::array<double, 9> encode() const {
        return {quat[0], quat[1], quat[2], quat[3], translation[0], translation[1],
                translation[2], focal_x, focal_y};
    }

    static CameraParams from_encoding(const double* g) {
        CameraParams c;
        for (int i = 0; i < 4; ++i) c.quat[static_cast<std::size_t>(i)] = g[i];
        for (int i = 0; i < 3; ++i) c.translation[static_cast<std::size_t>(i)] = g[4 + i];
        c.focal_x = g[7];
        c.focal_y = g[8];
        return c;
    }

    static CameraParams from_pinhole(const Pinhole& cam, std::size_t width, std::size_t height) {
        Eigen::Quaterniond q(cam.rotation);
        q.normalize();
        if (q.w() < 0.0) q.coeffs() = -q.coeffs();  // canonical double-cover representative
        CameraParams c;
        c.quat = {q.w(), q.x(), q.y(), q.z()};
        c.translation = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
        c.focal_x = cam.fx / static_cast<double>(width);
        c.focal_y = cam.fy / static_cast<double>(height);
        return c;
    }

    Pinhole to_pinhole(std::size_t width, std::size_t height) const {
        Eigen::Quaterniond q(quat[0], quat[1], quat[2], quat[3]);
        q.normalize();
        Pinhole cam;
        cam.rotation = q.toRotationMatrix();
        cam.translation = Vec3(translation[0], translation[1], translation[2]);
        cam.fx = focal_x * static_cast<double>(width);
        cam.fy = focal_y * static_cast<double>(height);
        cam.cx = static_cast<double>(width) / 2.0;
        cam.cy = static_cast<double>(height) / 2.0;
        return cam;
    }
};

// Query pixels in a source frame plus one 2D and one 3D trajectory per query.
// tracks_2d[t][i] = (u, v); tracks_3d[t][i] in the reference camera frame.
struct TrackSet {
    std::vector<std::array<double, 2>> queries;
    std::vector<std::vector<std::array<double, 2>>> tracks_2d;  // [T][N]
    std::vector<std::vector<std::array<double, 3>>> tracks_3d;  // [T][N]

    std::size_t query_count() const { return queries.size(); }
    std::size_t frame_count() const { return tracks_2d.size(); }
};

// Rotation angle between two rotation matrices, in degrees.
inline double rotation_angle_deg(const Mat3& a, const Mat3& b) {
    const double tr = (a.transpose() * b).trace();
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

// Look-at world-to-camera rotation: camera z axis points from eye to target.
inline Mat3 look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint = Vec3(0, 0, 1)) {
    const Vec3 fwd = (target - eye).normalized();
    Vec3 right = fwd.cross(up_hint);
    if (right.norm() < 1e-9) right = fwd.cross(Vec3(0, 1, 0));
    right.normalize();
    const Vec3 down = fwd.cross(right);  // completes a right-handed frame, y points "down"
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = fwd.transpose();
    return r;
}

}  // namespace q4dg
