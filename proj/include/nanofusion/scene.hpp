#pragma once

#include <cstdint>
#include <vector>

#include "nanofusion/fusion_model.hpp"
#include "nanofusion/geometry.hpp"
#include "nanofusion/rng.hpp"

namespace nf {

// Pinhole camera, drone body frame: x forward, y left, z up. Pixel (0,0) is
// the top-left corner; square pixels.
struct CameraModel {
    int width = kImageW;
    int height = kImageH;
    double hfov_rad = deg2rad(87.0);

    double fx() const { return (width / 2.0) / std::tan(hfov_rad / 2.0); }
    double fy() const { return fx(); }
    double cx() const { return width / 2.0; }
    double cy() const { return height / 2.0; }

    // Projects a body-frame point; ok is false behind the camera.
    bool project(const Vec3& p, float& u, float& v) const {
        if (p.x <= 1e-6f) return false;
        u = static_cast<float>(cx() - fx() * (p.y / p.x));
        v = static_cast<float>(cy() - fy() * (p.z / p.x));
        return true;
    }
    bool in_frustum(const Vec3& p, float margin_px = 0.0f) const {
        float u, v;
        if (!project(p, u, v)) return false;
        return u >= margin_px && u <= width - margin_px && v >= margin_px && v <= height - margin_px;
    }
    Vec3 pixel_ray(float u, float v) const {
        return Vec3{1.0f, static_cast<float>((cx() - u) / fx()), static_cast<float>((cy() - v) / fy())}.normalized();
    }
};

// Multi-zone time-of-flight ranger: 8x8 zones over a square field of view,
// range 0.02-4 m. Accuracy bounds (+/-15 mm below 0.2 m, +/-11% above) are
// treated as 3-sigma Gaussian noise.
struct ToFModel {
    double fov_rad = deg2rad(45.0);
    float min_range = DepthMap::kMinRange;
    float max_range = DepthMap::kMaxRange;
    bool noise_enabled = true;
    int rays_per_axis = 4;  // ray bundle per zone

    double sigma(double d) const { return d < 0.2 ? 0.015 / 3.0 : 0.11 * d / 3.0; }

    // Direction of the bundle ray (sub, sub) inside zone (row, col);
    // sub in [0, rays_per_axis). Row 0 looks up, column 0 looks left.
    Vec3 ray_dir(int row, int col, int sub_v, int sub_h) const {
        double step = fov_rad / DepthMap::kGrid;
        double ah = ((col + (sub_h + 0.5) / rays_per_axis) - DepthMap::kGrid / 2.0) * step;
        double av = ((row + (sub_v + 0.5) / rays_per_axis) - DepthMap::kGrid / 2.0) * step;
        return Vec3{static_cast<float>(std::cos(av) * std::cos(ah)),
                    static_cast<float>(-std::cos(av) * std::sin(ah)), static_cast<float>(-std::sin(av))};
    }
};

struct SubjectParams {
    float height = 1.75f;        // m
    float girth = 1.0f;          // radius multiplier
    float base_albedo = 0.6f;    // clothing tone
    float front_albedo = 0.75f;  // chest side
    float back_albedo = 0.4f;
    int texture_id = 0;
};

// The 27 simulated persons differ in height, volume and texture; parameters
// are a fixed function of the subject id.
SubjectParams subject_from_id(int id);

struct ClutterObject {
    enum Kind : uint8_t { Box, Sphere };
    Kind kind = Box;
    float x = 0, y = 0;        // arena position (drone at origin, x forward)
    float hx = 0.2f, hy = 0.2f, hz = 0.2f;  // box half extents
    float radius = 0.2f;       // sphere
    int texture_id = 0;
};

struct Scene {
    int subject_id = 0;  // 0..26
    SubjectParams body;
    int skeleton_pose = 0;  // 0..9, walking gait phase
    int floor_texture = 0;
    int wall_texture = 1;
    std::vector<ClutterObject> clutter;  // at most 22
    bool has_subject = true;
    bool has_environment = true;  // floor, walls, background
};

// Deterministic randomized scene: uniform subject id, gait pose, textures
// and 0..22 clutter objects.
Scene sample_scene(uint64_t seed);

// Label-distribution spec used to keep marginals flat.
struct BalanceSpec {
    float x_min = 0.5f, x_max = 3.5f;
    float y_abs = 1.5f;
    float z_abs = 0.5f;
    int x_strata = 20;
    float frustum_margin = 0.88f;  // fraction of the half-FoV usable
};

// Pose of the subject relative to the drone, inside the camera frustum.
// stratum >= 0 pins the x stratum (callers pass sample_index % x_strata so
// dataset-level x histograms come out flat).
PoseEstimate sample_relative_pose(uint64_t seed, const CameraModel& camera, const BalanceSpec& balance,
                                  int stratum = -1);

// World-frame facing angle of the subject given its relative pose:
// theta = 0 means facing the drone.
inline float subject_facing(const PoseEstimate& pose) {
    return wrap_angle(std::atan2(-pose.y, -pose.x) + pose.theta);
}

}  // namespace nf
