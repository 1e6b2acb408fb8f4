#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nanofusion/dataset.hpp"
#include "nanofusion/scene.hpp"

namespace nf {

struct Material {
    int texture_id = 0;
    float albedo = 0.6f;
    // orientation-dependent tone: plain, front/back two-tone, or face cap
    enum Tone : uint8_t { Plain, TwoTone, Face } tone = Plain;
    float albedo_front = 0.0f;
    float albedo_back = 0.0f;
};

struct Primitive {
    enum Kind : uint8_t { Sphere, Capsule, Box } kind = Sphere;
    Vec3 a;      // center (sphere/box) or capsule end A
    Vec3 b;      // capsule end B
    float radius = 0.0f;
    Vec3 half;   // box half extents
    Material mat;
};

// Scene assembled in the drone body frame (camera at the origin, looking
// along +x). The floor sits wherever the sampled z offset puts it.
struct SceneGeometry {
    std::vector<Primitive> prims;
    Vec3 facing_dir;  // subject facing, unit xy
    Vec3 torso_center;
    float torso_radius = 0.0f;
    bool has_background = true;
    int background_texture = 0;
    float floor_z = 0.0f;
};

SceneGeometry build_geometry(const Scene& scene, const PoseEstimate& pose);

// Nearest intersection along origin-anchored ray; returns distance or a
// negative value on miss.
float nearest_hit(const SceneGeometry& geom, const Vec3& origin, const Vec3& dir, const Primitive** hit);

// Deterministic 8-bit grayscale render: lambertian shading, one fixed
// directional light, nearer geometry occludes.
std::array<uint8_t, kImageBytes> render_camera(const Scene& scene, const PoseEstimate& pose,
                                               const CameraModel& camera);
std::array<uint8_t, kImageBytes> render_camera_geometry(const SceneGeometry& geom, const CameraModel& camera);

// Multi-zone depth: each zone is the minimum radial hit distance over its
// ray bundle, plus range-dependent Gaussian noise; readings outside the
// sensor range are masked invalid.
DepthMap render_depth(const Scene& scene, const PoseEstimate& pose, const ToFModel& tof, uint64_t noise_seed);
DepthMap render_depth_geometry(const SceneGeometry& geom, const ToFModel& tof, uint64_t noise_seed);

// Procedural grayscale texture factor in [0.55, 1.1].
float texture_value(int texture_id, const Vec3& p);

}  // namespace nf
