#include "nanofusion/scene.hpp"

namespace nf {

SubjectParams subject_from_id(int id) {
    if (id < 0 || id > 26) throw ConfigError("subject id must be in 0..26");
    // fixed per-id characteristics spread over the population
    auto frac = [&](uint64_t salt) {
        return static_cast<float>((fnv1a("subject") ^ (static_cast<uint64_t>(id) * 0x9e3779b97f4a7c15ULL + salt)) % 10000) /
               10000.0f;
    };
    SubjectParams p;
    p.height = 1.5f + 0.5f * frac(1);
    p.girth = 0.8f + 0.45f * frac(2);
    p.base_albedo = 0.35f + 0.5f * frac(3);
    p.front_albedo = std::min(1.0f, p.base_albedo + 0.18f + 0.1f * frac(4));
    p.back_albedo = std::max(0.08f, p.base_albedo - 0.2f - 0.1f * frac(5));
    p.texture_id = static_cast<int>(fnv1a("subject-tex") ^ static_cast<uint64_t>(id)) % 20;
    if (p.texture_id < 0) p.texture_id += 20;
    return p;
}

Scene sample_scene(uint64_t seed) {
    Rng rng = derive_rng(seed, "scene");
    Scene s;
    s.subject_id = static_cast<int>(rng.bounded(27));
    s.body = subject_from_id(s.subject_id);
    s.skeleton_pose = static_cast<int>(rng.bounded(10));
    s.floor_texture = static_cast<int>(rng.bounded(20));
    s.wall_texture = static_cast<int>(rng.bounded(20));
    int count = static_cast<int>(rng.bounded(23));
    s.clutter.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        ClutterObject o;
        o.kind = rng.bernoulli(0.5) ? ClutterObject::Box : ClutterObject::Sphere;
        o.x = rng.range(0.2f, 6.0f);
        o.y = rng.range(-3.5f, 3.5f);
        o.hx = rng.range(0.05f, 0.4f);
        o.hy = rng.range(0.05f, 0.4f);
        o.hz = rng.range(0.05f, 0.5f);
        o.radius = rng.range(0.08f, 0.4f);
        o.texture_id = static_cast<int>(rng.bounded(20));
        s.clutter.push_back(o);
    }
    return s;
}

PoseEstimate sample_relative_pose(uint64_t seed, const CameraModel& camera, const BalanceSpec& balance,
                                  int stratum) {
    Rng rng = derive_rng(seed, "pose");
    double half_h = camera.hfov_rad / 2.0;
    double half_v = std::atan(std::tan(half_h) * camera.height / camera.width);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        float x;
        if (stratum >= 0 && balance.x_strata > 0) {
            int bin = stratum % balance.x_strata;
            float w = (balance.x_max - balance.x_min) / static_cast<float>(balance.x_strata);
            x = balance.x_min + (static_cast<float>(bin) + rng.uniform()) * w;
        } else {
            x = rng.range(balance.x_min, balance.x_max);
        }
        float ymax = std::min(balance.y_abs, x * static_cast<float>(std::tan(half_h)) * balance.frustum_margin);
        float zmax = std::min(balance.z_abs, x * static_cast<float>(std::tan(half_v)) * balance.frustum_margin);
        float y = rng.range(-ymax, ymax);
        float z = rng.range(-zmax, zmax);
        float theta = wrap_angle(rng.range(-static_cast<float>(kPi), static_cast<float>(kPi)));
        PoseEstimate pose{x, y, z, theta};
        if (camera.in_frustum(Vec3{x, y, z}, 1.0f)) return pose;
    }
    throw NumericError("sample_relative_pose: rejection sampling failed after 1000 tries");
}

}  // namespace nf
