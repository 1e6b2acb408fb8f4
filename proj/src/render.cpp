#include "nanofusion/render.hpp"

#include <algorithm>
#include <cmath>

#include "nanofusion/parallel.hpp"

namespace nf {

namespace {

uint32_t hash3(int x, int y, int z, int salt) {
    uint32_t h = 2166136261u;
    for (uint32_t v : {static_cast<uint32_t>(x), static_cast<uint32_t>(y), static_cast<uint32_t>(z),
                       static_cast<uint32_t>(salt)}) {
        h ^= v;
        h *= 16777619u;
    }
    h ^= h >> 15;
    h *= 0x2c1b3c6du;
    h ^= h >> 12;
    return h;
}

float hash_unit(int x, int y, int z, int salt) { return static_cast<float>(hash3(x, y, z, salt) & 0xffff) / 65535.0f; }

}  // namespace

float texture_value(int id, const Vec3& p) {
    int family = ((id % 5) + 5) % 5;
    float scale = 0.25f + 0.12f * static_cast<float>((id / 5) % 4);
    float v = 0.5f;
    switch (family) {
        case 0: {  // checkerboard
            int cx = static_cast<int>(std::floor(p.x / scale)), cy = static_cast<int>(std::floor(p.y / scale)),
                cz = static_cast<int>(std::floor(p.z / scale));
            v = ((cx + cy + cz) & 1) ? 0.85f : 0.35f;
            break;
        }
        case 1:  // diagonal stripes
            v = 0.5f + 0.35f * std::sin((p.x + 0.7f * p.y + 1.4f * p.z) / scale);
            break;
        case 2: {  // blocky noise
            v = 0.3f + 0.6f * hash_unit(static_cast<int>(std::floor(p.x / scale)),
                                        static_cast<int>(std::floor(p.y / scale)),
                                        static_cast<int>(std::floor(p.z / scale)), id);
            break;
        }
        case 3: {  // dots
            float fx = p.x / scale - std::floor(p.x / scale) - 0.5f;
            float fy = p.y / scale - std::floor(p.y / scale) - 0.5f;
            float fz = p.z / scale - std::floor(p.z / scale) - 0.5f;
            v = (fx * fx + fy * fy + fz * fz < 0.09f) ? 0.25f : 0.75f;
            break;
        }
        default:  // gentle gradient
            v = 0.45f + 0.2f * std::sin(0.9f * p.x / scale) * std::cos(0.7f * p.y / scale);
            break;
    }
    return 0.55f + 0.55f * std::clamp(v, 0.0f, 1.0f);
}

namespace {

struct BodyFrame {
    Vec3 fwd, lat;
};

void add_subject(SceneGeometry& g, const Scene& scene, const PoseEstimate& pose) {
    const SubjectParams& b = scene.body;
    float h = b.height;
    float phi = subject_facing(pose);
    BodyFrame f{{std::cos(phi), std::sin(phi), 0}, {-std::sin(phi), std::cos(phi), 0}};
    float floor_z = g.floor_z;
    Vec3 base{pose.x, pose.y, floor_z};
    auto at = [&](float fwd_m, float lat_m, float up_m) {
        return base + f.fwd * fwd_m + f.lat * lat_m + Vec3{0, 0, up_m};
    };

    float phase = 2.0f * static_cast<float>(kPi) * static_cast<float>(scene.skeleton_pose) / 10.0f;
    float leg_swing = 0.5f * std::sin(phase);
    float arm_swing = -0.4f * std::sin(phase);

    Material skin{b.texture_id, b.base_albedo, Material::Plain, 0, 0};
    Material torso_mat{b.texture_id, b.base_albedo, Material::TwoTone, b.front_albedo, b.back_albedo};
    Material head_mat{b.texture_id, 0.5f, Material::Face, 0.95f, 0.18f};

    // torso
    g.prims.push_back({Primitive::Capsule, at(0, 0, 0.52f * h), at(0, 0, 0.78f * h),
                       0.117f * h * b.girth, {}, torso_mat});
    g.torso_center = at(0, 0, 0.65f * h);
    g.torso_radius = 0.117f * h * b.girth;
    g.facing_dir = f.fwd;
    // head
    g.prims.push_back({Primitive::Sphere, at(0, 0, 0.91f * h), {}, 0.068f * h, {}, head_mat});
    // legs
    for (int side = -1; side <= 1; side += 2) {
        float swing = side > 0 ? leg_swing : -leg_swing;
        Vec3 hip = at(0, 0.07f * h * b.girth * side, 0.50f * h);
        Vec3 foot = at(0.48f * h * std::sin(swing), 0.07f * h * b.girth * side,
                       0.50f * h - 0.48f * h * std::cos(swing));
        g.prims.push_back({Primitive::Capsule, hip, foot, 0.055f * h * b.girth, {}, skin});
    }
    // arms
    for (int side = -1; side <= 1; side += 2) {
        float swing = side > 0 ? arm_swing : -arm_swing;
        Vec3 shoulder = at(0, 0.135f * h * b.girth * side, 0.78f * h);
        Vec3 hand = at(0.34f * h * std::sin(swing), 0.135f * h * b.girth * side,
                       0.78f * h - 0.34f * h * std::cos(swing));
        g.prims.push_back({Primitive::Capsule, shoulder, hand, 0.035f * h * b.girth, {}, skin});
    }
}

}  // namespace

SceneGeometry build_geometry(const Scene& scene, const PoseEstimate& pose) {
    SceneGeometry g;
    g.floor_z = pose.z - 0.65f * scene.body.height;
    g.has_background = scene.has_environment;
    g.background_texture = scene.wall_texture;

    if (scene.has_subject) add_subject(g, scene, pose);

    if (scene.has_environment) {
        Material floor_mat{scene.floor_texture, 0.65f, Material::Plain, 0, 0};
        Material wall_mat{scene.wall_texture, 0.55f, Material::Plain, 0, 0};
        g.prims.push_back({Primitive::Box, Vec3{2.5f, 0, g.floor_z - 0.05f}, {}, 0,
                           Vec3{9.0f, 9.0f, 0.05f}, floor_mat});
        float wall_h = 2.0f, wall_z = g.floor_z + wall_h;
        g.prims.push_back({Primitive::Box, Vec3{7.5f, 0, wall_z}, {}, 0, Vec3{0.1f, 9.0f, wall_h}, wall_mat});
        g.prims.push_back({Primitive::Box, Vec3{-2.0f, 0, wall_z}, {}, 0, Vec3{0.1f, 9.0f, wall_h}, wall_mat});
        g.prims.push_back({Primitive::Box, Vec3{2.5f, 4.5f, wall_z}, {}, 0, Vec3{9.0f, 0.1f, wall_h}, wall_mat});
        g.prims.push_back({Primitive::Box, Vec3{2.5f, -4.5f, wall_z}, {}, 0, Vec3{9.0f, 0.1f, wall_h}, wall_mat});

        for (const ClutterObject& o : scene.clutter) {
            float bound = o.kind == ClutterObject::Box ? std::max(o.hx, o.hy) : o.radius;
            float keep = 0.5f + bound;
            float px = o.x, py = o.y;
            // keep clutter away from the drone-subject sight line so the
            // torso is never fully occluded
            float d = segment_distance_2d(px, py, 0, 0, pose.x, pose.y);
            if (d < keep) {
                float dx = pose.x, dy = pose.y;
                float len = std::sqrt(dx * dx + dy * dy);
                float nx = len > 0 ? -dy / len : 0.0f, ny = len > 0 ? dx / len : 1.0f;
                float side = (px * nx + py * ny) >= 0 ? 1.0f : -1.0f;
                px += side * (keep - d + 0.05f) * nx;
                py += side * (keep - d + 0.05f) * ny;
            }
            Material mat{o.texture_id, 0.6f, Material::Plain, 0, 0};
            if (o.kind == ClutterObject::Box) {
                g.prims.push_back({Primitive::Box, Vec3{px, py, g.floor_z + o.hz}, {}, 0,
                                   Vec3{o.hx, o.hy, o.hz}, mat});
            } else {
                g.prims.push_back({Primitive::Sphere, Vec3{px, py, g.floor_z + o.radius}, {}, o.radius, {}, mat});
            }
        }
    }
    return g;
}

namespace {

float intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, float r) {
    Vec3 oc = o - c;
    float b = oc.dot(d);
    float q = oc.norm2() - r * r;
    float h = b * b - q;
    if (h < 0) return -1.0f;
    float t = -b - std::sqrt(h);
    return t > 1e-4f ? t : -1.0f;
}

float intersect_capsule(const Vec3& o, const Vec3& d, const Vec3& pa, const Vec3& pb, float r) {
    Vec3 ba = pb - pa, oa = o - pa;
    float baba = ba.norm2(), bard = ba.dot(d), baoa = ba.dot(oa);
    float rdoa = d.dot(oa), oaoa = oa.norm2();
    float a = baba - bard * bard;
    float b = baba * rdoa - baoa * bard;
    float c = baba * oaoa - baoa * baoa - r * r * baba;
    if (std::abs(a) > 1e-7f) {
        float h = b * b - a * c;
        if (h >= 0) {
            float t = (-b - std::sqrt(h)) / a;
            float y = baoa + t * bard;
            if (y > 0 && y < baba && t > 1e-4f) return t;
        }
    }
    float best = -1.0f;
    for (const Vec3& cap : {pa, pb}) {
        float t = intersect_sphere(o, d, cap, r);
        if (t > 0 && (best < 0 || t < best)) best = t;
    }
    return best;
}

float intersect_box(const Vec3& o, const Vec3& d, const Vec3& c, const Vec3& half, int& axis) {
    float tmin = -1e30f, tmax = 1e30f;
    int amin = 0;
    const float od[3] = {o.x - c.x, o.y - c.y, o.z - c.z};
    const float dd[3] = {d.x, d.y, d.z};
    const float hh[3] = {half.x, half.y, half.z};
    for (int i = 0; i < 3; ++i) {
        if (std::abs(dd[i]) < 1e-9f) {
            if (std::abs(od[i]) > hh[i]) return -1.0f;
            continue;
        }
        float inv = 1.0f / dd[i];
        float t1 = (-hh[i] - od[i]) * inv, t2 = (hh[i] - od[i]) * inv;
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
            tmin = t1;
            amin = i;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return -1.0f;
    }
    axis = amin;
    return tmin > 1e-4f ? tmin : -1.0f;
}

Vec3 primitive_normal(const Primitive& p, const Vec3& hit, int box_axis) {
    switch (p.kind) {
        case Primitive::Sphere: return (hit - p.a).normalized();
        case Primitive::Capsule: {
            Vec3 ba = p.b - p.a;
            float t = std::clamp((hit - p.a).dot(ba) / ba.norm2(), 0.0f, 1.0f);
            return (hit - (p.a + ba * t)).normalized();
        }
        case Primitive::Box: {
            Vec3 rel = hit - p.a;
            Vec3 n{};
            if (box_axis == 0) n.x = rel.x > 0 ? 1.0f : -1.0f;
            if (box_axis == 1) n.y = rel.y > 0 ? 1.0f : -1.0f;
            if (box_axis == 2) n.z = rel.z > 0 ? 1.0f : -1.0f;
            return n;
        }
    }
    return {0, 0, 1};
}

}  // namespace

float nearest_hit(const SceneGeometry& geom, const Vec3& origin, const Vec3& dir, const Primitive** hit) {
    float best = -1.0f;
    const Primitive* best_prim = nullptr;
    for (const Primitive& p : geom.prims) {
        float t = -1.0f;
        int axis = 0;
        switch (p.kind) {
            case Primitive::Sphere: t = intersect_sphere(origin, dir, p.a, p.radius); break;
            case Primitive::Capsule: t = intersect_capsule(origin, dir, p.a, p.b, p.radius); break;
            case Primitive::Box: t = intersect_box(origin, dir, p.a, p.half, axis); break;
        }
        if (t > 0 && (best < 0 || t < best)) {
            best = t;
            best_prim = &p;
        }
    }
    if (hit) *hit = best_prim;
    return best;
}

namespace {

const Vec3 kLightDir = Vec3{-0.45f, 0.2f, 0.87f}.normalized();

float shade(const SceneGeometry& geom, const Primitive& prim, const Vec3& origin, const Vec3& dir, float t) {
    Vec3 hit = origin + dir * t;
    int axis = 0;
    if (prim.kind == Primitive::Box) {
        // recover the slab axis for the normal
        Vec3 rel = hit - prim.a;
        float rx = std::abs(std::abs(rel.x) - prim.half.x);
        float ry = std::abs(std::abs(rel.y) - prim.half.y);
        float rz = std::abs(std::abs(rel.z) - prim.half.z);
        axis = rx <= ry && rx <= rz ? 0 : (ry <= rz ? 1 : 2);
    }
    Vec3 n = primitive_normal(prim, hit, axis);
    float albedo = prim.mat.albedo;
    if (prim.mat.tone == Material::TwoTone) {
        Vec3 axis_point = prim.a + (prim.b - prim.a) * 0.5f;
        float front = (hit - axis_point).dot(geom.facing_dir);
        albedo = front > 0 ? prim.mat.albedo_front : prim.mat.albedo_back;
    } else if (prim.mat.tone == Material::Face) {
        Vec3 out_dir = (hit - prim.a).normalized();
        albedo = out_dir.dot(geom.facing_dir) > 0.45f ? prim.mat.albedo_front : prim.mat.albedo_back;
    }
    float tex = texture_value(prim.mat.texture_id, hit);
    float diffuse = std::max(0.0f, n.dot(kLightDir));
    return albedo * tex * (0.3f + 0.7f * diffuse);
}

float background_value(const SceneGeometry& geom, const Vec3& dir) {
    if (!geom.has_background) return 0.0f;
    float base = 0.5f + 0.22f * dir.z;
    return base * texture_value(geom.background_texture, dir * 6.0f);
}

}  // namespace

std::array<uint8_t, kImageBytes> render_camera(const Scene& scene, const PoseEstimate& pose,
                                               const CameraModel& camera) {
    return render_camera_geometry(build_geometry(scene, pose), camera);
}

std::array<uint8_t, kImageBytes> render_camera_geometry(const SceneGeometry& geom, const CameraModel& camera) {
    std::array<uint8_t, kImageBytes> img{};
    parallel_for(camera.height, [&](int64_t row) {
        for (int col = 0; col < camera.width; ++col) {
            Vec3 dir = camera.pixel_ray(static_cast<float>(col) + 0.5f, static_cast<float>(row) + 0.5f);
            const Primitive* prim = nullptr;
            float t = nearest_hit(geom, {}, dir, &prim);
            float v = prim ? shade(geom, *prim, {}, dir, t) : background_value(geom, dir);
            long q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
            img[static_cast<size_t>(row) * camera.width + col] = static_cast<uint8_t>(q);
        }
    });
    return img;
}

DepthMap render_depth(const Scene& scene, const PoseEstimate& pose, const ToFModel& tof, uint64_t noise_seed) {
    return render_depth_geometry(build_geometry(scene, pose), tof, noise_seed);
}

DepthMap render_depth_geometry(const SceneGeometry& geom, const ToFModel& tof, uint64_t noise_seed) {
    Rng rng = derive_rng(noise_seed, "tof-noise");
    DepthMap out;
    for (int row = 0; row < DepthMap::kGrid; ++row) {
        for (int col = 0; col < DepthMap::kGrid; ++col) {
            float best = -1.0f;
            for (int sv = 0; sv < tof.rays_per_axis; ++sv) {
                for (int sh = 0; sh < tof.rays_per_axis; ++sh) {
                    Vec3 dir = tof.ray_dir(row, col, sv, sh);
                    float t = nearest_hit(geom, {}, dir, nullptr);
                    if (t > 0 && (best < 0 || t < best)) best = t;
                }
            }
            size_t idx = static_cast<size_t>(row) * DepthMap::kGrid + col;
            if (best < 0) {
                out.valid[idx] = 0;
                out.meters[idx] = 0.0f;
                continue;
            }
            double reading = best;
            if (tof.noise_enabled) reading += rng.normal(0.0, tof.sigma(reading));
            if (reading < tof.min_range || reading > tof.max_range) {
                out.valid[idx] = 0;
                out.meters[idx] = 0.0f;
            } else {
                out.valid[idx] = 1;
                out.meters[idx] = static_cast<float>(reading);
            }
        }
    }
    return out;
}

}  // namespace nf
