#pragma once

#include <cmath>

#include "nanofusion/common.hpp"

namespace nf {

struct Vec3 {
    float x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    float norm2() const { return dot(*this); }
    float norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        float n = norm();
        return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
};

// Distance from point p to the 2-D segment (ax,ay)-(bx,by).
inline float segment_distance_2d(float px, float py, float ax, float ay, float bx, float by) {
    float dx = bx - ax, dy = by - ay;
    float len2 = dx * dx + dy * dy;
    float t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0f;
    t = std::clamp(t, 0.0f, 1.0f);
    float qx = ax + t * dx - px, qy = ay + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

}  // namespace nf
