#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace nf {

// Error hierarchy; the CLI maps these onto process exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {   // bad config file / unknown key / bad value
    using Error::Error;
};
struct IoError : Error {       // missing file, short read, magic mismatch
    using Error::Error;
};
struct ShapeError : Error {    // tensor/layer shape contract violation
    using Error::Error;
};
struct NumericError : Error {  // divergence, non-finite values, overflow
    using Error::Error;
};

constexpr double kPi = 3.14159265358979323846;

// Wrap an angle to (-pi, pi]. The seam maps -pi -> pi.
inline double wrap_angle(double a) {
    double r = std::remainder(a, 2.0 * kPi);
    if (r <= -kPi) r += 2.0 * kPi;
    return r;
}
inline float wrap_angle(float a) { return static_cast<float>(wrap_angle(static_cast<double>(a))); }

inline double deg2rad(double d) { return d * kPi / 180.0; }

}  // namespace nf
