#ifndef FADEBIF_COMMON_HPP
#define FADEBIF_COMMON_HPP

#include <cmath>
#include <stdexcept>
#include <string>

namespace fadebif {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
};

// Row-major 2x2 matrix, only what the diffusion term needs.
struct Mat2 {
  double a11 = 0.0, a12 = 0.0, a21 = 0.0, a22 = 0.0;

  Vec2 apply(const Vec2& v) const {
    return {a11 * v.x + a12 * v.y, a21 * v.x + a22 * v.y};
  }
  double trace_tt() const {  // tr(B^T B) = sum of squared entries
    return a11 * a11 + a12 * a12 + a21 * a21 + a22 * a22;
  }
};

// Base class for all domain errors thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

}  // namespace fadebif

#endif
