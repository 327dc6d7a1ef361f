#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sphmap {

/// Points and values share one 3-component type; in two dimensions the
/// third component is always zero.
using Vec3 = std::array<double, 3>;

inline constexpr double kPi = std::numbers::pi;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator-(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return s * a; }
inline Vec3& operator+=(Vec3& a, const Vec3& b) {
  a[0] += b[0];
  a[1] += b[1];
  a[2] += b[2];
  return a;
}

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0.0 ? (1.0 / n) * a : a;
}

/// Geodesic distance on the unit sphere between two unit vectors.
inline double geodesic_distance(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate near 0 and pi
  return std::atan2(norm(cross(a, b)), dot(a, b));
}

/// Spherical linear interpolation between unit vectors a (t=0) and b (t=1).
/// Requires a and b not antipodal.
inline Vec3 slerp(const Vec3& a, const Vec3& b, double t) {
  const double theta = geodesic_distance(a, b);
  if (theta < 1e-12) return normalized((1.0 - t) * a + t * b);
  const double st = std::sin(theta);
  return normalized((std::sin((1.0 - t) * theta) / st) * a + (std::sin(t * theta) / st) * b);
}

/// Measure of the unit ball in R^N (N = 2 or 3).
inline double unit_ball_volume(int dim) { return dim == 2 ? kPi : 4.0 * kPi / 3.0; }

/// Quintic smoothstep on [0,1]: C2, zero slope at both ends.
inline double smoothstep(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return x * x * x * (x * (6.0 * x - 15.0) + 10.0);
}

enum class ErrorCode {
  Precondition,
  UnknownPreset,
  SingularityOnNode,
  LatticeMismatch,
  EmptyRegion,
  EpsilonBelowSpacing,
  NearZeroVector,
  SupportTouchesBoundary,
  NonIntegerDegree,
  TooManyCharges,
  FamilyViolatesLipschitz,
  NoAdmissibleRadius,
  NotABadBall,
  NotAGoodBall,
  HomotopyNotFound,
  NonzeroDegree,
  TraceNotInSmallDisk,
  CurvedBoundaryUnsupported,
  NotOnBoundary,
  RadiusTooLarge,
  SurgeryFailed,
  Io,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::Precondition: return "Precondition";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::SingularityOnNode: return "SingularityOnNode";
    case ErrorCode::LatticeMismatch: return "LatticeMismatch";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::EpsilonBelowSpacing: return "EpsilonBelowSpacing";
    case ErrorCode::NearZeroVector: return "NearZeroVector";
    case ErrorCode::SupportTouchesBoundary: return "SupportTouchesBoundary";
    case ErrorCode::NonIntegerDegree: return "NonIntegerDegree";
    case ErrorCode::TooManyCharges: return "TooManyCharges";
    case ErrorCode::FamilyViolatesLipschitz: return "FamilyViolatesLipschitz";
    case ErrorCode::NoAdmissibleRadius: return "NoAdmissibleRadius";
    case ErrorCode::NotABadBall: return "NotABadBall";
    case ErrorCode::NotAGoodBall: return "NotAGoodBall";
    case ErrorCode::HomotopyNotFound: return "HomotopyNotFound";
    case ErrorCode::NonzeroDegree: return "NonzeroDegree";
    case ErrorCode::TraceNotInSmallDisk: return "TraceNotInSmallDisk";
    case ErrorCode::CurvedBoundaryUnsupported: return "CurvedBoundaryUnsupported";
    case ErrorCode::NotOnBoundary: return "NotOnBoundary";
    case ErrorCode::RadiusTooLarge: return "RadiusTooLarge";
    case ErrorCode::SurgeryFailed: return "SurgeryFailed";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Surgery and homotopy failures map to CLI exit code 3, everything else to 2.
inline bool is_surgery_failure(ErrorCode c) {
  return c == ErrorCode::NoAdmissibleRadius || c == ErrorCode::HomotopyNotFound ||
         c == ErrorCode::TraceNotInSmallDisk || c == ErrorCode::SurgeryFailed ||
         c == ErrorCode::NearZeroVector || c == ErrorCode::NonzeroDegree;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace sphmap
