#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>

#include "sphmap/core.hpp"

namespace sphmap {

enum class Shape { Box, Ball };

inline std::string to_string(Shape s) { return s == Shape::Box ? "box" : "ball"; }

inline Shape parse_shape(const std::string& s) {
  if (s == "box") return Shape::Box;
  if (s == "ball") return Shape::Ball;
  fail(ErrorCode::Precondition, "unknown domain shape '" + s + "'");
}

/// Omega: the unit box [0,1]^N or the unit ball B^N centred at the origin.
struct DomainSpec {
  int dim = 3;
  Shape shape = Shape::Box;

  DomainSpec() = default;
  DomainSpec(int d, Shape s) : dim(d), shape(s) {
    require(d == 2 || d == 3, ErrorCode::Precondition, "dimension must be 2 or 3");
  }

  bool contains(const Vec3& x, double tol = 1e-12) const {
    if (shape == Shape::Box) {
      for (int i = 0; i < dim; ++i)
        if (x[i] < -tol || x[i] > 1.0 + tol) return false;
      return true;
    }
    return norm(x) <= 1.0 + tol;
  }

  /// Euclidean distance to the boundary; 1-Lipschitz, zero exactly on the boundary.
  double boundary_distance(const Vec3& x) const {
    if (shape == Shape::Ball) return std::abs(1.0 - norm(x));
    if (contains(x, 0.0)) {
      double d = std::numeric_limits<double>::max();
      for (int i = 0; i < dim; ++i) d = std::min({d, x[i], 1.0 - x[i]});
      return d;
    }
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double e = std::max({0.0, -x[i], x[i] - 1.0});
      s += e * e;
    }
    return std::sqrt(s);
  }

  /// Nearest boundary point of an interior point.
  Vec3 project_to_boundary(const Vec3& x) const {
    if (shape == Shape::Ball) {
      const double n = norm(x);
      if (n == 0.0) return {1.0, 0.0, 0.0};
      return (1.0 / n) * x;
    }
    Vec3 y = clamp(x);
    int best = 0;
    double bd = std::numeric_limits<double>::max();
    bool upper = false;
    for (int i = 0; i < dim; ++i) {
      if (y[i] < bd) { bd = y[i]; best = i; upper = false; }
      if (1.0 - y[i] < bd) { bd = 1.0 - y[i]; best = i; upper = true; }
    }
    y[best] = upper ? 1.0 : 0.0;
    return y;
  }

  /// Inward unit normal at a boundary point (box: of the face the point lies on).
  Vec3 inward_normal(const Vec3& y) const {
    if (shape == Shape::Ball) return -normalized(y);
    Vec3 n{0, 0, 0};
    double bd = std::numeric_limits<double>::max();
    for (int i = 0; i < dim; ++i) {
      if (std::abs(y[i]) < bd) { bd = std::abs(y[i]); n = {0, 0, 0}; n[i] = 1.0; }
      if (std::abs(1.0 - y[i]) < bd) { bd = std::abs(1.0 - y[i]); n = {0, 0, 0}; n[i] = -1.0; }
    }
    return n;
  }

  /// Closest point of the closed domain.
  Vec3 clamp(const Vec3& x) const {
    Vec3 y = x;
    if (shape == Shape::Box) {
      for (int i = 0; i < dim; ++i) y[i] = std::clamp(y[i], 0.0, 1.0);
    } else {
      const double n = norm(y);
      if (n > 1.0) y = (1.0 / n) * y;
    }
    if (dim == 2) y[2] = 0.0;
    return y;
  }

  double volume() const { return shape == Shape::Box ? 1.0 : unit_ball_volume(dim); }
  double inradius() const { return shape == Shape::Box ? 0.5 : 1.0; }
  double diameter() const { return shape == Shape::Box ? std::sqrt(double(dim)) : 2.0; }
  Vec3 centre() const { return shape == Shape::Box ? Vec3{0.5, 0.5, dim == 3 ? 0.5 : 0.0} : Vec3{0, 0, 0}; }

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Uniform node lattice with n nodes per axis and spacing h.  Cells are the
/// (n-1)^N unit cubes between nodes.
struct Lattice {
  int dim = 3;
  int n = 0;
  double h = 0.0;
  Vec3 origin{0, 0, 0};

  /// Box: nodes at i/res.  Ball: nodes offset by h/2 so the origin sits at a
  /// cell centre (even res) and the node set covers [-1,1]^N.
  static Lattice for_domain(const DomainSpec& d, int resolution) {
    Lattice L;
    L.dim = d.dim;
    if (d.shape == Shape::Box) {
      L.h = 1.0 / resolution;
      L.n = resolution + 1;
      L.origin = {0, 0, 0};
    } else {
      L.h = 2.0 / resolution;
      L.n = resolution + 2;
      const double o = -1.0 - 0.5 * L.h;
      L.origin = {o, o, d.dim == 3 ? o : 0.0};
    }
    return L;
  }

  int cells_per_axis() const { return n - 1; }
  std::size_t node_count() const { return dim == 2 ? std::size_t(n) * n : std::size_t(n) * n * n; }
  std::size_t cell_count() const {
    const std::size_t m = std::size_t(n - 1);
    return dim == 2 ? m * m : m * m * m;
  }
  double cell_volume() const { return dim == 2 ? h * h : h * h * h; }

  std::size_t node_index(int i, int j, int k) const { return std::size_t(i) + std::size_t(n) * (std::size_t(j) + std::size_t(n) * k); }
  std::size_t cell_index(int i, int j, int k) const {
    const std::size_t m = std::size_t(n - 1);
    return std::size_t(i) + m * (std::size_t(j) + m * k);
  }

  Vec3 node_position(int i, int j, int k) const {
    return {origin[0] + i * h, origin[1] + j * h, dim == 3 ? origin[2] + k * h : 0.0};
  }
  Vec3 cell_centre(int i, int j, int k) const {
    return {origin[0] + (i + 0.5) * h, origin[1] + (j + 0.5) * h, dim == 3 ? origin[2] + (k + 0.5) * h : 0.0};
  }

  /// Continuous lattice coordinate of a point along an axis.
  double coord(const Vec3& x, int axis) const { return (x[axis] - origin[axis]) / h; }

  friend bool operator==(const Lattice&, const Lattice&) = default;
};

}  // namespace sphmap
