#pragma once

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "sphmap/field.hpp"

namespace sphmap {

/// Triangulated unit sphere (N=3) or sampled unit circle (N=2).  Triangles
/// are oriented so that (b-a)x(c-a) points outward.
struct SphereMesh {
  int dim = 3;
  std::vector<Vec3> dirs;
  std::vector<std::array<int, 3>> tris;       // N=3 only
  std::vector<std::vector<int>> vertex_tris;  // N=3 only

  std::size_t size() const { return dirs.size(); }

  /// Locate a direction: triangle index and barycentric weights (N=3), or
  /// the segment start and weight (N=2, second entry unused).
  struct Location {
    int cell = 0;
    Vec3 weights{1, 0, 0};
  };

  Location locate(const Vec3& w) const {
    Location loc;
    if (dim == 2) {
      const double M = double(dirs.size());
      double t = std::atan2(w[1], w[0]) / (2 * kPi);
      if (t < 0) t += 1.0;
      const double x = t * M;
      int i = std::min(int(std::floor(x)), int(M) - 1);
      loc.cell = i;
      loc.weights = {1.0 - (x - i), x - i, 0.0};
      return loc;
    }
    int best = 0;
    double bd = -2;
    for (std::size_t v = 0; v < dirs.size(); ++v) {
      const double d = dot(dirs[v], w);
      if (d > bd) {
        bd = d;
        best = int(v);
      }
    }
    double best_min = -1e300;
    for (int t : vertex_tris[best]) {
      const Vec3 b = barycentric(t, w);
      const double mn = std::min({b[0], b[1], b[2]});
      if (mn > best_min) {
        best_min = mn;
        loc.cell = t;
        loc.weights = b;
      }
    }
    for (double& x : loc.weights) x = std::max(0.0, x);
    const double s = loc.weights[0] + loc.weights[1] + loc.weights[2];
    loc.weights = (1.0 / s) * loc.weights;
    return loc;
  }

  /// Piecewise-linear interpolation of vertex values, renormalised.
  Vec3 evaluate(const std::vector<Vec3>& values, const Vec3& w) const {
    const Location loc = locate(w);
    if (dim == 2) {
      const int a = loc.cell, b = (loc.cell + 1) % int(dirs.size());
      return normalized(loc.weights[0] * values[a] + loc.weights[1] * values[b]);
    }
    const auto& t = tris[loc.cell];
    return normalized(loc.weights[0] * values[t[0]] + loc.weights[1] * values[t[1]] + loc.weights[2] * values[t[2]]);
  }

 private:
  Vec3 barycentric(int t, const Vec3& w) const {
    const Vec3 &a = dirs[tris[t][0]], &b = dirs[tris[t][1]], &c = dirs[tris[t][2]];
    // central projection of w onto the triangle's plane
    const Vec3 n = cross(b - a, c - a);
    const double s = dot(n, a) / dot(n, w);
    const Vec3 p = s * w;
    const double area = dot(n, n);
    return {dot(cross(b - p, c - p), n) / area, dot(cross(c - p, a - p), n) / area, dot(cross(a - p, b - p), n) / area};
  }
};

inline SphereMesh make_icosphere(int level) {
  SphereMesh m;
  m.dim = 3;
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& x : v) x = normalized(x);
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                                       {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                                       {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back(normalized(v[a] + v[b]));
      mid[key] = int(v.size()) - 1;
      return int(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f.swap(nf);
  }
  for (auto& t : f)
    if (dot(cross(v[t[1]] - v[t[0]], v[t[2]] - v[t[0]]), v[t[0]]) < 0) std::swap(t[1], t[2]);
  m.dirs = std::move(v);
  m.tris = std::move(f);
  m.vertex_tris.assign(m.dirs.size(), {});
  for (std::size_t t = 0; t < m.tris.size(); ++t)
    for (int q : m.tris[t]) m.vertex_tris[q].push_back(int(t));
  return m;
}

inline SphereMesh make_circle(int samples) {
  SphereMesh m;
  m.dim = 2;
  for (int i = 0; i < samples; ++i) {
    const double a = 2 * kPi * i / samples;
    m.dirs.push_back({std::cos(a), std::sin(a), 0.0});
  }
  return m;
}

inline constexpr int kMaxIcosphereLevel = 5;

/// Shared meshes, cached by level (N=3) or sample count (N=2).
inline const SphereMesh& sphere_mesh(int dim, int size_key) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<SphereMesh>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{dim, size_key}];
  if (!slot) slot = std::make_unique<SphereMesh>(dim == 3 ? make_icosphere(size_key) : make_circle(size_key));
  return *slot;
}

/// Mesh fine enough that physical edges on a sphere of the given radius are
/// at most about one lattice spacing.
inline const SphereMesh& sphere_mesh_for(int dim, double radius, double h) {
  if (dim == 2) {
    const int m = std::clamp(int(std::ceil(2 * kPi * radius / (0.5 * h))), 64, 1024);
    return sphere_mesh(2, m);
  }
  int level = 1;
  while (level < kMaxIcosphereLevel && radius * 1.1071 / (1 << level) > h) ++level;
  return sphere_mesh(3, level);
}

/// Values of u on a sphere of the domain, with tangential energy.
struct SphericalTrace {
  int dim = 3;
  Vec3 centre{0, 0, 0};
  double radius = 0.0;
  const SphereMesh* mesh = nullptr;
  std::vector<Vec3> values;
  std::vector<std::uint8_t> present;  // vertex lies in the closed domain
  double min_interpolant_norm = 1.0;
  bool weak_interpolant = false;  // some |interpolant| < 0.1
  double surface_energy = 0.0;    // integral of |grad_T u|^p over the sphere (part in Omega)
  double p = 2.0;
  std::vector<double> tangential;  // per triangle (N=3) or segment (N=2)

  bool complete() const {
    for (auto x : present)
      if (!x) return false;
    return true;
  }
  double surface_lp() const { return std::pow(surface_energy, 1.0 / p); }
  Vec3 point(std::size_t v) const { return centre + radius * mesh->dirs[v]; }
  Vec3 evaluate(const Vec3& w) const { return mesh->evaluate(values, w); }
};

/// Tangential energy of vertex values on the mesh scaled to the given radius.
inline double mesh_energy(const SphereMesh& m, const std::vector<Vec3>& values, const std::vector<std::uint8_t>& present,
                          double radius, double p, std::vector<double>* per_cell = nullptr) {
  double e = 0;
  if (per_cell) per_cell->clear();
  if (m.dim == 2) {
    const std::size_t M = m.size();
    const double len = 2 * radius * std::sin(kPi / M);
    for (std::size_t i = 0; i < M; ++i) {
      const std::size_t j = (i + 1) % M;
      double g = 0;
      if (present[i] && present[j]) {
        g = norm(values[j] - values[i]) / len;
        e += std::pow(g, p) * len;
      }
      if (per_cell) per_cell->push_back(g);
    }
    return e;
  }
  for (const auto& t : m.tris) {
    double g = 0;
    if (present[t[0]] && present[t[1]] && present[t[2]]) {
      const Vec3 a = radius * m.dirs[t[0]], b = radius * m.dirs[t[1]], c = radius * m.dirs[t[2]];
      const Vec3 e1 = b - a, e2 = c - a;
      const double g11 = dot(e1, e1), g12 = dot(e1, e2), g22 = dot(e2, e2);
      const double det = g11 * g22 - g12 * g12;
      const double area = 0.5 * std::sqrt(det);
      // |grad|^2 of the P1 interpolant: sum over components of d^T G^{-1} d
      double s = 0;
      for (int q = 0; q < 3; ++q) {
        const double d1 = values[t[1]][q] - values[t[0]][q], d2 = values[t[2]][q] - values[t[0]][q];
        s += (g22 * d1 * d1 - 2 * g12 * d1 * d2 + g11 * d2 * d2) / det;
      }
      g = std::sqrt(std::max(0.0, s));
      e += std::pow(g, p) * area;
    }
    if (per_cell) per_cell->push_back(g);
  }
  return e;
}

/// Interpolated, renormalised trace of u on the sphere of radius R about c.
inline SphericalTrace restrict_to_sphere(const GridMap& u, const Vec3& c, double R, double p = 2.0,
                                         const SphereMesh* mesh = nullptr) {
  require(R > 0.0, ErrorCode::Precondition, "sphere radius must be positive");
  const DomainSpec& d = u.domain();
  SphericalTrace tr;
  tr.dim = u.dim();
  tr.centre = c;
  tr.radius = R;
  tr.p = p;
  tr.mesh = mesh ? mesh : &sphere_mesh_for(tr.dim, R, u.h());
  const std::size_t M = tr.mesh->size();
  tr.values.resize(M);
  tr.present.resize(M);
  std::size_t count = 0;
  for (std::size_t v = 0; v < M; ++v) {
    const Vec3 x = c + R * tr.mesh->dirs[v];
    tr.present[v] = d.contains(x, 1e-12) ? 1 : 0;
    count += tr.present[v];
    const Vec3 y = interpolate(u.field(), d.clamp(x));
    const double n = norm(y);
    tr.min_interpolant_norm = std::min(tr.min_interpolant_norm, n);
    tr.values[v] = n > 0 ? (1.0 / n) * y : u.dim() == 2 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
  }
  require(count > 0, ErrorCode::Precondition, "sphere does not meet the domain");
  tr.weak_interpolant = tr.min_interpolant_norm < kProjectionThreshold;
  tr.surface_energy = mesh_energy(*tr.mesh, tr.values, tr.present, R, p, &tr.tangential);
  return tr;
}

/// Signed solid angle of the spherical triangle (a, b, c).
inline double solid_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 2.0 * std::atan2(dot(a, cross(b, c)), 1.0 + dot(a, b) + dot(b, c) + dot(c, a));
}

/// Angle from a to b in the plane, in (-pi, pi].
inline double angle_increment(const Vec3& a, const Vec3& b) {
  return std::atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1]);
}

struct DegreeResult {
  int degree = 0;
  double residual = 0.0;  // |raw - degree|
  double raw = 0.0;
};

inline constexpr double kDegreeTolerance = 0.2;

inline DegreeResult round_degree(double raw, const std::string& where) {
  DegreeResult r;
  r.raw = raw;
  r.degree = int(std::lround(raw));
  r.residual = std::abs(raw - r.degree);
  require(r.residual <= kDegreeTolerance, ErrorCode::NonIntegerDegree,
          where + ": raw degree " + std::to_string(raw));
  return r;
}

/// Raw (unrounded) degree of mesh vertex values.
inline double raw_degree(const SphereMesh& m, const std::vector<Vec3>& values) {
  double s = 0;
  if (m.dim == 2) {
    for (std::size_t i = 0; i < m.size(); ++i) s += angle_increment(values[i], values[(i + 1) % m.size()]);
    return s / (2 * kPi);
  }
  for (const auto& t : m.tris) s += solid_angle(values[t[0]], values[t[1]], values[t[2]]);
  return s / (4 * kPi);
}

inline DegreeResult trace_degree(const SphericalTrace& tr) {
  require(tr.complete(), ErrorCode::Precondition, "sphere must lie inside the domain");
  return round_degree(raw_degree(*tr.mesh, tr.values), "sphere");
}

inline DegreeResult sphere_degree(const GridMap& u, const Vec3& c, double R) {
  for (const Vec3& w : sphere_mesh_for(u.dim(), R, u.h()).dirs)
    require(u.domain().contains(c + R * w, 1e-12), ErrorCode::Precondition, "sphere must lie inside the domain");
  return trace_degree(restrict_to_sphere(u, c, R));
}

}  // namespace sphmap
