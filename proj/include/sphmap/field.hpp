#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sphmap/core.hpp"
#include "sphmap/domain.hpp"

namespace sphmap {

/// Index box over nodes or cells, inclusive on both ends.
struct IndexBox {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{-1, -1, -1};

  template <class F>
  void for_each(F&& f) const {
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) f(i, j, k);
  }
};

/// Nodes (cells=false) or cells (cells=true) whose positions can fall
/// inside the axis-aligned box [c - R, c + R].
inline IndexBox index_box(const Lattice& L, const Vec3& c, double R, bool cells) {
  IndexBox b;
  const int top = cells ? L.n - 2 : L.n - 1;
  for (int a = 0; a < 3; ++a) {
    if (a >= L.dim) {
      b.lo[a] = b.hi[a] = 0;
      continue;
    }
    const double shift = cells ? 0.5 : 0.0;
    b.lo[a] = std::max(0, int(std::floor((c[a] - R - L.origin[a]) / L.h - shift)) - 1);
    b.hi[a] = std::min(top, int(std::ceil((c[a] + R - L.origin[a]) / L.h - shift)) + 1);
  }
  return b;
}

inline IndexBox all_nodes(const Lattice& L) {
  IndexBox b;
  for (int a = 0; a < 3; ++a) b.hi[a] = a < L.dim ? L.n - 1 : 0;
  return b;
}

inline IndexBox all_cells(const Lattice& L) {
  IndexBox b;
  for (int a = 0; a < 3; ++a) b.hi[a] = a < L.dim ? L.n - 2 : 0;
  return b;
}

/// Region of Omega over which cellwise quantities are summed.  A cell
/// belongs to a ball region when its centre lies strictly inside the ball.
struct Region {
  enum class Kind { All, Ball, Mask };
  Kind kind = Kind::All;
  Vec3 centre{0, 0, 0};
  double radius = 0.0;
  std::shared_ptr<const std::vector<std::uint8_t>> mask;

  static Region all() { return {}; }
  static Region ball(const Vec3& c, double r) {
    Region g;
    g.kind = Kind::Ball;
    g.centre = c;
    g.radius = r;
    return g;
  }
  static Region cells(std::vector<std::uint8_t> m) {
    Region g;
    g.kind = Kind::Mask;
    g.mask = std::make_shared<const std::vector<std::uint8_t>>(std::move(m));
    return g;
  }
};

/// N-vector field sampled on the nodes of a lattice covering the closed domain.
/// Inactive nodes lie outside Omega; cells are active when all corners are.
struct VectorField {
  DomainSpec domain;
  Lattice lattice;
  std::vector<Vec3> values;
  std::vector<std::uint8_t> node_active;
  std::vector<std::uint8_t> cell_active;

  static VectorField on(const DomainSpec& d, int resolution) {
    require(resolution >= 8, ErrorCode::Precondition, "resolution must be at least 8");
    VectorField f;
    f.domain = d;
    f.lattice = Lattice::for_domain(d, resolution);
    const Lattice& L = f.lattice;
    f.values.assign(L.node_count(), Vec3{0, 0, 0});
    f.node_active.assign(L.node_count(), 0);
    all_nodes(L).for_each([&](int i, int j, int k) {
      f.node_active[L.node_index(i, j, k)] = d.contains(L.node_position(i, j, k)) ? 1 : 0;
    });
    f.cell_active.assign(L.cell_count(), 0);
    all_cells(L).for_each([&](int i, int j, int k) {
      bool ok = true;
      const int kz = L.dim == 3 ? 1 : 0;
      for (int dk = 0; dk <= kz && ok; ++dk)
        for (int dj = 0; dj <= 1 && ok; ++dj)
          for (int di = 0; di <= 1 && ok; ++di) ok = f.node_active[L.node_index(i + di, j + dj, k + dk)] != 0;
      f.cell_active[L.cell_index(i, j, k)] = ok ? 1 : 0;
    });
    return f;
  }

  int dim() const { return lattice.dim; }
  double h() const { return lattice.h; }
  int resolution() const { return domain.shape == Shape::Box ? lattice.n - 1 : lattice.n - 2; }

  const Vec3& at(int i, int j, int k) const { return values[lattice.node_index(i, j, k)]; }

  bool same_lattice(const VectorField& o) const { return domain == o.domain && lattice == o.lattice; }

  bool cell_in(const Region& g, int i, int j, int k) const {
    const std::size_t c = lattice.cell_index(i, j, k);
    if (!cell_active[c]) return false;
    switch (g.kind) {
      case Region::Kind::All: return true;
      case Region::Kind::Ball: return distance(lattice.cell_centre(i, j, k), g.centre) < g.radius;
      case Region::Kind::Mask: return (*g.mask)[c] != 0;
    }
    return false;
  }

  /// Visit active cells of a region: f(i, j, k, cell_index).
  template <class F>
  void for_each_cell(const Region& g, F&& f) const {
    const IndexBox box = g.kind == Region::Kind::Ball ? index_box(lattice, g.centre, g.radius, true) : all_cells(lattice);
    box.for_each([&](int i, int j, int k) {
      if (cell_in(g, i, j, k)) f(i, j, k, lattice.cell_index(i, j, k));
    });
  }

  /// Visit active nodes strictly inside a ball: f(i, j, k, node_index, position).
  template <class F>
  void for_each_node_in_ball(const Vec3& c, double R, F&& f) const {
    index_box(lattice, c, R, false).for_each([&](int i, int j, int k) {
      const std::size_t n = lattice.node_index(i, j, k);
      if (!node_active[n]) return;
      const Vec3 x = lattice.node_position(i, j, k);
      if (distance(x, c) < R) f(i, j, k, n, x);
    });
  }

  double max_unit_deviation() const {
    double m = 0.0;
    for (std::size_t n = 0; n < values.size(); ++n)
      if (node_active[n]) m = std::max(m, std::abs(norm(values[n]) - 1.0));
    return m;
  }
};

inline constexpr double kUnitTolerance = 1e-12;

/// Unit-vector field u: Omega -> S^{N-1}.  Every active node holds a vector
/// with | |u| - 1 | <= 1e-12.
class GridMap {
 public:
  GridMap() = default;
  explicit GridMap(VectorField f) : f_(std::move(f)) {
    const double dev = f_.max_unit_deviation();
    require(dev <= kUnitTolerance, ErrorCode::Precondition,
            "field is not unit-valued (max deviation " + std::to_string(dev) + ")");
  }

  const VectorField& field() const { return f_; }
  const DomainSpec& domain() const { return f_.domain; }
  const Lattice& lattice() const { return f_.lattice; }
  const std::vector<Vec3>& values() const { return f_.values; }
  int dim() const { return f_.dim(); }
  double h() const { return f_.h(); }
  int resolution() const { return f_.resolution(); }

 private:
  VectorField f_;
};

// ---------------------------------------------------------------------------
// Presets

enum class PresetId { Hedgehog, Dipole, Constant, SmoothRandom, EquatorWrap };

inline PresetId parse_preset(const std::string& s) {
  if (s == "hedgehog") return PresetId::Hedgehog;
  if (s == "dipole") return PresetId::Dipole;
  if (s == "constant") return PresetId::Constant;
  if (s == "smooth-random") return PresetId::SmoothRandom;
  if (s == "equator-wrap") return PresetId::EquatorWrap;
  fail(ErrorCode::UnknownPreset, "'" + s + "'");
}

inline std::string to_string(PresetId p) {
  switch (p) {
    case PresetId::Hedgehog: return "hedgehog";
    case PresetId::Dipole: return "dipole";
    case PresetId::Constant: return "constant";
    case PresetId::SmoothRandom: return "smooth-random";
    case PresetId::EquatorWrap: return "equator-wrap";
  }
  return "?";
}

struct PresetParams {
  int degree = 1;
  std::optional<Vec3> centre;    // hedgehog singularity
  std::optional<Vec3> positive;  // dipole: charge +degree
  std::optional<Vec3> negative;  // dipole: charge -degree
  std::optional<Vec3> xi;        // constant value; default e_N
  std::uint64_t seed = 1;
};

/// Cell centre of the lattice nearest to the domain centre.
inline Vec3 default_singularity(const DomainSpec& d, const Lattice& L) {
  if (d.shape == Shape::Ball) return {0, 0, 0};
  Vec3 c = d.centre();
  for (int a = 0; a < d.dim; ++a) c[a] = L.origin[a] + (std::floor((c[a] - L.origin[a]) / L.h) + 0.5) * L.h;
  return c;
}

inline std::pair<Vec3, Vec3> default_dipole(const DomainSpec& d, const Lattice& L) {
  const Vec3 c = default_singularity(d, L);
  const Vec3 off{0.1237, 0.0311, 0.0};
  return {c + off, c - off};
}

namespace detail {

inline Vec3 vortex(double angle, int dim) {
  (void)dim;
  return {std::cos(angle), std::sin(angle), 0.0};
}

/// Right-handed frame (e1, e2) completing e.
inline std::pair<Vec3, Vec3> complete_frame(const Vec3& e) {
  const Vec3 t = std::abs(e[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 e1 = normalized(t - dot(t, e) * e);
  const Vec3 e2 = cross(e, e1);
  return {e1, e2};
}

inline Vec3 hedgehog_value(const Vec3& x, const Vec3& c, int d, int dim) {
  const Vec3 y = x - c;
  const double rho = norm(y);
  if (rho == 0.0) return dim == 2 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
  if (dim == 2) {
    if (d == 1) return {y[0] / rho, y[1] / rho, 0.0};
    return vortex(d * std::atan2(y[1], y[0]), 2);
  }
  if (d == 1) return (1.0 / rho) * y;
  const double rxy = std::hypot(y[0], y[1]);
  const double ct = y[2] / rho, st = rxy / rho;
  const double phi = std::atan2(y[1], y[0]);
  return {st * std::cos(d * phi), st * std::sin(d * phi), ct};
}

/// Dipole with charge +d at P and -d at Q.  N=2: e^{i d (arg(x-P) - arg(x-Q))}.
/// N=3: polar angle difference construction along the axis Q->P; equal to the
/// axis direction far away and on the axis outside [Q,P].
inline Vec3 dipole_value(const Vec3& x, Vec3 P, Vec3 Q, int d, int dim) {
  if (d < 0) {
    std::swap(P, Q);
    d = -d;
  }
  const Vec3 a = x - P, b = x - Q;
  if (dim == 2) {
    const double ang = std::atan2(a[1], a[0]) - std::atan2(b[1], b[0]);
    return vortex(d * ang, 2);
  }
  const Vec3 e = normalized(P - Q);
  const auto [e1, e2] = complete_frame(e);
  const double thP = std::atan2(norm(cross(a, e)), dot(a, e));
  const double thQ = std::atan2(norm(cross(b, e)), dot(b, e));
  const double T = std::clamp(thP - thQ, 0.0, kPi);
  const Vec3 perp = b - dot(b, e) * e;
  const double pn = norm(perp);
  const double phi = pn > 1e-300 ? std::atan2(dot(perp, e2), dot(perp, e1)) : 0.0;
  const Vec3 around = std::cos(d * phi) * e1 + std::sin(d * phi) * e2;
  return normalized(std::cos(T) * e + std::sin(T) * around);
}

}  // namespace detail

/// Analytic preset u(x) together with its singular points.
struct PresetFunction {
  std::function<Vec3(const Vec3&)> eval;
  std::vector<Vec3> singularities;
};

inline PresetFunction preset_function(const DomainSpec& d, const Lattice& L, PresetId id, const PresetParams& prm) {
  const int dim = d.dim;
  PresetFunction pf;
  switch (id) {
    case PresetId::Hedgehog: {
      const Vec3 c = prm.centre.value_or(default_singularity(d, L));
      const int deg = prm.degree;
      pf.eval = [c, deg, dim](const Vec3& x) { return detail::hedgehog_value(x, c, deg, dim); };
      pf.singularities = {c};
      break;
    }
    case PresetId::Dipole: {
      auto [P0, Q0] = default_dipole(d, L);
      const Vec3 P = prm.positive.value_or(P0), Q = prm.negative.value_or(Q0);
      require(distance(P, Q) > 0.0, ErrorCode::Precondition, "dipole endpoints coincide");
      require(dim == 2 || std::abs(prm.degree) == 1, ErrorCode::Precondition, "3-d dipole supports degree +-1");
      const int deg = prm.degree;
      pf.eval = [P, Q, deg, dim](const Vec3& x) { return detail::dipole_value(x, P, Q, deg, dim); };
      pf.singularities = {P, Q};
      break;
    }
    case PresetId::Constant: {
      Vec3 xi = prm.xi.value_or(dim == 2 ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
      if (dim == 2) xi[2] = 0.0;
      require(norm(xi) > 0.0, ErrorCode::Precondition, "constant preset needs a nonzero vector");
      xi = normalized(xi);
      pf.eval = [xi](const Vec3&) { return xi; };
      break;
    }
    case PresetId::SmoothRandom: {
      std::mt19937_64 rng(prm.seed);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      std::uniform_int_distribution<int> kdist(-2, 2);
      struct Mode {
        Vec3 k;
        double phase, amp;
      };
      auto draw = [&](int count) {
        std::vector<Mode> m;
        for (int i = 0; i < count; ++i) {
          Vec3 k{0, 0, 0};
          while (norm(k) == 0.0)
            for (int a = 0; a < dim; ++a) k[a] = kdist(rng);
          m.push_back({k, 2 * kPi * unif(rng), 0.5 + 0.5 * unif(rng)});
        }
        double total = 0;
        for (auto& x : m) total += x.amp;
        for (auto& x : m) x.amp /= total;
        return m;
      };
      const auto polar = draw(4), azim = draw(4);
      auto series = [](const std::vector<Mode>& m, const Vec3& x) {
        double s = 0;
        for (const auto& md : m) s += md.amp * std::sin(kPi * dot(md.k, x) + md.phase);
        return s;
      };
      pf.eval = [polar, azim, series, dim](const Vec3& x) -> Vec3 {
        const double phi = 1.5 * series(azim, x);
        if (dim == 2) return detail::vortex(phi, 2);
        const double th = 1.0 + 0.35 * series(polar, x);
        return {std::sin(th) * std::cos(phi), std::sin(th) * std::sin(phi), std::cos(th)};
      };
      break;
    }
    case PresetId::EquatorWrap: {
      const double freq = d.shape == Shape::Box ? 2.0 * kPi : kPi;
      pf.eval = [freq, dim](const Vec3& x) -> Vec3 {
        const double a = freq * x[0];
        if (dim == 2) return detail::vortex(a, 2);
        const double b = 0.5 * std::sin(kPi * x[1]);
        return {std::cos(b) * std::cos(a), std::cos(b) * std::sin(a), std::sin(b)};
      };
      break;
    }
  }
  return pf;
}

/// Samples a preset on the lattice of the given resolution.
inline GridMap make_map(const DomainSpec& d, int resolution, PresetId id, const PresetParams& prm = {}) {
  VectorField f = VectorField::on(d, resolution);
  const Lattice& L = f.lattice;
  const PresetFunction pf = preset_function(d, L, id, prm);
  for (const Vec3& s : pf.singularities) {
    bool on_node = true;
    for (int a = 0; a < d.dim; ++a) {
      const double c = (s[a] - L.origin[a]) / L.h;
      if (std::abs(c - std::round(c)) > 1e-9) on_node = false;
    }
    require(!on_node, ErrorCode::SingularityOnNode, "singular point coincides with a lattice node");
    require(d.contains(s, -1e-12), ErrorCode::Precondition, "singular point must lie inside the domain");
  }
  all_nodes(L).for_each([&](int i, int j, int k) {
    f.values[L.node_index(i, j, k)] = normalized(pf.eval(L.node_position(i, j, k)));
  });
  return GridMap(std::move(f));
}

// ---------------------------------------------------------------------------
// Finite differences

/// 3x3 matrix; row a = component, column j = derivative direction.
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Forward-difference gradient on a cell: each partial derivative is the mean
/// of the difference quotients over the cell edges in that direction.
inline Mat3 cell_gradient(const VectorField& f, int i, int j, int k) {
  const Lattice& L = f.lattice;
  Mat3 G{};
  const double inv = 1.0 / L.h;
  if (L.dim == 2) {
    const Vec3 &u00 = f.at(i, j, 0), &u10 = f.at(i + 1, j, 0), &u01 = f.at(i, j + 1, 0), &u11 = f.at(i + 1, j + 1, 0);
    for (int a = 0; a < 2; ++a) {
      G[a][0] = 0.5 * inv * ((u10[a] - u00[a]) + (u11[a] - u01[a]));
      G[a][1] = 0.5 * inv * ((u01[a] - u00[a]) + (u11[a] - u10[a]));
    }
    return G;
  }
  const Vec3* c[8];
  for (int q = 0; q < 8; ++q) c[q] = &f.at(i + (q & 1), j + ((q >> 1) & 1), k + ((q >> 2) & 1));
  for (int a = 0; a < 3; ++a) {
    G[a][0] = 0.25 * inv * ((*c[1])[a] - (*c[0])[a] + (*c[3])[a] - (*c[2])[a] + (*c[5])[a] - (*c[4])[a] + (*c[7])[a] - (*c[6])[a]);
    G[a][1] = 0.25 * inv * ((*c[2])[a] - (*c[0])[a] + (*c[3])[a] - (*c[1])[a] + (*c[6])[a] - (*c[4])[a] + (*c[7])[a] - (*c[5])[a]);
    G[a][2] = 0.25 * inv * ((*c[4])[a] - (*c[0])[a] + (*c[5])[a] - (*c[1])[a] + (*c[6])[a] - (*c[2])[a] + (*c[7])[a] - (*c[3])[a]);
  }
  return G;
}

inline Vec3 cell_average(const VectorField& f, int i, int j, int k) {
  Vec3 s{0, 0, 0};
  if (f.dim() == 2) {
    s = f.at(i, j, 0) + f.at(i + 1, j, 0) + f.at(i, j + 1, 0) + f.at(i + 1, j + 1, 0);
    return 0.25 * s;
  }
  for (int q = 0; q < 8; ++q) s += f.at(i + (q & 1), j + ((q >> 1) & 1), k + ((q >> 2) & 1));
  return 0.125 * s;
}

inline double frobenius(const Mat3& G) {
  double s = 0;
  for (const auto& r : G)
    for (double x : r) s += x * x;
  return std::sqrt(s);
}

inline Mat3 operator-(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y) r[x][y] = a[x][y] - b[x][y];
  return r;
}

/// Cellwise scalar, vector or matrix data (components per cell).
struct CellField {
  DomainSpec domain;
  Lattice lattice;
  int components = 1;
  std::vector<double> data;
  std::vector<std::uint8_t> active;

  double magnitude(std::size_t c) const {
    double s = 0;
    for (int q = 0; q < components; ++q) s += data[c * components + q] * data[c * components + q];
    return std::sqrt(s);
  }
};

/// Gradient field: N*N components per cell, row-major (component, direction).
using GradientField = CellField;

inline GradientField gradient(const GridMap& u) {
  const VectorField& f = u.field();
  const int N = f.dim();
  GradientField g{f.domain, f.lattice, N * N, std::vector<double>(f.lattice.cell_count() * N * N, 0.0), f.cell_active};
  f.for_each_cell(Region::all(), [&](int i, int j, int k, std::size_t c) {
    const Mat3 G = cell_gradient(f, i, j, k);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) g.data[c * N * N + a * N + b] = G[a][b];
  });
  return g;
}

// ---------------------------------------------------------------------------
// Norms

struct LpValue {
  double value = 0.0;
  bool empty_region = false;
};

/// Midpoint-rule (sum |f|^p h^N)^{1/p} over active cells of a region.
inline LpValue lp_norm(const CellField& f, double p, const Region& g = Region::all()) {
  require(p >= 1.0 && std::isfinite(p), ErrorCode::Precondition, "p must be finite and >= 1");
  VectorField shape;
  shape.domain = f.domain;
  shape.lattice = f.lattice;
  shape.cell_active = f.active;
  double s = 0;
  std::size_t count = 0;
  shape.for_each_cell(g, [&](int, int, int, std::size_t c) {
    s += std::pow(f.magnitude(c), p);
    ++count;
  });
  LpValue r;
  r.empty_region = count == 0;
  r.value = std::pow(s * f.lattice.cell_volume(), 1.0 / p);
  return r;
}

/// Measure of a region (active cells only).
inline double region_measure(const VectorField& f, const Region& g) {
  std::size_t count = 0;
  f.for_each_cell(g, [&](int, int, int, std::size_t) { ++count; });
  return count * f.lattice.cell_volume();
}

/// Integral of |grad u|^p over a region.
inline double gradient_energy(const VectorField& f, double p, const Region& g = Region::all()) {
  double s = 0;
  f.for_each_cell(g, [&](int i, int j, int k, std::size_t) { s += std::pow(frobenius(cell_gradient(f, i, j, k)), p); });
  return s * f.lattice.cell_volume();
}

inline double gradient_lp(const VectorField& f, double p, const Region& g = Region::all()) {
  return std::pow(gradient_energy(f, p, g), 1.0 / p);
}

struct DifferenceNorms {
  double values = 0.0;    // ||u - v||_{L^p}
  double gradient = 0.0;  // ||grad u - grad v||_{L^p}
  double w1p() const { return values + gradient; }
};

inline DifferenceNorms difference_norms(const VectorField& u, const VectorField& v, double p, const Region& g = Region::all()) {
  require(u.same_lattice(v), ErrorCode::LatticeMismatch, "fields live on different lattices");
  double sv = 0, sg = 0;
  u.for_each_cell(g, [&](int i, int j, int k, std::size_t) {
    sv += std::pow(norm(cell_average(u, i, j, k) - cell_average(v, i, j, k)), p);
    sg += std::pow(frobenius(cell_gradient(u, i, j, k) - cell_gradient(v, i, j, k)), p);
  });
  const double hv = u.lattice.cell_volume();
  return {std::pow(sv * hv, 1.0 / p), std::pow(sg * hv, 1.0 / p)};
}

/// ||u - v||_{L^p} + ||grad u - grad v||_{L^p}.
inline double w1p_distance(const GridMap& u, const GridMap& v, double p) {
  return difference_norms(u.field(), v.field(), p).w1p();
}

// ---------------------------------------------------------------------------
// Interpolation, mollification, projection

/// Multilinear interpolation of node values at an arbitrary point (clamped to
/// the lattice extent).
inline Vec3 interpolate(const VectorField& f, const Vec3& x) {
  const Lattice& L = f.lattice;
  int idx[3] = {0, 0, 0};
  double w[3] = {0, 0, 0};
  for (int a = 0; a < L.dim; ++a) {
    double c = std::clamp(L.coord(x, a), 0.0, double(L.n - 1));
    int i0 = std::min(int(std::floor(c)), L.n - 2);
    idx[a] = i0;
    w[a] = c - i0;
  }
  Vec3 s{0, 0, 0};
  const int kz = L.dim == 3 ? 1 : 0;
  for (int dk = 0; dk <= kz; ++dk)
    for (int dj = 0; dj <= 1; ++dj)
      for (int di = 0; di <= 1; ++di) {
        const double wt = (di ? w[0] : 1 - w[0]) * (dj ? w[1] : 1 - w[1]) * (L.dim == 3 ? (dk ? w[2] : 1 - w[2]) : 1.0);
        if (wt == 0.0) continue;
        s += wt * f.at(idx[0] + di, idx[1] + dj, idx[2] + dk);
      }
  return s;
}

/// Normalised compactly supported bump profile exp(-1/(1-t^2)), t in [0,1).
inline double bump_profile(double t) { return t < 1.0 ? std::exp(-1.0 / (1.0 - t * t)) : 0.0; }

/// Convolution of f with a unit-mass bump of radius epsilon, by direct
/// summation over active nodes.  Nodes outside the region are unchanged.
/// The kernel is renormalised over active nodes, so near the boundary its
/// mass stays inside Omega.
inline VectorField mollify(const VectorField& f, double epsilon, const Region& g = Region::all()) {
  const Lattice& L = f.lattice;
  require(epsilon >= L.h * (1 - 1e-12), ErrorCode::EpsilonBelowSpacing, "epsilon must be at least the lattice spacing");
  require(g.kind != Region::Kind::Mask, ErrorCode::Precondition, "mollify regions are balls or the whole domain");
  struct Tap {
    int di, dj, dk;
    double w;
  };
  std::vector<Tap> taps;
  const int m = int(std::ceil(epsilon / L.h));
  const int mz = L.dim == 3 ? m : 0;
  for (int dk = -mz; dk <= mz; ++dk)
    for (int dj = -m; dj <= m; ++dj)
      for (int di = -m; di <= m; ++di) {
        const double t = L.h * std::sqrt(double(di * di + dj * dj + dk * dk)) / epsilon;
        if (t < 1.0) taps.push_back({di, dj, dk, bump_profile(t)});
      }
  VectorField out = f;
  auto visit = [&](int i, int j, int k, std::size_t n) {
    Vec3 s{0, 0, 0};
    double wsum = 0;
    for (const Tap& t : taps) {
      const int a = i + t.di, b = j + t.dj, c = k + t.dk;
      if (a < 0 || b < 0 || c < 0 || a >= L.n || b >= L.n || (L.dim == 3 && c >= L.n)) continue;
      const std::size_t q = L.node_index(a, b, c);
      if (!f.node_active[q]) continue;
      s += t.w * f.values[q];
      wsum += t.w;
    }
    out.values[n] = (1.0 / wsum) * s;
  };
  if (g.kind == Region::Kind::Ball) {
    f.for_each_node_in_ball(g.centre, g.radius, [&](int i, int j, int k, std::size_t n, const Vec3&) { visit(i, j, k, n); });
  } else {
    all_nodes(L).for_each([&](int i, int j, int k) {
      const std::size_t n = L.node_index(i, j, k);
      if (f.node_active[n]) visit(i, j, k, n);
    });
  }
  return out;
}

inline constexpr double kProjectionThreshold = 0.1;

/// Nodewise f/|f|.  Fails when an active node has |f| below the threshold.
inline GridMap project_to_sphere(VectorField f, double threshold = kProjectionThreshold) {
  double worst = std::numeric_limits<double>::max();
  std::size_t worst_node = 0;
  for (std::size_t n = 0; n < f.values.size(); ++n) {
    const double len = norm(f.values[n]);
    if (f.node_active[n] && len < worst) {
      worst = len;
      worst_node = n;
    }
    if (len > 0.0) f.values[n] = (1.0 / len) * f.values[n];
  }
  if (worst < threshold) {
    const Lattice& L = f.lattice;
    const int i = int(worst_node % L.n), j = int((worst_node / L.n) % L.n), k = int(worst_node / (std::size_t(L.n) * L.n));
    const Vec3 x = L.node_position(i, j, k);
    fail(ErrorCode::NearZeroVector, "|f| = " + std::to_string(worst) + " at node (" + std::to_string(x[0]) + ", " +
                                        std::to_string(x[1]) + ", " + std::to_string(x[2]) + ")");
  }
  return GridMap(std::move(f));
}

}  // namespace sphmap
