#pragma once

#include <map>
#include <numeric>
#include <vector>

#include "sphmap/field.hpp"
#include "sphmap/sphere.hpp"
#include "sphmap/test_function.hpp"

namespace sphmap {

/// D(u) on one cell: D_j = det of the gradient matrix with column j replaced
/// by the cell-averaged u.
inline Vec3 cell_d(const Mat3& G, const Vec3& u, int dim) {
  if (dim == 2) {
    // D_1 = det[u, u_y],  D_2 = det[u_x, u]
    return {u[0] * G[1][1] - u[1] * G[0][1], G[0][0] * u[1] - G[1][0] * u[0], 0.0};
  }
  auto col = [&](int j) { return Vec3{G[0][j], G[1][j], G[2][j]}; };
  const Vec3 ux = col(0), uy = col(1), uz = col(2);
  return {dot(u, cross(uy, uz)), dot(ux, cross(u, uz)), dot(ux, cross(uy, u))};
}

inline Vec3 cell_d(const VectorField& f, int i, int j, int k) {
  return cell_d(cell_gradient(f, i, j, k), cell_average(f, i, j, k), f.dim());
}

/// Cellwise D(u); N components per cell.
using DField = CellField;

inline DField d_field(const VectorField& f) {
  const int N = f.dim();
  DField D{f.domain, f.lattice, N, std::vector<double>(f.lattice.cell_count() * N, 0.0), f.cell_active};
  f.for_each_cell(Region::all(), [&](int i, int j, int k, std::size_t c) {
    const Vec3 d = cell_d(f, i, j, k);
    for (int a = 0; a < N; ++a) D.data[c * N + a] = d[a];
  });
  return D;
}

inline DField d_field(const GridMap& u) { return d_field(u.field()); }

/// ||D(u) - D(v)||_{L^1}.
inline double d_distance_l1(const DField& a, const DField& b) {
  require(a.lattice == b.lattice, ErrorCode::LatticeMismatch, "D fields on different lattices");
  double s = 0;
  const int N = a.components;
  for (std::size_t c = 0; c < a.active.size(); ++c) {
    if (!a.active[c]) continue;
    double q = 0;
    for (int k = 0; k < N; ++k) q += (a.data[c * N + k] - b.data[c * N + k]) * (a.data[c * N + k] - b.data[c * N + k]);
    s += std::sqrt(q);
  }
  return s * a.lattice.cell_volume();
}

/// Node samples of a test function on the lattice.
inline std::vector<double> sample_nodes(const Lattice& L, const TestFunction& zeta) {
  std::vector<double> z(L.node_count(), 0.0);
  all_nodes(L).for_each([&](int i, int j, int k) { z[L.node_index(i, j, k)] = zeta(L.node_position(i, j, k)); });
  return z;
}

/// Cell gradient of node scalars with the same stencil as the field gradient.
inline Vec3 scalar_cell_gradient(const Lattice& L, const std::vector<double>& z, int i, int j, int k) {
  const double inv = 1.0 / L.h;
  auto Z = [&](int a, int b, int c) { return z[L.node_index(i + a, j + b, k + c)]; };
  if (L.dim == 2) {
    return {0.5 * inv * (Z(1, 0, 0) - Z(0, 0, 0) + Z(1, 1, 0) - Z(0, 1, 0)),
            0.5 * inv * (Z(0, 1, 0) - Z(0, 0, 0) + Z(1, 1, 0) - Z(1, 0, 0)), 0.0};
  }
  Vec3 g{0, 0, 0};
  for (int q = 0; q < 8; ++q) {
    const int a = q & 1, b = (q >> 1) & 1, c = (q >> 2) & 1;
    const double v = Z(a, b, c);
    g[0] += (a ? v : -v);
    g[1] += (b ? v : -v);
    g[2] += (c ? v : -v);
  }
  return (0.25 * inv) * g;
}

/// -(1/N) sum_cells D . grad_h zeta h^N.  grad_h zeta uses node samples of
/// zeta, so the sum is a discrete integration by parts against div_h D.
inline double pairing_with(const DField& D, const TestFunction& zeta) {
  require(zeta.support_inside(D.domain), ErrorCode::SupportTouchesBoundary, "test function " + zeta.id());
  const Lattice& L = D.lattice;
  const int N = L.dim;
  // only cells meeting the support contribute
  const Vec3 c = zeta.centre();
  const double R = zeta.support_radius();
  IndexBox nb = index_box(L, c, R + L.h, false), cb = index_box(L, c, R, true);
  std::vector<double> z(L.node_count(), 0.0);
  nb.for_each([&](int i, int j, int k) { z[L.node_index(i, j, k)] = zeta(L.node_position(i, j, k)); });
  double s = 0;
  cb.for_each([&](int i, int j, int k) {
    const std::size_t q = L.cell_index(i, j, k);
    if (!D.active[q]) return;
    const Vec3 g = scalar_cell_gradient(L, z, i, j, k);
    for (int a = 0; a < N; ++a) s += D.data[q * N + a] * g[a];
  });
  return -s * L.cell_volume() / N;
}

inline double jac_pairing(const GridMap& u, const TestFunction& zeta) { return pairing_with(d_field(u), zeta); }

// ---------------------------------------------------------------------------
// Charges

struct Charge {
  Vec3 x{0, 0, 0};
  int d = 0;
};

/// Finite list of point singularities with integer degrees.
struct ChargeSet {
  DomainSpec domain;
  std::vector<Charge> charges;

  int total_degree() const {
    int s = 0;
    for (const auto& c : charges) s += c.d;
    return s;
  }
  std::size_t expanded_count() const {
    std::size_t s = 0;
    for (const auto& c : charges) s += std::size_t(std::abs(c.d));
    return s;
  }
  /// Positive and negative points, each repeated |d| times.
  std::pair<std::vector<Vec3>, std::vector<Vec3>> expanded() const {
    std::vector<Vec3> pos, neg;
    for (const auto& c : charges)
      for (int k = 0; k < std::abs(c.d); ++k) (c.d > 0 ? pos : neg).push_back(c.x);
    return {pos, neg};
  }
  bool empty() const { return charges.empty(); }
  std::size_t size() const { return charges.size(); }
};

namespace detail {

/// Degree of u on the boundary of the node box [lo, hi] (inclusive node
/// indices).  Square faces are split along the diagonal from their lowest
/// corner, so shared faces of adjacent boxes cancel exactly.
inline double box_raw_degree(const VectorField& f, const std::array<int, 3>& lo, const std::array<int, 3>& hi) {
  const Lattice& L = f.lattice;
  if (f.dim() == 2) {
    double s = 0;
    auto U = [&](int i, int j) -> const Vec3& { return f.at(i, j, 0); };
    for (int i = lo[0]; i < hi[0]; ++i) s += angle_increment(U(i, lo[1]), U(i + 1, lo[1]));
    for (int j = lo[1]; j < hi[1]; ++j) s += angle_increment(U(hi[0], j), U(hi[0], j + 1));
    for (int i = hi[0]; i > lo[0]; --i) s += angle_increment(U(i, hi[1]), U(i - 1, hi[1]));
    for (int j = hi[1]; j > lo[1]; --j) s += angle_increment(U(lo[0], j), U(lo[0], j - 1));
    return s / (2 * kPi);
  }
  double s = 0;
  for (int n = 0; n < 3; ++n) {
    for (int side = 0; side < 2; ++side) {
      int a = (n + 1) % 3, b = (n + 2) % 3;
      if (side == 0) std::swap(a, b);
      std::array<int, 3> q{0, 0, 0};
      q[n] = side ? hi[n] : lo[n];
      for (int ia = lo[a]; ia < hi[a]; ++ia)
        for (int ib = lo[b]; ib < hi[b]; ++ib) {
          q[a] = ia;
          q[b] = ib;
          const Vec3& u0 = f.values[L.node_index(q[0], q[1], q[2])];
          q[a] = ia + 1;
          const Vec3& u1 = f.values[L.node_index(q[0], q[1], q[2])];
          q[b] = ib + 1;
          const Vec3& u2 = f.values[L.node_index(q[0], q[1], q[2])];
          q[a] = ia;
          const Vec3& u3 = f.values[L.node_index(q[0], q[1], q[2])];
          s += solid_angle(u0, u1, u2) + solid_angle(u0, u2, u3);
        }
    }
  }
  return s / (4 * kPi);
}

inline std::string box_name(const std::array<int, 3>& lo, const std::array<int, 3>& hi) {
  return "cube nodes [" + std::to_string(lo[0]) + "," + std::to_string(lo[1]) + "," + std::to_string(lo[2]) + "]-[" +
         std::to_string(hi[0]) + "," + std::to_string(hi[1]) + "," + std::to_string(hi[2]) + "]";
}

inline int box_degree(const VectorField& f, const std::array<int, 3>& lo, const std::array<int, 3>& hi) {
  return round_degree(box_raw_degree(f, lo, hi), box_name(lo, hi)).degree;
}

/// Bisect a box of nonzero degree down to single cells.
inline void refine_box(const VectorField& f, const std::array<int, 3>& lo, const std::array<int, 3>& hi, int deg,
                       std::vector<Charge>& out) {
  const int N = f.dim();
  bool leaf = true;
  for (int a = 0; a < N; ++a) leaf = leaf && hi[a] - lo[a] == 1;
  if (leaf) {
    Vec3 x = f.lattice.cell_centre(lo[0], lo[1], lo[2]);
    out.push_back({x, deg});
    return;
  }
  std::array<int, 3> mid{};
  for (int a = 0; a < 3; ++a) mid[a] = a < N && hi[a] - lo[a] >= 2 ? (lo[a] + hi[a]) / 2 : -1;
  const int children = 1 << N;
  for (int c = 0; c < children; ++c) {
    std::array<int, 3> l = lo, h = hi;
    bool valid = true;
    for (int a = 0; a < N; ++a) {
      const bool upper = (c >> a) & 1;
      if (mid[a] < 0) {
        if (upper) valid = false;
        continue;
      }
      if (upper) l[a] = mid[a];
      else h[a] = mid[a];
    }
    if (!valid) continue;
    const int d = box_degree(f, l, h);
    if (d != 0) refine_box(f, l, h, d, out);
  }
}

}  // namespace detail

inline constexpr double kDefaultCellScaleFactor = 4.0;

/// Cube-degree charge detection.  Cubes of side cell_scale tile the lattice;
/// nonzero cubes are refined to the cell containing each charge, and charges
/// in adjacent nonzero cubes are merged into their degree-weighted centroid.
inline ChargeSet detect_charges(const VectorField& f, double cell_scale) {
  const Lattice& L = f.lattice;
  const int N = f.dim();
  require(cell_scale >= 4.0 * L.h * (1 - 1e-9), ErrorCode::Precondition, "cell_scale must be at least 4h");
  const int m = std::max(1, int(std::lround(cell_scale / L.h)));
  const int C = L.n - 1;
  const int nb = (C + m - 1) / m;
  const int nbz = N == 3 ? nb : 1;
  struct Block {
    int d = 0;
    std::vector<Charge> leaves;
  };
  std::map<std::array<int, 3>, Block> nonzero;
  for (int bk = 0; bk < nbz; ++bk)
    for (int bj = 0; bj < nb; ++bj)
      for (int bi = 0; bi < nb; ++bi) {
        std::array<int, 3> lo{bi * m, bj * m, N == 3 ? bk * m : 0};
        std::array<int, 3> hi{std::min(C, lo[0] + m), std::min(C, lo[1] + m), N == 3 ? std::min(C, lo[2] + m) : 0};
        bool active = true;
        for (int k = lo[2]; k < std::max(hi[2], lo[2] + 1) && active; ++k)
          for (int j = lo[1]; j < hi[1] && active; ++j)
            for (int i = lo[0]; i < hi[0] && active; ++i) active = f.cell_active[L.cell_index(i, j, k)] != 0;
        if (!active) continue;
        const int d = detail::box_degree(f, lo, hi);
        if (d == 0) continue;
        Block b;
        b.d = d;
        detail::refine_box(f, lo, hi, d, b.leaves);
        nonzero[{bi, bj, bk}] = std::move(b);
      }
  // connected components of nonzero blocks, lexicographic order
  std::map<std::array<int, 3>, int> comp;
  std::vector<std::vector<std::array<int, 3>>> groups;
  for (const auto& [key, blk] : nonzero) {
    if (comp.count(key)) continue;
    const int id = int(groups.size());
    groups.emplace_back();
    std::vector<std::array<int, 3>> stack{key};
    comp[key] = id;
    while (!stack.empty()) {
      const auto cur = stack.back();
      stack.pop_back();
      groups[id].push_back(cur);
      for (int dk = (N == 3 ? -1 : 0); dk <= (N == 3 ? 1 : 0); ++dk)
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            const std::array<int, 3> nk{cur[0] + di, cur[1] + dj, cur[2] + dk};
            if (nonzero.count(nk) && !comp.count(nk)) {
              comp[nk] = id;
              stack.push_back(nk);
            }
          }
    }
  }
  ChargeSet out;
  out.domain = f.domain;
  for (const auto& g : groups) {
    int d = 0;
    double w = 0;
    Vec3 x{0, 0, 0};
    for (const auto& key : g)
      for (const Charge& c : nonzero[key].leaves) {
        d += c.d;
        w += std::abs(c.d);
        x += double(std::abs(c.d)) * c.x;
      }
    if (d == 0 || w == 0) continue;
    out.charges.push_back({(1.0 / w) * x, d});
  }
  return out;
}

inline ChargeSet detect_charges(const GridMap& u, double cell_scale) { return detect_charges(u.field(), cell_scale); }

inline double default_cell_scale(const Lattice& L) { return kDefaultCellScaleFactor * L.h; }

/// Charges strictly inside a ball.
inline ChargeSet charges_in_ball(const ChargeSet& s, const Vec3& c, double R) {
  ChargeSet out;
  out.domain = s.domain;
  for (const auto& q : s.charges)
    if (distance(q.x, c) < R) out.charges.push_back(q);
  return out;
}

}  // namespace sphmap
