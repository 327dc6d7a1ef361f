#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "sphmap/jacobian.hpp"

namespace sphmap {

struct Segment {
  Vec3 a{0, 0, 0};
  Vec3 b{0, 0, 0};
  double length() const { return distance(a, b); }
};

/// Distance from x to the segment [a, b].
inline double point_segment_distance(const Vec3& x, const Segment& s) {
  const Vec3 d = s.b - s.a;
  const double dd = dot(d, d);
  const double t = dd > 0 ? std::clamp(dot(x - s.a, d) / dd, 0.0, 1.0) : 0.0;
  return distance(x, s.a + t * d);
}

struct MatchedPair {
  Vec3 positive{0, 0, 0};
  Vec3 negative{0, 0, 0};
  bool positive_on_boundary = false;  // positive endpoint is a boundary projection
  bool negative_on_boundary = false;
  double cost = 0.0;
};

/// Optimal pairing of expanded charges, with the boundary as a sink.
struct MatchingSolution {
  double L = 0.0;
  std::vector<MatchedPair> pairs;

  std::vector<Segment> segments() const {
    std::vector<Segment> s;
    for (const auto& p : pairs) s.push_back({p.negative, p.positive});
    return s;
  }
};

/// Min-cost perfect assignment on a square cost matrix (Hungarian method with
/// potentials).  Returns the column assigned to each row.
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& a) {
  const int n = int(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row[p[j] - 1] = j - 1;
  return row;
}

/// Exact minimal connection.  Rows are positive charges then one boundary
/// dummy per negative charge; columns are negative charges then one dummy
/// per positive charge.
inline MatchingSolution minimal_connection(const ChargeSet& cs, const DomainSpec& dom) {
  const auto [P, Q] = cs.expanded();
  const int np = int(P.size()), nq = int(Q.size()), n = np + nq;
  MatchingSolution sol;
  if (n == 0) return sol;
  std::vector<std::vector<double>> c(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i < np && j < nq) c[i][j] = distance(P[i], Q[j]);
      else if (i < np) c[i][j] = dom.boundary_distance(P[i]);
      else if (j < nq) c[i][j] = dom.boundary_distance(Q[j]);
    }
  const std::vector<int> col = hungarian(c);
  for (int i = 0; i < n; ++i) {
    const int j = col[i];
    MatchedPair m;
    if (i < np && j < nq) {
      m.positive = P[i];
      m.negative = Q[j];
    } else if (i < np) {
      m.positive = P[i];
      m.negative = dom.project_to_boundary(P[i]);
      m.negative_on_boundary = true;
    } else if (j < nq) {
      m.negative = Q[j];
      m.positive = dom.project_to_boundary(Q[j]);
      m.positive_on_boundary = true;
    } else {
      continue;
    }
    m.cost = c[i][j];
    sol.L += m.cost;
    sol.pairs.push_back(m);
  }
  return sol;
}

inline constexpr std::size_t kBruteForceLimit = 8;

/// Exhaustive minimum over all pairings with the boundary option.
inline double brute_force_connection(const ChargeSet& cs, const DomainSpec& dom) {
  require(cs.expanded_count() <= kBruteForceLimit, ErrorCode::TooManyCharges,
          std::to_string(cs.expanded_count()) + " expanded charges (limit 8)");
  const auto [P, Q] = cs.expanded();
  std::vector<char> used(Q.size(), 0);
  std::function<double(std::size_t)> go = [&](std::size_t i) -> double {
    if (i == P.size()) {
      double s = 0;
      for (std::size_t j = 0; j < Q.size(); ++j)
        if (!used[j]) s += dom.boundary_distance(Q[j]);
      return s;
    }
    double best = dom.boundary_distance(P[i]) + go(i + 1);
    for (std::size_t j = 0; j < Q.size(); ++j) {
      if (used[j]) continue;
      used[j] = 1;
      best = std::min(best, distance(P[i], Q[j]) + go(i + 1));
      used[j] = 0;
    }
    return best;
  };
  return go(0);
}

// ---------------------------------------------------------------------------
// Dual bound

/// 1-Lipschitz test functions tuned to a charge configuration: the clipped
/// boundary distance, cones at charges, tents along nearest opposite pairs
/// and a few fixed cones.  Every support stays 2h inside the domain.
inline std::vector<TestFunction> make_dual_family(const DomainSpec& dom, const ChargeSet& cs, double h) {
  const double eta = 2.0 * h;
  std::vector<TestFunction> fam;
  fam.push_back(make_boundary_distance(dom, eta, 1.0));
  fam.push_back(make_boundary_distance(dom, eta, -1.0));
  for (const Charge& q : cs.charges) {
    double R = dom.boundary_distance(q.x) - eta;
    for (const Charge& o : cs.charges)
      if ((o.d > 0) != (q.d > 0)) R = std::min(R, distance(o.x, q.x));
    if (R > eta) fam.push_back(make_cone(q.x, R, q.d > 0 ? 1.0 : -1.0));
  }
  for (const Charge& q : cs.charges) {
    if (q.d <= 0) continue;
    const Charge* best = nullptr;
    for (const Charge& o : cs.charges)
      if (o.d < 0 && (!best || distance(o.x, q.x) < distance(best->x, q.x))) best = &o;
    if (!best) continue;
    const Vec3 m = 0.5 * (q.x + best->x);
    const double rho = std::min(1.5 * distance(q.x, best->x) + eta, dom.boundary_distance(m) - eta);
    if (rho > eta) fam.push_back(make_tent(q.x, best->x, rho));
  }
  const Vec3 c = dom.centre();
  const double R0 = dom.inradius() - eta;
  fam.push_back(make_cone(c, R0, 1.0));
  fam.push_back(make_cone(c, R0, -1.0));
  const double off = 0.5 * dom.inradius();
  for (int a = 0; a < dom.dim; ++a)
    for (double s : {-1.0, 1.0}) {
      Vec3 x = c;
      x[a] += s * off;
      const double R = dom.boundary_distance(x) - eta;
      if (R > eta) fam.push_back(make_cone(x, R, s));
    }
  return fam;
}

/// max over the family of <Jac u, zeta> / omega_N.
inline double dual_lower_bound(const DField& D, const std::vector<TestFunction>& family) {
  double best = 0.0;
  for (const TestFunction& z : family) {
    require(z.lipschitz() <= 1.0 + 1e-12, ErrorCode::FamilyViolatesLipschitz, z.id());
    best = std::max(best, pairing_with(D, z));
  }
  return best / unit_ball_volume(D.lattice.dim);
}

inline double dual_lower_bound(const GridMap& u, const std::vector<TestFunction>& family) {
  return dual_lower_bound(d_field(u), family);
}

struct LResult {
  double L = 0.0;
  double cell_scale = 0.0;
  ChargeSet charges;
  MatchingSolution matching;
};

inline LResult l_of_map(const VectorField& f, double cell_scale = 0.0) {
  LResult r;
  r.cell_scale = cell_scale > 0 ? cell_scale : default_cell_scale(f.lattice);
  r.charges = detect_charges(f, r.cell_scale);
  r.matching = minimal_connection(r.charges, f.domain);
  r.L = r.matching.L;
  return r;
}

inline LResult l_of_map(const GridMap& u, double cell_scale = 0.0) { return l_of_map(u.field(), cell_scale); }

}  // namespace sphmap
