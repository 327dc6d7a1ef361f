#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sphmap/connection.hpp"

namespace sphmap {

struct SurgeryOptions {
  double p = 2.5;
  double lambda = 1.0;
  double cell_scale = 0.0;  // 0: default 4h
  int candidates = 64;
  int max_homotopy_iters = 10;
  double delta_cfg = 0.0;  // boundary balls: r < delta_cfg (0: not checked)
  bool measure_L_after = true;
  bool force_bad = false;  // run the bad construction regardless of the energy test
};

/// Ball on which a replacement acts.  Interior: rho = r about x0 and the
/// outer ball is B_{2r}.  Boundary: rho = 3r about the face point y0 and the
/// outer ball is B_{6r}(y0), inside B_{8r}(x0).
struct BallGeometry {
  Vec3 centre{0, 0, 0};
  double r = 0.0;
  double rho = 0.0;
  bool boundary = false;
  Vec3 inward_normal{0, 0, 0};

  double outer() const { return 2.0 * rho; }
  double slice_lo() const { return 1.5 * rho; }
  double slice_hi() const { return 2.0 * rho; }

  static BallGeometry interior(const Vec3& c, double r) { return {c, r, r, false, {0, 0, 0}}; }
  static BallGeometry on_face(const DomainSpec& d, const Vec3& y0, double r) {
    return {y0, r, 3.0 * r, true, d.inward_normal(y0)};
  }
};

inline std::string to_string(const BallGeometry& g) {
  return std::string(g.boundary ? "boundary" : "interior") + " ball at " + detail::fmt(g.centre) + " r=" + detail::fmt(g.r);
}

// ---------------------------------------------------------------------------
// Radius selection

struct SliceSelection {
  double s = 0.0;
  double surface_energy = 0.0;  // integral over the sphere (part in Omega) of |grad_T v|^p
  double surface_lp = 0.0;
  double bulk_energy = 0.0;  // integral over B_{2 rho} of |grad v|^p
  double bulk_lp = 0.0;
  double c_slice = 0.0;        // surface_lp / (rho^{-1/p} bulk_lp)
  double fubini_bound = 0.0;   // (4 / rho) bulk_energy
  bool fubini_ok = true;       // surface_energy <= fubini_bound
  int candidate_count = 0;
  int admissible_count = 0;    // candidates avoiding all segments by one lattice spacing
  double admissible_fraction = 0.0;
  double segment_widths = 0.0; // sum over crossing segments of the radial band they block
  bool avoided_segments = true;
  int degree = 0;
  Vec3 centre{0, 0, 0};
  double psi_width = 0.0;

  /// psi = 1 on B_s, smooth radial step to 0 at s + psi_width.
  double psi(const Vec3& x) const {
    const double t = (distance(x, centre) - s) / psi_width;
    return 1.0 - smoothstep(t);
  }
};

inline bool sphere_meets_domain(const DomainSpec& d, const Vec3& c, double s) {
  const Vec3 q = d.clamp(c);
  if (distance(q, c) > s) return false;
  // farthest box corner or ball point
  double far = 0;
  if (d.shape == Shape::Ball) {
    far = norm(c) + 1.0;
  } else {
    Vec3 f{0, 0, 0};
    for (int a = 0; a < d.dim; ++a) f[a] = c[a] < 0.5 ? 1.0 : 0.0;
    far = distance(c, f);
  }
  return far > s;
}

/// Scans radii in (3 rho / 2, 2 rho), rejects those whose sphere passes within
/// h of a matching segment, and among the rest returns the one with least
/// surface energy.  Interior balls also require degree 0 on the sphere.
inline SliceSelection select_radius(const GridMap& v, const BallGeometry& g, const MatchingSolution& matching,
                                    const SurgeryOptions& opt) {
  const DomainSpec& d = v.domain();
  const double h = v.h();
  require(g.r > 4.0 * matching.L, ErrorCode::Precondition,
          "r = " + std::to_string(g.r) + " must exceed 4 L(v) = " + std::to_string(4.0 * matching.L));
  if (!g.boundary)
    require(d.boundary_distance(g.centre) >= g.outer() - 1e-12 && d.contains(g.centre, 0), ErrorCode::Precondition,
            "B_2r(x0) must lie inside the domain");
  SliceSelection sel;
  sel.centre = g.centre;
  sel.bulk_energy = gradient_energy(v.field(), opt.p, Region::ball(g.centre, g.outer()));
  sel.bulk_lp = std::pow(sel.bulk_energy, 1.0 / opt.p);
  sel.candidate_count = std::max(64, opt.candidates);
  struct Band {
    double lo, hi;
  };
  std::vector<Band> bands;
  for (const Segment& seg : matching.segments()) {
    const double dmin = point_segment_distance(g.centre, seg);
    const double dmax = std::max(distance(seg.a, g.centre), distance(seg.b, g.centre));
    bands.push_back({dmin - h, dmax + h});
    const double lo = std::max(dmin - h, g.slice_lo()), hi = std::min(dmax + h, g.slice_hi());
    if (hi > lo) sel.segment_widths += hi - lo;
  }
  const double width = g.slice_hi() - g.slice_lo();
  const double step = width / sel.candidate_count;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int i = 0; i < sel.candidate_count; ++i) {
    const double s = g.slice_lo() + (i + 0.5) * step;
    bool hit = false;
    for (const Band& b : bands) hit = hit || (s >= b.lo && s <= b.hi);
    if (hit) continue;
    ++sel.admissible_count;
    if (g.boundary && !sphere_meets_domain(d, g.centre, s)) continue;
    const SphericalTrace tr = restrict_to_sphere(v, g.centre, s, opt.p);
    int deg = 0;
    if (!g.boundary) {
      const double raw = raw_degree(*tr.mesh, tr.values);
      deg = int(std::lround(raw));
      if (std::abs(raw - deg) > kDegreeTolerance || deg != 0) continue;
    }
    if (tr.surface_energy < best) {
      best = tr.surface_energy;
      sel.s = s;
      sel.degree = deg;
      found = true;
    }
  }
  sel.admissible_fraction = double(sel.admissible_count) / sel.candidate_count;
  require(found, ErrorCode::NoAdmissibleRadius,
          to_string(g) + ": every candidate radius meets a matching segment or carries nonzero degree");
  sel.surface_energy = best;
  sel.surface_lp = std::pow(best, 1.0 / opt.p);
  sel.fubini_bound = 4.0 / g.rho * sel.bulk_energy;
  sel.fubini_ok = sel.surface_energy <= sel.fubini_bound * (1 + 1e-12);
  sel.c_slice = sel.bulk_lp > 0 ? sel.surface_lp / (std::pow(g.rho, -1.0 / opt.p) * sel.bulk_lp) : 0.0;
  sel.psi_width = std::min(g.rho / 8.0, g.slice_hi() - sel.s);
  return sel;
}

// ---------------------------------------------------------------------------
// Retraction onto a geodesic disk

/// Lipschitz-2 self-map of the sphere: identity on D_{2/3}(xi0), image in
/// D_{5/6}(xi0) inside D_1(xi0).  Acts on geodesic radius only.
struct RetractionPhi {
  Vec3 xi0{0, 0, 1};
  static constexpr double kInner = 2.0 / 3.0;
  static constexpr double kPlateau = 5.0 / 6.0;
  static constexpr double kTheta2 = kPi - 1.2;

  /// integral_0^x (1 - smoothstep(u)) du for x in [0, 1]
  static double ramp(double x) {
    x = std::clamp(x, 0.0, 1.0);
    const double x2 = x * x, x3 = x2 * x;
    return x - (x3 * x3 - 3.0 * x3 * x2 + 2.5 * x3 * x);
  }

  static double radius_map(double th) {
    if (th <= kInner) return th;
    if (th <= 1.0) return kInner + ramp(3.0 * (th - kInner)) / 3.0;
    if (th <= kTheta2) return kPlateau;
    return kPlateau * (1.0 - smoothstep((th - kTheta2) / (kPi - kTheta2)));
  }

  Vec3 operator()(const Vec3& x) const {
    const double th = geodesic_distance(xi0, x);
    if (th <= kInner) return x;
    const double g = radius_map(th);
    Vec3 t = x - dot(x, xi0) * xi0;
    const double tn = norm(t);
    if (tn < 1e-300) return xi0;
    t = (1.0 / tn) * t;
    return normalized(std::cos(g) * xi0 + std::sin(g) * t);
  }
};

// ---------------------------------------------------------------------------
// Degree-zero homotopies

/// H(t, w): constant xi for t <= 1/3, equal to the trace for t >= 2/3.
struct Homotopy {
  int dim = 3;
  Vec3 xi{0, 0, 1};
  std::string method = "constant";
  int iterations = 0;
  std::function<Vec3(double, const Vec3&)> stage;  // tau in [0,1] -> value; stage(1, w) = trace(w)

  static double tau(double t) { return smoothstep(3.0 * t - 1.0); }
  Vec3 operator()(double t, const Vec3& w) const { return stage(tau(t), w); }
};

namespace detail {

/// Mollify vertex values on the sphere with geodesic width w, renormalised.
/// Returns false if some weighted average is shorter than 0.1.
inline bool sphere_mollify(const SphereMesh& m, const std::vector<Vec3>& in, double width, std::vector<Vec3>& out) {
  out.assign(in.size(), {0, 0, 0});
  const double cw = std::cos(width);
  for (std::size_t i = 0; i < m.size(); ++i) {
    Vec3 s{0, 0, 0};
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double c = dot(m.dirs[i], m.dirs[j]);
      if (c <= cw) continue;
      const double t = std::acos(std::min(1.0, c)) / width;
      s += bump_profile(t) * in[j];
    }
    if (norm(s) < 0.1) return false;
    out[i] = normalized(s);
  }
  return true;
}

/// Largest cap {y : d(y, -xi) < gap} free of the values, over candidate xi.
inline std::pair<Vec3, double> best_cap(const std::vector<Vec3>& values) {
  std::vector<Vec3> cands;
  Vec3 mean{0, 0, 0};
  for (const Vec3& v : values) mean += v;
  if (norm(mean) > 1e-9) cands.push_back(normalized(mean));
  for (const Vec3& d : sphere_mesh(3, 2).dirs) cands.push_back(d);
  Vec3 best_xi = cands.front();
  double best_gap = -1;
  for (const Vec3& xi : cands) {
    double gap = kPi;
    for (const Vec3& v : values) gap = std::min(gap, geodesic_distance(-xi, v));
    if (gap > best_gap) {
      best_gap = gap;
      best_xi = xi;
    }
  }
  return {best_xi, best_gap};
}

inline double max_edge_angle(const SphereMesh& m, const std::vector<Vec3>& values) {
  double e = 0;
  for (const auto& t : m.tris)
    for (int q = 0; q < 3; ++q) e = std::max(e, geodesic_distance(values[t[q]], values[t[(q + 1) % 3]]));
  return e;
}

}  // namespace detail

inline constexpr double kCapMargin = 0.25;

/// Contracts a degree-zero trace to a constant.  trace_at(w) gives the exact
/// trace value at an arbitrary direction; the mesh values in tr are used for
/// the degree test, the lift and the sphere mollification cascade.
inline Homotopy contract_degree_zero(const SphericalTrace& tr, int max_iters = 10,
                                     std::function<Vec3(const Vec3&)> trace_at = nullptr) {
  const SphereMesh& m = *tr.mesh;
  if (!trace_at) trace_at = [&tr](const Vec3& w) { return tr.evaluate(w); };
  const double raw = raw_degree(m, tr.values);
  const int deg = int(std::lround(raw));
  require(std::abs(raw - deg) <= kDegreeTolerance, ErrorCode::NonIntegerDegree, "trace: raw degree " + std::to_string(raw));
  require(deg == 0, ErrorCode::NonzeroDegree, "trace degree " + std::to_string(deg));
  Homotopy H;
  H.dim = tr.dim;
  bool constant = true;
  for (const Vec3& v : tr.values) constant = constant && distance(v, tr.values[0]) < 1e-14;
  if (constant) {
    H.xi = tr.values[0];
    H.method = "constant";
    const Vec3 xi = H.xi;
    H.stage = [xi, trace_at](double tau, const Vec3& w) { return tau >= 1.0 ? trace_at(w) : xi; };
    return H;
  }
  if (tr.dim == 2) {
    // single-valued lift, contracted linearly to its mean
    const std::size_t M = m.size();
    auto lift = std::make_shared<std::vector<double>>(M + 1);
    (*lift)[0] = std::atan2(tr.values[0][1], tr.values[0][0]);
    for (std::size_t i = 0; i < M; ++i) (*lift)[i + 1] = (*lift)[i] + angle_increment(tr.values[i], tr.values[(i + 1) % M]);
    double mean = 0;
    for (std::size_t i = 0; i < M; ++i) mean += (*lift)[i];
    mean /= double(M);
    H.method = "lift";
    H.xi = {std::cos(mean), std::sin(mean), 0};
    const SphereMesh* mp = &m;
    H.stage = [lift, mean, mp, trace_at](double tau, const Vec3& w) {
      const auto loc = mp->locate(w);
      const double base = loc.weights[0] * (*lift)[loc.cell] + loc.weights[1] * (*lift)[loc.cell + 1];
      const Vec3 exact = trace_at(w);
      const double th = base + angle_increment({std::cos(base), std::sin(base), 0}, exact);
      const double a = mean + tau * (th - mean);
      return Vec3{std::cos(a), std::sin(a), 0};
    };
    return H;
  }
  // N = 3: cap retraction, after sphere mollification if needed
  std::vector<std::vector<Vec3>> stages{tr.values};
  double width = 0.1;
  for (int it = 0;; ++it) {
    const auto [xi, gap] = detail::best_cap(stages.back());
    const double need = kCapMargin + detail::max_edge_angle(m, stages.back());
    if (gap > need) {
      H.xi = xi;
      H.iterations = it;
      break;
    }
    if (it >= max_iters) fail(ErrorCode::HomotopyNotFound, "trace covers the sphere after " + std::to_string(it) + " mollifications");
    std::vector<Vec3> next;
    if (!detail::sphere_mollify(m, stages.back(), width, next))
      fail(ErrorCode::HomotopyNotFound, "sphere mollification degenerates at width " + std::to_string(width));
    for (std::size_t i = 0; i < next.size(); ++i)
      if (dot(next[i], stages.back()[i]) < -0.98)
        fail(ErrorCode::HomotopyNotFound, "mollified trace turns antipodal at width " + std::to_string(width));
    stages.push_back(std::move(next));
    width *= 1.5;
  }
  H.method = H.iterations == 0 ? "cap" : "mollify-cap";
  const Vec3 xi = H.xi;
  const int k = int(stages.size()) - 1;
  auto st = std::make_shared<std::vector<std::vector<Vec3>>>(std::move(stages));
  const SphereMesh* mp = &m;
  // tau in [0, 1/(k+1)]: geodesic from xi to stage k; later pieces interpolate
  // stage j+1 -> stage j, the last one ending on the exact trace.
  H.stage = [st, k, xi, mp, trace_at](double tau, const Vec3& w) -> Vec3 {
    auto value = [&](int j) { return j == 0 ? trace_at(w) : mp->evaluate((*st)[j], w); };
    const double seg = 1.0 / (k + 1);
    if (tau <= seg) return slerp(xi, value(k), tau / seg);
    const int piece = std::min(k - 1, int((tau - seg) / seg));
    const double a = (tau - seg - piece * seg) / seg;
    const int from = k - piece, to = from - 1;
    if (a >= 1.0) return value(to);
    return normalized((1.0 - a) * value(from) + a * value(to));
  };
  return H;
}

// ---------------------------------------------------------------------------
// Reports

enum class SurgeryKind { Good, Bad, Boundary };

inline std::string to_string(SurgeryKind k) {
  switch (k) {
    case SurgeryKind::Good: return "good";
    case SurgeryKind::Bad: return "bad";
    case SurgeryKind::Boundary: return "boundary";
  }
  return "?";
}

struct SurgeryReport {
  int ball_id = -1;
  SurgeryKind kind = SurgeryKind::Good;
  std::string branch;  // "good" or "bad" (boundary balls use both)
  BallGeometry geometry;
  SliceSelection slice;
  double energy = 0.0;     // integral over the outer ball of |grad v|^p
  double threshold = 0.0;  // lambda rho^{N-p}
  double epsilon = 0.0;
  bool epsilon_ok = true;  // the epsilon criterion (plug or mollification) was met
  std::string homotopy_method;
  int homotopy_iterations = 0;
  double trace_radius = 0.0;  // good: max geodesic distance of the trace from xi0
  Vec3 xi0{0, 0, 0};

  std::vector<std::uint8_t> a_mask;
  double a_measure = 0.0;
  bool a_fallback = false;

  double lp_diff = 0.0;      // ||w - v||_{L^p}
  double grad_diff = 0.0;    // ||grad w - grad v||_{L^p}
  double grad_v_outer = 0.0; // ||grad v||_{L^p(outer ball)}
  double grad_v_a = 0.0;     // ||grad v||_{L^p(A)}
  double c_lp = 0.0;           // lp_diff / (r grad_diff)
  double c_grad = 0.0;           // grad_diff / grad_v_outer
  double c_grad_a = 0.0;         // grad_diff / grad_v_a
  double c_a = 0.0;          // |A|^{1/p} / (r grad_v_outer)

  // bad balls: |A|^{1/p} <= (2^N omega_N / lambda)^{1/p} r ||grad v||
  double c_lambda = 0.0;
  bool volume_ok = true;

  // good balls: |A| <= int f^p <= C_P int |grad f|^p <= 3^p C_P int_{B_s} |grad v|^p
  double cheb_integral = 0.0;
  double poincare_constant = 0.0;
  double poincare_rhs = 0.0;
  double grad_v_slice_energy = 0.0;
  bool a_bound_ok = true;
  double eps_gap = 0.0, eps_bound = 0.0;

  double L_before = 0.0, L_after = 0.0;
  std::size_t inner_charges_after = 0;
  bool locality_ok = true;
  bool multi_face = false;
};

namespace detail {

inline void finish_report(const GridMap& v, const GridMap& w, SurgeryReport& rep, const SurgeryOptions& opt) {
  const double p = opt.p;
  const BallGeometry& g = rep.geometry;
  const VectorField& fv = v.field();
  const Region outer = Region::ball(g.centre, g.outer() + 2 * v.h());
  const DifferenceNorms dn = difference_norms(w.field(), fv, p, outer);
  rep.lp_diff = dn.values;
  rep.grad_diff = dn.gradient;
  rep.grad_v_outer = gradient_lp(fv, p, Region::ball(g.centre, g.outer()));
  rep.a_measure = 0;
  double ea = 0;
  fv.for_each_cell(Region::cells(rep.a_mask), [&](int i, int j, int k, std::size_t) {
    rep.a_measure += fv.lattice.cell_volume();
    ea += std::pow(frobenius(cell_gradient(fv, i, j, k)), p) * fv.lattice.cell_volume();
  });
  rep.grad_v_a = std::pow(ea, 1.0 / p);
  rep.c_lp = rep.grad_diff > 0 ? rep.lp_diff / (g.r * rep.grad_diff) : 0.0;
  rep.c_grad = rep.grad_v_outer > 0 ? rep.grad_diff / rep.grad_v_outer : 0.0;
  rep.c_grad_a = rep.grad_v_a > 0 ? rep.grad_diff / rep.grad_v_a : (rep.grad_diff == 0 ? 0.0 : std::numeric_limits<double>::infinity());
  rep.c_a = rep.grad_v_outer > 0 ? std::pow(rep.a_measure, 1.0 / p) / (g.r * rep.grad_v_outer) : 0.0;
  // bitwise locality outside the outer ball
  const Lattice& L = fv.lattice;
  rep.locality_ok = true;
  all_nodes(L).for_each([&](int i, int j, int k) {
    const std::size_t n = L.node_index(i, j, k);
    if (distance(L.node_position(i, j, k), g.centre) >= g.outer() && !(w.values()[n] == fv.values[n])) rep.locality_ok = false;
  });
  if (opt.measure_L_after) {
    const LResult lr = l_of_map(w, opt.cell_scale);
    rep.L_after = lr.L;
    rep.inner_charges_after = charges_in_ball(lr.charges, g.centre, g.rho).size();
  }
}

inline std::vector<std::uint8_t> ball_mask(const VectorField& f, const Vec3& c, double R) {
  std::vector<std::uint8_t> m(f.lattice.cell_count(), 0);
  f.for_each_cell(Region::ball(c, R), [&](int, int, int, std::size_t q) { m[q] = 1; });
  return m;
}

/// Nodes strictly inside the ball, with positions.
struct NodeRef {
  std::size_t n;
  Vec3 x;
};

inline std::vector<NodeRef> nodes_in_ball(const VectorField& f, const Vec3& c, double R) {
  std::vector<NodeRef> out;
  f.for_each_node_in_ball(c, R, [&](int, int, int, std::size_t n, const Vec3& x) { out.push_back({n, x}); });
  return out;
}

/// Trace mesh for homotopies: capped so sphere mollification stays cheap.
inline const SphereMesh& homotopy_mesh(int dim, double s, double h) {
  const SphereMesh& m = sphere_mesh_for(dim, s, h);
  if (dim == 3 && m.size() > 2562) return sphere_mesh(3, 4);
  return m;
}

/// Exact trace value v(c + s w), clamped into the domain.
inline std::function<Vec3(const Vec3&)> exact_trace(const GridMap& v, const Vec3& c, double s) {
  const VectorField* f = &v.field();
  return [f, c, s](const Vec3& w) {
    const Vec3 y = interpolate(*f, f->domain.clamp(c + s * w));
    const double n = norm(y);
    return n > 0 ? (1.0 / n) * y : f->dim() == 2 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
  };
}

/// Radial extension from the slice sphere with a homotopy plug in B_eps.
/// Epsilon halves from s/2 until the plug changes the gradient of the radial
/// extension by at most `bound` in L^p (or reaches 2h).
inline VectorField radial_plug(const GridMap& v, const Vec3& c, double s, const Homotopy& H,
                               const std::function<Vec3(const Vec3&)>& value_at, double bound, double p,
                               SurgeryReport& rep) {
  const VectorField& fv = v.field();
  const auto inside = nodes_in_ball(fv, c, s);
  VectorField vt = fv;
  for (const NodeRef& q : inside) {
    const Vec3 y = q.x - c;
    const double r = norm(y);
    vt.values[q.n] = r > 0 ? value_at((1.0 / r) * y) : H.xi;
  }
  const double h = v.h();
  double eps = 0.5 * s;
  for (;;) {
    VectorField w = vt;
    for (const NodeRef& q : inside) {
      const Vec3 y = q.x - c;
      const double r = norm(y);
      if (r < eps) w.values[q.n] = r > 0 ? H(r / eps, (1.0 / r) * y) : H.xi;
    }
    const double d = difference_norms(w, vt, p, Region::ball(c, eps + 2 * h)).gradient;
    rep.epsilon = eps;
    rep.epsilon_ok = d <= bound * (1 + 1e-12);
    if (rep.epsilon_ok || 0.5 * eps < 2 * h) return w;
    eps *= 0.5;
  }
}

inline double threshold_for(const BallGeometry& g, int dim, double p, double lambda) {
  return lambda * std::pow(g.rho, dim - p);
}

inline void bad_core(const GridMap& v, SurgeryReport& rep, const Homotopy& H,
                     const std::function<Vec3(const Vec3&)>& value_at, const SurgeryOptions& opt, VectorField& out) {
  const BallGeometry& g = rep.geometry;
  rep.branch = "bad";
  rep.homotopy_method = H.method;
  rep.homotopy_iterations = H.iterations;
  rep.xi0 = H.xi;
  out = radial_plug(v, g.centre, rep.slice.s, H, value_at, rep.slice.bulk_lp, opt.p, rep);
  rep.a_mask = ball_mask(v.field(), g.centre, g.outer());
}

inline void bad_volume_check(const GridMap& v, SurgeryReport& rep, const SurgeryOptions& opt) {
  const int N = v.dim();
  rep.c_lambda = std::pow(std::pow(2.0, N) * unit_ball_volume(N) / opt.lambda, 1.0 / opt.p);
  rep.volume_ok = std::pow(rep.a_measure, 1.0 / opt.p) <= rep.c_lambda * rep.geometry.rho * rep.grad_v_outer * (1 + 1e-9);
}

/// Corner node indices of a cell.
inline std::vector<std::size_t> cell_corners(const Lattice& L, int i, int j, int k) {
  std::vector<std::size_t> c;
  const int kz = L.dim == 3 ? 1 : 0;
  for (int dk = 0; dk <= kz; ++dk)
    for (int dj = 0; dj <= 1; ++dj)
      for (int di = 0; di <= 1; ++di) c.push_back(L.node_index(i + di, j + dj, k + dk));
  return c;
}

inline void good_core(const GridMap& v, SurgeryReport& rep, const SurgeryOptions& opt, VectorField& out) {
  const BallGeometry& g = rep.geometry;
  const VectorField& fv = v.field();
  const Lattice& L = fv.lattice;
  const double p = opt.p, h = v.h(), s = rep.slice.s;
  rep.branch = "good";
  const SphericalTrace tr = restrict_to_sphere(v, g.centre, s, p);
  Vec3 mean{0, 0, 0};
  for (std::size_t i = 0; i < tr.values.size(); ++i)
    if (tr.present[i]) mean += tr.values[i];
  require(norm(mean) > 1e-12, ErrorCode::TraceNotInSmallDisk, to_string(g) + ": trace mean vanishes");
  const Vec3 xi0 = normalized(mean);
  rep.xi0 = xi0;
  rep.trace_radius = 0;
  for (std::size_t i = 0; i < tr.values.size(); ++i)
    if (tr.present[i]) rep.trace_radius = std::max(rep.trace_radius, geodesic_distance(xi0, tr.values[i]));
  require(rep.trace_radius <= 1.0 / 3.0, ErrorCode::TraceNotInSmallDisk,
          to_string(g) + ": trace reaches geodesic distance " + std::to_string(rep.trace_radius) + " > 1/3");
  const RetractionPhi phi{xi0};
  VectorField pv = fv;
  for (const NodeRef& q : nodes_in_ball(fv, g.centre, g.outer())) pv.values[q.n] = phi(fv.values[q.n]);

  // A = {v outside D_{2/3}(xi0)} on cells of B_s, and the Chebyshev chain
  std::vector<double> f(L.node_count(), 0.0);
  for (std::size_t n = 0; n < f.size(); ++n)
    if (fv.node_active[n]) f[n] = std::max(0.0, 3.0 * geodesic_distance(xi0, fv.values[n]) - 1.0);
  rep.a_mask.assign(L.cell_count(), 0);
  rep.cheb_integral = 0;
  double grad_f = 0, grad_v = 0;
  const double vol = L.cell_volume();
  fv.for_each_cell(Region::ball(g.centre, s), [&](int i, int j, int k, std::size_t c) {
    double fm = 0;
    for (std::size_t n : cell_corners(L, i, j, k)) fm = std::max(fm, f[n]);
    if (fm > 1.0) rep.a_mask[c] = 1;
    rep.cheb_integral += std::pow(fm, p) * vol;
    grad_f += std::pow(norm(scalar_cell_gradient(L, f, i, j, k)), p) * vol;
    grad_v += std::pow(frobenius(cell_gradient(fv, i, j, k)), p) * vol;
  });
  rep.poincare_constant = std::pow(s, p);
  rep.poincare_rhs = rep.poincare_constant * grad_f;
  rep.grad_v_slice_energy = grad_v;
  double a_meas = 0, a_energy = 0;
  fv.for_each_cell(Region::cells(rep.a_mask), [&](int i, int j, int k, std::size_t) {
    a_meas += vol;
    a_energy += std::pow(frobenius(cell_gradient(fv, i, j, k)), p) * vol;
  });
  rep.a_bound_ok = a_meas <= std::pow(3.0, p) * rep.poincare_constant * grad_v * (1 + 1e-9);
  if (a_energy == 0.0) {
    // no cell leaves D_{2/3}: use the single cell of largest energy in B_rho
    double best = -1;
    std::size_t bc = 0;
    fv.for_each_cell(Region::ball(g.centre, g.rho), [&](int i, int j, int k, std::size_t c) {
      const double e = std::pow(frobenius(cell_gradient(fv, i, j, k)), p) * vol;
      if (e > best) {
        best = e;
        bc = c;
      }
    });
    std::fill(rep.a_mask.begin(), rep.a_mask.end(), 0);
    rep.a_mask[bc] = 1;
    rep.a_fallback = true;
    a_energy = std::max(best, 0.0);
  }
  rep.eps_bound = a_energy;

  const auto inside = nodes_in_ball(fv, g.centre, s);
  auto zeta = [&](const Vec3& x) { return 1.0 - smoothstep((distance(x, g.centre) - g.rho) / (0.5 * g.rho)); };
  double eps = std::max(0.25 * g.r, 2 * h);
  for (;;) {
    const VectorField m = mollify(pv, eps, Region::ball(g.centre, 1.5 * g.rho + h));
    VectorField w = fv;
    for (const NodeRef& q : inside) {
      const double z = zeta(q.x);
      const Vec3 y = (1.0 - z) * pv.values[q.n] + z * m.values[q.n];
      const double len = norm(y);
      require(len >= kProjectionThreshold, ErrorCode::NearZeroVector,
              to_string(g) + ": mollified value of length " + std::to_string(len) + " at " + fmt(q.x));
      w.values[q.n] = (1.0 / len) * y;
    }
    const double lhs = std::pow(difference_norms(w, pv, p, Region::ball(g.centre, s)).gradient, p);
    rep.epsilon = eps;
    rep.eps_gap = lhs;
    rep.epsilon_ok = lhs <= rep.eps_bound * (1 + 1e-12);
    if (rep.epsilon_ok || 0.5 * eps < 2 * h) {
      out = std::move(w);
      return;
    }
    eps *= 0.5;
  }
}

inline SurgeryReport start_report(const GridMap& v, const BallGeometry& g, const MatchingSolution& m,
                                  const SurgeryOptions& opt) {
  SurgeryReport rep;
  rep.geometry = g;
  rep.L_before = m.L;
  rep.energy = gradient_energy(v.field(), opt.p, Region::ball(g.centre, g.outer()));
  rep.threshold = threshold_for(g, v.dim(), opt.p, opt.lambda);
  return rep;
}

}  // namespace detail

struct SurgeryResult {
  GridMap w;
  SurgeryReport report;
};

/// Interior ball with energy at least lambda r^{N-p} on B_{2r}: radial
/// extension from a degree-zero slice, plugged by a contraction.
inline SurgeryResult replace_bad_ball(const GridMap& v, const Vec3& x0, double r, const MatchingSolution& m,
                                      const SurgeryOptions& opt) {
  const BallGeometry g = BallGeometry::interior(x0, r);
  SurgeryReport rep = detail::start_report(v, g, m, opt);
  rep.kind = SurgeryKind::Bad;
  require(opt.force_bad || rep.energy >= rep.threshold, ErrorCode::NotABadBall,
          to_string(g) + ": energy " + std::to_string(rep.energy) + " below " + std::to_string(rep.threshold));
  rep.slice = select_radius(v, g, m, opt);
  const double s = rep.slice.s;
  const SphericalTrace tr = restrict_to_sphere(v, x0, s, opt.p, &detail::homotopy_mesh(v.dim(), s, v.h()));
  const auto value_at = detail::exact_trace(v, x0, s);
  const Homotopy H = contract_degree_zero(tr, opt.max_homotopy_iters, value_at);
  VectorField w;
  detail::bad_core(v, rep, H, value_at, opt, w);
  SurgeryResult res{GridMap(std::move(w)), std::move(rep)};
  detail::finish_report(v, res.w, res.report, opt);
  detail::bad_volume_check(v, res.report, opt);
  return res;
}

/// Interior ball with energy below lambda r^{N-p}: retract into a small disk
/// and mollify near the centre.
inline SurgeryResult replace_good_ball(const GridMap& v, const Vec3& x0, double r, const MatchingSolution& m,
                                       const SurgeryOptions& opt) {
  const BallGeometry g = BallGeometry::interior(x0, r);
  SurgeryReport rep = detail::start_report(v, g, m, opt);
  rep.kind = SurgeryKind::Good;
  require(rep.energy < rep.threshold, ErrorCode::NotAGoodBall,
          to_string(g) + ": energy " + std::to_string(rep.energy) + " reaches " + std::to_string(rep.threshold));
  rep.slice = select_radius(v, g, m, opt);
  VectorField w;
  if (rep.energy == 0.0) {
    rep.branch = "good";
    rep.a_mask.assign(v.lattice().cell_count(), 0);
    w = v.field();
  } else {
    detail::good_core(v, rep, opt, w);
  }
  SurgeryResult res{GridMap(std::move(w)), std::move(rep)};
  detail::finish_report(v, res.w, res.report, opt);
  return res;
}

/// Ball of radius 3r about a point y0 on a flat face of the box.  Chooses the
/// bad or good branch from the energy on B_{6r}(y0) against lambda (3r)^{N-p}.
inline SurgeryResult replace_boundary_ball(const GridMap& v, const Vec3& y0, double r, const MatchingSolution& m,
                                           const SurgeryOptions& opt) {
  const DomainSpec& d = v.domain();
  require(d.shape == Shape::Box, ErrorCode::CurvedBoundaryUnsupported, "boundary surgery needs a flat face");
  require(d.contains(y0, 1e-9) && d.boundary_distance(y0) <= 1e-9, ErrorCode::NotOnBoundary,
          detail::fmt(y0) + " is not on the boundary");
  if (opt.delta_cfg > 0)
    require(r < opt.delta_cfg, ErrorCode::Precondition,
            "boundary radius " + std::to_string(r) + " must be below delta " + std::to_string(opt.delta_cfg));
  const BallGeometry g = BallGeometry::on_face(d, y0, r);
  SurgeryReport rep = detail::start_report(v, g, m, opt);
  rep.kind = SurgeryKind::Boundary;
  int faces = 0;
  for (int a = 0; a < d.dim; ++a) faces += (y0[a] < g.outer()) + (1.0 - y0[a] < g.outer());
  rep.multi_face = faces > 1;
  rep.slice = select_radius(v, g, m, opt);
  const double s = rep.slice.s;
  VectorField w;
  if (opt.force_bad || rep.energy >= rep.threshold) {
    const auto value_at = detail::exact_trace(v, y0, s);
    Homotopy H;
    H.dim = v.dim();
    H.method = "half-sphere";
    const Vec3 n = g.inward_normal;
    H.xi = value_at(n);
    H.stage = [n, value_at](double tau, const Vec3& w) { return value_at(slerp(n, w, tau)); };
    detail::bad_core(v, rep, H, value_at, opt, w);
  } else if (rep.energy == 0.0) {
    rep.branch = "good";
    rep.a_mask.assign(v.lattice().cell_count(), 0);
    w = v.field();
  } else {
    detail::good_core(v, rep, opt, w);
  }
  SurgeryResult res{GridMap(std::move(w)), std::move(rep)};
  detail::finish_report(v, res.w, res.report, opt);
  if (res.report.branch == "bad") detail::bad_volume_check(v, res.report, opt);
  return res;
}

}  // namespace sphmap
