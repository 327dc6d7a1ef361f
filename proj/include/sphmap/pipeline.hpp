#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sphmap/surgery.hpp"

namespace sphmap {

// ---------------------------------------------------------------------------
// Cover and colouring

/// Number of nonzero integer vectors k in Z^N with |k| < 16: the most balls
/// B_{8r} a lattice ball of spacing r can meet.
inline int lattice_theta(int N) {
  int count = 0;
  const int kz = N == 3 ? 15 : 0;
  for (int c = -kz; c <= kz; ++c)
    for (int b = -15; b <= 15; ++b)
      for (int a = -15; a <= 15; ++a)
        if ((a || b || c) && a * a + b * b + c * c < 256) ++count;
  return count;
}

struct PlannedBall {
  int id = 0;
  Vec3 x{0, 0, 0};   // lattice centre
  std::array<int, 3> k{0, 0, 0};  // lattice offset from the domain centre
  bool boundary = false;
  Vec3 y0{0, 0, 0};  // boundary balls: surgery centre on the boundary
  int colour = 0;
};

struct BallPlan {
  double r = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  int theta = 0;
  int colours = 0;
  int max_degree = 0;
  std::vector<PlannedBall> balls;
  std::vector<std::vector<int>> classes;
};

namespace detail {

/// Outer balls B_{8r} meet: |x_i - x_j| < 16r, exactly on lattice offsets.
inline bool lattice_conflict(const PlannedBall& a, const PlannedBall& b) {
  int s = 0;
  for (int q = 0; q < 3; ++q) s += (a.k[q] - b.k[q]) * (a.k[q] - b.k[q]);
  return s < 256;
}

}  // namespace detail

inline double default_delta(const DomainSpec& d) { return d.inradius() / 4.0; }

/// Centres on the cubic lattice of spacing r through the domain centre, kept
/// when within r of the closed domain.  Centres closer than 2r to the
/// boundary (or outside it) are boundary balls acting at the nearest
/// boundary point.  Interior balls are numbered first; greedy colouring of
/// the graph |x_i - x_j| < 16r in that order.
inline BallPlan plan_cover(const DomainSpec& d, double r, double delta = 0.0) {
  require(r > 0, ErrorCode::Precondition, "cover radius must be positive");
  require(r < d.diameter() / 4.0, ErrorCode::RadiusTooLarge,
          "r = " + std::to_string(r) + " is not below diameter/4 = " + std::to_string(d.diameter() / 4.0));
  if (delta > 0) require(r < delta, ErrorCode::Precondition, "r must be below delta");
  BallPlan plan;
  plan.r = r;
  plan.delta = delta;
  plan.theta = lattice_theta(d.dim);
  const Vec3 o = d.centre();
  const double half = d.shape == Shape::Box ? 0.5 : 1.0;
  const int K = int(std::ceil((half + r) / r));
  const int kz = d.dim == 3 ? K : 0;
  for (int c = -kz; c <= kz; ++c)
    for (int b = -K; b <= K; ++b)
      for (int a = -K; a <= K; ++a) {
        Vec3 x = o + Vec3{a * r, b * r, c * r};
        if (d.dim == 2) x[2] = 0;
        const bool inside = d.contains(x, 0.0);
        const double out = inside ? 0.0 : distance(x, d.clamp(x));
        if (out >= r) continue;
        PlannedBall pb;
        pb.id = int(plan.balls.size());
        pb.x = x;
        pb.k = {a, b, c};
        pb.boundary = !inside || d.boundary_distance(x) < 2.0 * r;
        if (pb.boundary) pb.y0 = d.project_to_boundary(d.clamp(x));
        plan.balls.push_back(pb);
      }
  std::stable_partition(plan.balls.begin(), plan.balls.end(), [](const PlannedBall& b) { return !b.boundary; });
  for (std::size_t i = 0; i < plan.balls.size(); ++i) plan.balls[i].id = int(i);
  const std::size_t n = plan.balls.size();
  std::vector<int> colour(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<char> used;
    int deg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !detail::lattice_conflict(plan.balls[i], plan.balls[j])) continue;
      ++deg;
      if (colour[j] >= 0) {
        if (std::size_t(colour[j]) >= used.size()) used.resize(colour[j] + 1, 0);
        used[colour[j]] = 1;
      }
    }
    plan.max_degree = std::max(plan.max_degree, deg);
    int c = 0;
    while (std::size_t(c) < used.size() && used[c]) ++c;
    colour[i] = c;
    plan.balls[i].colour = c;
    plan.colours = std::max(plan.colours, c + 1);
  }
  plan.classes.assign(plan.colours, {});
  for (const PlannedBall& b : plan.balls) plan.classes[b.colour].push_back(b.id);
  return plan;
}

struct CoverCheck {
  bool covered = true;
  bool disjoint = true;
  bool colours_within_theta = true;
  std::size_t uncovered_nodes = 0;
};

/// Exhaustive check: every active node of the lattice lies in some B_r(x_i),
/// and outer balls B_{8r} within a colour class are pairwise disjoint.
inline CoverCheck verify_cover(const BallPlan& plan, const VectorField& f) {
  CoverCheck out;
  const Lattice& L = f.lattice;
  all_nodes(L).for_each([&](int i, int j, int k) {
    if (!f.node_active[L.node_index(i, j, k)]) return;
    const Vec3 x = L.node_position(i, j, k);
    bool hit = false;
    for (const PlannedBall& b : plan.balls)
      if (distance(x, b.x) < plan.r) {
        hit = true;
        break;
      }
    if (!hit) ++out.uncovered_nodes;
  });
  out.covered = out.uncovered_nodes == 0;
  for (const auto& cls : plan.classes)
    for (std::size_t a = 0; a < cls.size(); ++a)
      for (std::size_t b = a + 1; b < cls.size(); ++b)
        if (distance(plan.balls[cls[a]].x, plan.balls[cls[b]].x) < 16.0 * plan.r * (1 - 1e-12)) out.disjoint = false;
  out.colours_within_theta = plan.colours <= plan.theta + 1;
  return out;
}

// ---------------------------------------------------------------------------
// Threshold calibration

struct LambdaCalibration {
  double lambda = 0.0;
  double r = 0.0;
  int balls = 0;
  int failing = 0;              // balls whose good-ball trace test fails
  double min_failing = 0.0;     // least scaled energy among failing balls
  double max_passing = 0.0;     // largest scaled energy among passing balls
  int bisection_steps = 0;
};

/// Scaled energies E / r^{N-p} of balls near a degree-one hedgehog; a ball
/// fails when no degree-zero slice exists or the slice trace leaves every
/// disk of geodesic radius 1/3 about its mean.  lambda is bisected to the
/// largest value below every failing energy, then reduced by 10%.
inline LambdaCalibration calibrate_lambda(int N, double p, int res, double r = 0.0) {
  DomainSpec d(N, Shape::Box);
  const GridMap u = make_map(d, res, PresetId::Hedgehog);
  const double h = u.h();
  LambdaCalibration cal;
  cal.r = std::clamp(r > 0 ? r : 8 * h, 4 * h, 0.5 / 6.0);
  const Vec3 c = default_singularity(d, u.lattice());
  struct Sample {
    double e;
    bool fails;
  };
  std::vector<Sample> samples;
  const Vec3 dirs[3] = {normalized(Vec3{1, 0.37, N == 3 ? 0.21 : 0}), normalized(Vec3{-0.3, 1, N == 3 ? -0.45 : 0}),
                        normalized(Vec3{0.2, -0.6, N == 3 ? 1.0 : 0.0})};
  SurgeryOptions opt;
  opt.p = p;
  const double tmax = 0.5 - 2.0 * cal.r - h;
  for (const Vec3& e : dirs)
    for (double t = 0; t <= std::min(6.0 * cal.r, tmax); t += 0.25 * cal.r) {
      const Vec3 x0 = c + t * e;
      const BallGeometry g = BallGeometry::interior(x0, cal.r);
      Sample s{gradient_energy(u.field(), p, Region::ball(x0, 2 * cal.r)) / std::pow(cal.r, N - p), false};
      try {
        const SliceSelection sel = select_radius(u, g, MatchingSolution{}, opt);
        const SphericalTrace tr = restrict_to_sphere(u, x0, sel.s, p);
        Vec3 m{0, 0, 0};
        for (const Vec3& v : tr.values) m += v;
        double rad = kPi;
        if (norm(m) > 1e-12) {
          rad = 0;
          for (const Vec3& v : tr.values) rad = std::max(rad, geodesic_distance(normalized(m), v));
        }
        s.fails = rad > 1.0 / 3.0;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NoAdmissibleRadius) throw;
        s.fails = true;
      }
      samples.push_back(s);
    }
  cal.balls = int(samples.size());
  double hi = 0;
  for (const Sample& s : samples) {
    hi = std::max(hi, s.e);
    if (s.fails) {
      ++cal.failing;
      cal.min_failing = cal.failing == 1 ? s.e : std::min(cal.min_failing, s.e);
    }
  }
  // ok(lambda): every ball below lambda passes
  auto ok = [&](double lam) {
    for (const Sample& s : samples)
      if (s.e < lam && s.fails) return false;
    return true;
  };
  double lo = 0.0;
  hi = 2.0 * hi + 1.0;
  if (ok(hi)) {
    lo = hi;
  } else {
    for (int it = 0; it < 60; ++it, ++cal.bisection_steps) {
      const double mid = 0.5 * (lo + hi);
      (ok(mid) ? lo : hi) = mid;
    }
  }
  cal.lambda = 0.9 * lo;
  for (const Sample& s : samples)
    if (!s.fails) cal.max_passing = std::max(cal.max_passing, s.e);
  return cal;
}

// ---------------------------------------------------------------------------
// Global approximation

struct PipelineConfig {
  double p = 2.5;
  std::optional<double> lambda;  // unset: calibrate
  double delta = 0.0;            // 0: inradius / 4
  double r = 0.0;                // 0: max(4.5 L, 8h)
  double r_factor = 4.5;
  double r_min_factor = 8.0;
  double cell_scale = 0.0;
  bool skip_clean = true;
  bool keep_snapshots = true;
  int max_homotopy_iters = 10;
};

/// Norm bookkeeping for one colour step u_k -> u_{k+1}.
struct ColourStep {
  int colour = 0;
  std::vector<int> balls;
  double lp_step = 0.0, grad_step = 0.0;
  double c_step_lp = 0.0;  // lp_step / (r grad_step)
  double e_measure = 0.0, grad_uk_e = 0.0;
  double c_step_grad = 0.0;      // grad_step / ||grad u_k||_{L^p(E_k)}
  double e_bound = 0.0;  // |E_k|^{1/p} / (r ||grad u_k||_{L^p})
  double lp_cum = 0.0, grad_cum = 0.0;
  double f_measure = 0.0, grad_u_f = 0.0;
  double c_cum_lp = 0.0;   // lp_cum / (r ||grad u||_{L^p})
  double c_cum_l2p = 0.0;  // lp_cum / (r ||grad u||_{L^{2p}})
  double c_cum_grad = 0.0;      // grad_cum / ||grad u||_{L^p(F_{k+1})}
  bool f_subadditive = true;
  double L_after = 0.0;
  std::size_t charges_after = 0;
};

struct Case2Record {
  Vec3 alpha{0, 0, 0};
  double lp_u_alpha = 0.0, grad_lp = 0.0;
  double poincare_measured = 0.0, poincare_reference = 0.0;
  bool poincare_ok = true;
  double omega_measure = 0.0;
  double holder_lhs = 0.0, holder_rhs = 0.0;  // L <= |Omega|^{1-(N-1)/p} ||grad u||^{N-1}
  bool holder_ok = true;
  double chain_lhs = 0.0, chain_mid = 0.0, chain_rhs = 0.0, c0 = 0.0;
  bool chain_ok = true;
};

struct Snapshot {
  int colour = 0;
  GridMap u;                     // u_{k+1}
  std::vector<std::uint8_t> e;   // E_k
};

struct ApproximationReport {
  std::string status = "ok";
  std::string branch;  // "case1" or "case2"
  int failed_ball = -1;
  std::string failure_code, failure_message;
  double p = 0.0;
  double L0 = 0.0, r = 0.0, lambda = 0.0, delta = 0.0;
  std::string lambda_source;
  bool r_below_floor = false;
  int theta = 0, colours = 0, ball_count = 0;
  int surgeries = 0, skipped = 0, good_to_bad_fallbacks = 0;
  std::vector<SurgeryReport> surgery_reports;
  std::vector<ColourStep> steps;
  std::vector<Snapshot> snapshots;
  std::vector<std::uint8_t> a_mask;  // A_r = F_{theta+1}
  double a_measure = 0.0;
  double lp_final = 0.0, grad_final = 0.0, w1p_final = 0.0;
  double grad_u = 0.0, grad_u_2p = 0.0, grad_u_a = 0.0;
  double c_final = 0.0;      // w1p_final / ||grad u||_{L^p(A_r)}
  double a_ratio = 0.0;      // |A_r|^{1/p} / (r ||grad u||_{L^p})
  double a_ratio_L = 0.0;    // |A_r|^{1/p} / (L ||grad u||_{L^p})
  std::size_t residual_charges = 0;
  double residual_jacobian = 0.0;
  double L_final = 0.0;
  std::optional<Case2Record> case2;

  bool ok() const { return status == "ok"; }
};

struct ApproximationResult {
  GridMap w;
  ApproximationReport report;
};

/// max |<Jac u, zeta>| over the family.
inline double jacobian_zero_test(const GridMap& u, const std::vector<TestFunction>& family) {
  const DField D = d_field(u);
  double m = 0;
  for (const TestFunction& z : family) m = std::max(m, std::abs(pairing_with(D, z)));
  return m;
}

namespace detail {

inline double mask_measure(const VectorField& f, const std::vector<std::uint8_t>& m) {
  double s = 0;
  f.for_each_cell(Region::cells(m), [&](int, int, int, std::size_t) { s += f.lattice.cell_volume(); });
  return s;
}

inline double grad_on_mask(const VectorField& f, double p, const std::vector<std::uint8_t>& m) {
  return std::pow(gradient_energy(f, p, Region::cells(m)), 1.0 / p);
}

inline double safe_ratio(double a, double b) {
  if (b > 0) return a / b;
  return a == 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

/// Induction quantities of one colour step; F_prev is F_k, F_new = F_k u E_k.
inline ColourStep colour_step(const GridMap& u, const GridMap& uk, const GridMap& uk1, const std::vector<std::uint8_t>& E,
                              const std::vector<std::uint8_t>& F_prev, const std::vector<std::uint8_t>& F_new, double r,
                              double p) {
  ColourStep st;
  const DifferenceNorms step = difference_norms(uk1.field(), uk.field(), p);
  st.lp_step = step.values;
  st.grad_step = step.gradient;
  st.c_step_lp = safe_ratio(st.lp_step, r * st.grad_step);
  st.e_measure = mask_measure(uk.field(), E);
  st.grad_uk_e = grad_on_mask(uk.field(), p, E);
  st.c_step_grad = safe_ratio(st.grad_step, st.grad_uk_e);
  st.e_bound = safe_ratio(std::pow(st.e_measure, 1.0 / p), r * gradient_lp(uk.field(), p));
  const DifferenceNorms cum = difference_norms(uk1.field(), u.field(), p);
  st.lp_cum = cum.values;
  st.grad_cum = cum.gradient;
  st.f_measure = mask_measure(u.field(), F_new);
  st.grad_u_f = grad_on_mask(u.field(), p, F_new);
  st.c_cum_lp = safe_ratio(st.lp_cum, r * gradient_lp(u.field(), p));
  st.c_cum_l2p = safe_ratio(st.lp_cum, r * gradient_lp(u.field(), 2 * p));
  st.c_cum_grad = safe_ratio(st.grad_cum, st.grad_u_f);
  const double fp = mask_measure(u.field(), F_prev);
  st.f_subadditive = std::pow(st.f_measure, 1.0 / p) <= std::pow(fp, 1.0 / p) + std::pow(st.e_measure, 1.0 / p) + 1e-15;
  return st;
}

inline Case2Record case2_record(const GridMap& u, double L, double delta, double p, GridMap& out) {
  const VectorField& f = u.field();
  const int N = u.dim();
  Case2Record c;
  Vec3 s{0, 0, 0};
  for (std::size_t n = 0; n < f.values.size(); ++n)
    if (f.node_active[n]) s += f.values[n];
  c.alpha = norm(s) > 0 ? normalized(s) : (N == 2 ? Vec3{1, 0, 0} : Vec3{0, 0, 1});
  VectorField a = f;
  for (std::size_t n = 0; n < a.values.size(); ++n) a.values[n] = c.alpha;
  out = GridMap(std::move(a));
  c.lp_u_alpha = difference_norms(f, out.field(), p).values;
  c.grad_lp = gradient_lp(f, p);
  c.poincare_measured = safe_ratio(c.lp_u_alpha, c.grad_lp);
  c.omega_measure = region_measure(f, Region::all());
  // convex domains: ||u - mean u|| <= (omega_N / |Omega|)^{1-1/N} d^N ||grad u||, doubled for the projection
  const DomainSpec& d = u.domain();
  c.poincare_reference = 2.0 * std::pow(unit_ball_volume(N) / d.volume(), 1.0 - 1.0 / N) * std::pow(d.diameter(), N);
  c.poincare_ok = c.lp_u_alpha <= c.poincare_reference * c.grad_lp;
  const double O = c.omega_measure;
  c.holder_lhs = L;
  c.holder_rhs = std::pow(O, 1.0 - (N - 1) / p) * std::pow(c.grad_lp, N - 1);
  c.holder_ok = c.holder_lhs <= c.holder_rhs;
  c.c0 = std::pow(delta / 4.0, double(N) / (N - 1)) / std::pow(O, 1.0 / (N - 1));
  c.chain_lhs = L * c.grad_lp;
  c.chain_mid = std::pow(L, double(N) / (N - 1)) / std::pow(O, 1.0 / (N - 1) - 1.0 / p);
  c.chain_rhs = c.c0 * std::pow(O, 1.0 / p);
  c.chain_ok = c.chain_lhs >= c.chain_mid * (1 - 1e-12) && c.chain_mid >= c.chain_rhs * (1 - 1e-12);
  return c;
}

inline void or_mask(std::vector<std::uint8_t>& into, const std::vector<std::uint8_t>& m) {
  if (into.size() < m.size()) into.resize(m.size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) into[i] = into[i] | m[i];
}

}  // namespace detail

/// Cover, colour and sweep surgeries over u (or return the constant map
/// when 4L(u) >= delta).  Failures stop the sweep; the report is kept.
inline ApproximationResult approximate(const GridMap& u, const PipelineConfig& cfg) {
  const DomainSpec& d = u.domain();
  const int N = u.dim();
  const double p = cfg.p;
  require(p > N - 1 && p < N, ErrorCode::Precondition, "p must lie in (N-1, N)");
  ApproximationResult res;
  ApproximationReport& rep = res.report;
  rep.p = p;
  rep.delta = cfg.delta > 0 ? cfg.delta : default_delta(d);
  const LResult l0 = l_of_map(u, cfg.cell_scale);
  rep.L0 = l0.L;
  rep.grad_u = gradient_lp(u.field(), p);
  rep.grad_u_2p = gradient_lp(u.field(), 2 * p);
  const auto family = make_dual_family(d, l0.charges, u.h());
  const std::size_t cells = u.lattice().cell_count();
  auto finish = [&](const GridMap& w) {
    const DifferenceNorms dn = difference_norms(w.field(), u.field(), p);
    rep.lp_final = dn.values;
    rep.grad_final = dn.gradient;
    rep.w1p_final = dn.w1p();
    rep.a_measure = detail::mask_measure(u.field(), rep.a_mask);
    rep.grad_u_a = detail::grad_on_mask(u.field(), p, rep.a_mask);
    rep.c_final = detail::safe_ratio(rep.w1p_final, rep.grad_u_a);
    rep.a_ratio = detail::safe_ratio(std::pow(rep.a_measure, 1.0 / p), rep.r * rep.grad_u);
    rep.a_ratio_L = detail::safe_ratio(std::pow(rep.a_measure, 1.0 / p), rep.L0 * rep.grad_u);
    const LResult lf = l_of_map(w, cfg.cell_scale);
    rep.L_final = lf.L;
    rep.residual_charges = lf.charges.size();
    rep.residual_jacobian = jacobian_zero_test(w, family);
  };

  if (4.0 * rep.L0 >= rep.delta) {
    rep.branch = "case2";
    GridMap w;
    rep.case2 = detail::case2_record(u, rep.L0, rep.delta, p, w);
    rep.a_mask.assign(cells, 0);
    u.field().for_each_cell(Region::all(), [&](int, int, int, std::size_t c) { rep.a_mask[c] = 1; });
    rep.r = 0;
    finish(w);
    res.w = std::move(w);
    return res;
  }
  rep.branch = "case1";
  const double h = u.h();
  double r = cfg.r > 0 ? cfg.r : std::max(cfg.r_factor * rep.L0, cfg.r_min_factor * h);
  if (cfg.r <= 0 && r >= rep.delta) {
    r = 0.5 * (4.0 * rep.L0 + rep.delta);
    rep.r_below_floor = r < cfg.r_min_factor * h;
  }
  rep.r = r;
  if (cfg.lambda) {
    rep.lambda = *cfg.lambda;
    rep.lambda_source = "config";
  } else {
    rep.lambda = calibrate_lambda(N, p, u.lattice().n, r).lambda;
    rep.lambda_source = "calibrated";
  }
  const BallPlan plan = plan_cover(d, r, rep.delta);
  rep.theta = plan.theta;
  rep.colours = plan.colours;
  rep.ball_count = int(plan.balls.size());

  SurgeryOptions opt;
  opt.p = p;
  opt.lambda = rep.lambda;
  opt.cell_scale = cfg.cell_scale;
  opt.delta_cfg = rep.delta;
  opt.max_homotopy_iters = cfg.max_homotopy_iters;
  opt.measure_L_after = false;

  GridMap cur = u;
  LResult lk = l0;
  std::vector<std::uint8_t> F(cells, 0);
  rep.a_mask = F;
  for (int k = 0; k < plan.colours; ++k) {
    GridMap next = cur;
    std::vector<std::uint8_t> E(cells, 0);
    std::vector<int> touched;
    for (int id : plan.classes[k]) {
      const PlannedBall& b = plan.balls[id];
      const Vec3 c = b.boundary ? b.y0 : b.x;
      const BallGeometry g = b.boundary ? BallGeometry::on_face(d, b.y0, r) : BallGeometry::interior(b.x, r);
      const double thr = detail::threshold_for(g, N, p, rep.lambda);
      const double energy = gradient_energy(cur.field(), p, Region::ball(c, g.outer()));
      const bool clean = charges_in_ball(lk.charges, c, g.outer()).empty();
      if (cfg.skip_clean && clean && energy < thr) {
        ++rep.skipped;
        continue;
      }
      try {
        SurgeryResult sr;
        if (b.boundary) {
          try {
            sr = replace_boundary_ball(next, b.y0, r, lk.matching, opt);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::TraceNotInSmallDisk) throw;
            SurgeryOptions forced = opt;
            forced.force_bad = true;
            sr = replace_boundary_ball(next, b.y0, r, lk.matching, forced);
            ++rep.good_to_bad_fallbacks;
          }
        } else if (energy >= thr) {
          sr = replace_bad_ball(next, b.x, r, lk.matching, opt);
        } else {
          try {
            sr = replace_good_ball(next, b.x, r, lk.matching, opt);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::TraceNotInSmallDisk) throw;
            SurgeryOptions forced = opt;
            forced.force_bad = true;
            sr = replace_bad_ball(next, b.x, r, lk.matching, forced);
            ++rep.good_to_bad_fallbacks;
          }
        }
        sr.report.ball_id = id;
        detail::or_mask(E, sr.report.a_mask);
        sr.report.a_mask.clear();
        rep.surgery_reports.push_back(std::move(sr.report));
        next = std::move(sr.w);
        touched.push_back(id);
        ++rep.surgeries;
      } catch (const Error& e) {
        rep.status = "failed";
        rep.failed_ball = id;
        rep.failure_code = std::string(to_string(e.code()));
        rep.failure_message = e.what();
        detail::or_mask(rep.a_mask, E);
        finish(next);
        res.w = std::move(next);
        return res;
      }
    }
    if (touched.empty()) continue;
    std::vector<std::uint8_t> Fn = F;
    detail::or_mask(Fn, E);
    ColourStep st = detail::colour_step(u, cur, next, E, F, Fn, r, p);
    st.colour = k;
    st.balls = touched;
    lk = l_of_map(next, cfg.cell_scale);
    st.L_after = lk.L;
    st.charges_after = lk.charges.size();
    rep.steps.push_back(std::move(st));
    if (cfg.keep_snapshots) rep.snapshots.push_back({k, next, E});
    F = std::move(Fn);
    cur = std::move(next);
  }
  rep.a_mask = F;
  finish(cur);
  res.w = std::move(cur);
  return res;
}

// ---------------------------------------------------------------------------
// Verification

struct VerificationRecord {
  double w1p_lhs = 0.0;   // ||u - w||_{W^{1,p}}
  double w1p_rhs = 0.0;   // ||grad u||_{L^p(A)}
  double c_w1p = 0.0;
  double area_lhs = 0.0;   // |A|^{1/p}
  double area_rhs = 0.0;   // L(u) ||grad u||_{L^p}
  double c_area = 0.0;
  double L_used = 0.0;
  std::string L_method;  // "brute-force" or "hungarian"
  std::vector<ColourStep> steps;
  bool steps_match_report = true;
  bool f_subadditive = true;
  bool all_finite = true;
};

/// Recomputes both sides of the global estimates and the per-colour
/// induction chain from the stored snapshots.
inline VerificationRecord verify_estimates(const GridMap& u, const GridMap& w, const ApproximationReport& rep, double p) {
  VerificationRecord v;
  const DifferenceNorms dn = difference_norms(w.field(), u.field(), p);
  v.w1p_lhs = dn.w1p();
  v.w1p_rhs = detail::grad_on_mask(u.field(), p, rep.a_mask);
  v.c_w1p = detail::safe_ratio(v.w1p_lhs, v.w1p_rhs);
  const LResult l = l_of_map(u);
  if (l.charges.expanded_count() <= kBruteForceLimit) {
    v.L_used = brute_force_connection(l.charges, u.domain());
    v.L_method = "brute-force";
  } else {
    v.L_used = l.L;
    v.L_method = "hungarian";
  }
  v.area_lhs = std::pow(detail::mask_measure(u.field(), rep.a_mask), 1.0 / p);
  v.area_rhs = v.L_used * gradient_lp(u.field(), p);
  v.c_area = detail::safe_ratio(v.area_lhs, v.area_rhs);
  const std::size_t cells = u.lattice().cell_count();
  std::vector<std::uint8_t> F(cells, 0);
  const GridMap* prev = &u;
  for (std::size_t i = 0; i < rep.snapshots.size(); ++i) {
    const Snapshot& s = rep.snapshots[i];
    std::vector<std::uint8_t> Fn = F;
    detail::or_mask(Fn, s.e);
    ColourStep st = detail::colour_step(u, *prev, s.u, s.e, F, Fn, rep.r, p);
    st.colour = s.colour;
    if (i < rep.steps.size()) {
      const ColourStep& o = rep.steps[i];
      st.balls = o.balls;
      st.L_after = o.L_after;
      st.charges_after = o.charges_after;
      v.steps_match_report = v.steps_match_report && std::abs(o.grad_step - st.grad_step) <= 1e-12 * (1 + o.grad_step) &&
                             std::abs(o.lp_cum - st.lp_cum) <= 1e-12 * (1 + o.lp_cum);
    }
    v.f_subadditive = v.f_subadditive && st.f_subadditive;
    for (double x : {st.c_step_lp, st.c_step_grad, st.c_cum_lp, st.c_cum_l2p, st.c_cum_grad, st.e_bound}) v.all_finite = v.all_finite && std::isfinite(x);
    v.steps.push_back(std::move(st));
    F = std::move(Fn);
    prev = &s.u;
  }
  v.all_finite = v.all_finite && std::isfinite(v.c_w1p) && std::isfinite(v.c_area);
  return v;
}

}  // namespace sphmap
