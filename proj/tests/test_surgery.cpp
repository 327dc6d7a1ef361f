#include <gtest/gtest.h>

#include <random>

#include "sphmap/surgery.hpp"

using namespace sphmap;

namespace {

template <class F>
GridMap field_from(const DomainSpec& d, int res, F&& f) {
  VectorField v = VectorField::on(d, res);
  all_nodes(v.lattice).for_each([&](int i, int j, int k) {
    v.values[v.lattice.node_index(i, j, k)] = normalized(f(v.lattice.node_position(i, j, k)));
  });
  return GridMap(std::move(v));
}

GridMap gentle(const DomainSpec& d, int res, double a) {
  return field_from(d, res, [a, dim = d.dim](const Vec3& x) {
    if (dim == 2) {
      const double th = a * (std::sin(3 * x[0] + 1) + std::cos(2 * x[1]));
      return Vec3{std::cos(th), std::sin(th), 0.0};
    }
    return Vec3{a * std::sin(3 * x[0] + 1), a * std::cos(2 * x[1] + 0.5 * x[2]), 1.0};
  });
}

// degree-0 map of the sphere onto itself covering it twice: theta -> 2 theta
Vec3 fold(const Vec3& w) {
  const double th = std::acos(std::clamp(w[2], -1.0, 1.0)), ph = std::atan2(w[1], w[0]);
  return {std::sin(2 * th) * std::cos(ph), std::sin(2 * th) * std::sin(ph), std::cos(2 * th)};
}

// shifted off its symmetry axis; still onto and of degree 0
Vec3 tilted_fold(const Vec3& w) { return normalized(fold(w) + Vec3{0.2, 0.08, 0.05}); }

SphericalTrace trace_of(const SphereMesh& m, Vec3 (*f)(const Vec3&)) {
  SphericalTrace tr;
  tr.dim = m.dim;
  tr.radius = 1;
  tr.mesh = &m;
  for (const Vec3& w : m.dirs) tr.values.push_back(f(w));
  tr.present.assign(m.size(), 1);
  return tr;
}

bool nodes_equal_outside(const GridMap& a, const GridMap& b, const Vec3& c, double R) {
  const Lattice& L = a.lattice();
  bool ok = true;
  all_nodes(L).for_each([&](int i, int j, int k) {
    const std::size_t n = L.node_index(i, j, k);
    if (distance(L.node_position(i, j, k), c) >= R && !(a.values()[n] == b.values()[n])) ok = false;
  });
  return ok;
}

SurgeryOptions opts(double lambda, double p = 2.5) {
  SurgeryOptions o;
  o.p = p;
  o.lambda = lambda;
  return o;
}

}  // namespace

TEST(Retraction, IdentityInsideAndImageInDisk) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> G;
  for (int t = 0; t < 2000; ++t) {
    const Vec3 xi = normalized(Vec3{G(rng), G(rng), G(rng)});
    const Vec3 x = normalized(Vec3{G(rng), G(rng), G(rng)});
    const RetractionPhi phi{xi};
    const Vec3 y = phi(x);
    EXPECT_NEAR(norm(y), 1.0, 1e-14);
    if (geodesic_distance(xi, x) <= 2.0 / 3.0) EXPECT_TRUE(y == x);
    EXPECT_LE(geodesic_distance(xi, y), 5.0 / 6.0 + 1e-12);
  }
  const Vec3 pole = RetractionPhi{{0, 0, 1}}(Vec3{0, 0, -1});
  EXPECT_TRUE(pole == (Vec3{0, 0, 1}));
}

TEST(Retraction, LipschitzAtMostTwo) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> G;
  double worst = 0;
  for (int t = 0; t < 20000; ++t) {
    const RetractionPhi phi{{0, 0, 1}};
    const Vec3 x = normalized(Vec3{G(rng), G(rng), G(rng)});
    const Vec3 y = normalized(x + 1e-3 * Vec3{G(rng), G(rng), G(rng)});
    const double dx = geodesic_distance(x, y);
    if (dx < 1e-9) continue;
    worst = std::max(worst, geodesic_distance(phi(x), phi(y)) / dx);
  }
  EXPECT_LE(worst, 2.0);
  EXPECT_GT(worst, 1.0);
}

TEST(Homotopy, CircleLift) {
  const SphereMesh& m = sphere_mesh(2, 256);
  auto f = [](const Vec3& w) {
    const double a = std::atan2(w[1], w[0]);
    const double th = 2.5 * std::sin(a) + 0.7 * std::cos(3 * a);
    return Vec3{std::cos(th), std::sin(th), 0};
  };
  SphericalTrace tr;
  tr.dim = 2;
  tr.mesh = &m;
  for (const Vec3& w : m.dirs) tr.values.push_back(f(w));
  tr.present.assign(m.size(), 1);
  const Homotopy H = contract_degree_zero(tr, 8, f);
  EXPECT_EQ(H.method, "lift");
  for (double a = 0; a < 2 * kPi; a += 0.01) {
    const Vec3 w{std::cos(a), std::sin(a), 0};
    EXPECT_LE(distance(H(0.2, w), H.xi), 1e-14);
    EXPECT_LE(distance(H(0.8, w), f(w)), 1e-12);
    EXPECT_LE(distance(H(0.5, w), H(0.5 + 1e-4, w)), 1e-2);
  }
}

TEST(Homotopy, NonzeroDegreeRefused) {
  const SphericalTrace tr = trace_of(sphere_mesh(3, 3), [](const Vec3& w) { return w; });
  try {
    contract_degree_zero(tr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonzeroDegree);
  }
}

TEST(Homotopy, CapAndCascade) {
  const SphereMesh& m = sphere_mesh(3, 3);
  {
    const SphericalTrace tr = trace_of(m, [](const Vec3& w) { return normalized(Vec3{w[0], w[1], 2.0}); });
    const Homotopy H = contract_degree_zero(tr);
    EXPECT_EQ(H.method, "cap");
    for (std::size_t v = 0; v < m.size(); v += 7) {
      EXPECT_LE(distance(H(0.0, m.dirs[v]), H.xi), 1e-14);
      EXPECT_LE(distance(H(1.0, m.dirs[v]), tr.values[v]), 1e-12);
    }
  }
  const SphericalTrace tr = trace_of(m, tilted_fold);
  ASSERT_NEAR(raw_degree(m, tr.values), 0.0, 1e-9);
  ASSERT_LT(detail::best_cap(tr.values).second, kCapMargin);
  const Homotopy H = contract_degree_zero(tr, 10, tilted_fold);
  EXPECT_EQ(H.method, "mollify-cap");
  EXPECT_GE(H.iterations, 1);
  for (std::size_t v = 0; v < m.size(); v += 5) {
    const Vec3 w = m.dirs[v];
    EXPECT_LE(distance(H(0.1, w), H.xi), 1e-14);
    EXPECT_LE(distance(H(0.9, w), tilted_fold(w)), 1e-12);
    for (double t = 0.34; t < 0.66; t += 0.02) EXPECT_NEAR(norm(H(t, w)), 1.0, 1e-12);
  }
}

TEST(SelectRadius, PreconditionsAndBounds) {
  DomainSpec d(2, Shape::Box);
  const GridMap u = make_map(d, 128, PresetId::Hedgehog);
  const LResult lr = l_of_map(u);
  try {
    select_radius(u, BallGeometry::interior({0.5, 0.5, 0}, 0.1), lr.matching, opts(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Precondition);
  }
  const GridMap g = gentle(d, 128, 0.3);
  const MatchingSolution none;
  const SliceSelection s = select_radius(g, BallGeometry::interior({0.5, 0.5, 0}, 0.1), none, opts(1));
  EXPECT_GT(s.s, 0.15);
  EXPECT_LT(s.s, 0.2);
  EXPECT_TRUE(s.fubini_ok);
  EXPECT_EQ(s.admissible_count, s.candidate_count);
  EXPECT_EQ(s.psi({0.5 + s.s, 0.5, 0}), 1.0);
  EXPECT_LE(s.psi({0.5 + s.s + s.psi_width, 0.5, 0}), 1e-12);
  EXPECT_EQ(s.psi({0.5 + s.s + s.psi_width + 1e-6, 0.5, 0}), 0.0);
}

TEST(SelectRadius, AdmissibleFractionAroundDipoles) {
  // random close dipoles: admissible share of (3r/2, 2r) is at least 1/4 - widths/(r/2)
  DomainSpec d(2, Shape::Box);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int t = 0; t < 8; ++t) {
    const Lattice L = Lattice::for_domain(d, 256);
    PresetParams prm;
    const Vec3 c{0.5 + 0.05 * U(rng) + 0.31 * L.h, 0.5 + 0.05 * U(rng) + 0.17 * L.h, 0};
    const Vec3 off{0.0075 * U(rng) + 0.0175, 0.005 * U(rng), 0};
    prm.positive = c + off;
    prm.negative = c - off;
    const GridMap u = make_map(d, 256, PresetId::Dipole, prm);
    const LResult lr = l_of_map(u);
    const double r = 4.05 * lr.L + 0.005;
    const Vec3 x0 = c;
    const SliceSelection s = select_radius(u, BallGeometry::interior(x0, r), lr.matching, opts(1));
    EXPECT_GE(s.admissible_fraction, 0.25 - s.segment_widths / (0.5 * r)) << t;
    EXPECT_EQ(s.degree, 0);
  }
}

TEST(BadBall, RemovesDipole2D) {
  DomainSpec d(2, Shape::Box);
  const Lattice L = Lattice::for_domain(d, 256);
  PresetParams prm;
  prm.positive = Vec3{0.52 + 0.3 * L.h, 0.5 + 0.2 * L.h, 0};
  prm.negative = Vec3{0.48 + 0.1 * L.h, 0.5 + 0.4 * L.h, 0};
  const GridMap u = make_map(d, 256, PresetId::Dipole, prm);
  const LResult lr = l_of_map(u);
  ASSERT_EQ(lr.charges.size(), 2u);
  const Vec3 x0{0.5, 0.5, 0};
  const double r = 4.5 * lr.L;
  const SurgeryResult res = replace_bad_ball(u, x0, r, lr.matching, opts(0.01));
  const SurgeryReport& rep = res.report;
  EXPECT_EQ(rep.branch, "bad");
  EXPECT_EQ(rep.inner_charges_after, 0u);
  EXPECT_LE(rep.L_after, rep.L_before + 2 * lr.cell_scale);
  EXPECT_TRUE(rep.locality_ok);
  EXPECT_TRUE(nodes_equal_outside(u, res.w, x0, rep.slice.s));
  EXPECT_TRUE(rep.volume_ok);
  EXPECT_TRUE(std::isfinite(rep.c_lp) && std::isfinite(rep.c_grad) && std::isfinite(rep.c_grad_a));
  EXPECT_NEAR(res.w.field().max_unit_deviation(), 0.0, 1e-12);
  try {
    replace_bad_ball(u, x0, r, lr.matching, opts(1e6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotABadBall);
  }
}

TEST(BadBall, SmoothMap3D) {
  DomainSpec d(3, Shape::Box);
  const GridMap u = make_map(d, 32, PresetId::SmoothRandom);
  const MatchingSolution none;
  const Vec3 x0{0.5, 0.5, 0.5};
  const SurgeryResult res = replace_bad_ball(u, x0, 0.2, none, opts(1e-6));
  EXPECT_TRUE(res.report.locality_ok);
  EXPECT_EQ(res.report.inner_charges_after, 0u);
  EXPECT_EQ(res.report.L_after, 0.0);
  EXPECT_TRUE(res.report.homotopy_method == "cap" || res.report.homotopy_method == "mollify-cap" ||
              res.report.homotopy_method == "constant");
}

TEST(GoodBall, SmallDiskRetraction) {
  for (int dim : {2, 3}) {
    DomainSpec d(dim, Shape::Box);
    const GridMap u = gentle(d, dim == 2 ? 128 : 32, 0.25);
    const MatchingSolution none;
    const Vec3 x0 = d.centre();
    const SurgeryResult res = replace_good_ball(u, x0, 0.2, none, opts(1e6));
    const SurgeryReport& rep = res.report;
    EXPECT_EQ(rep.branch, "good");
    EXPECT_LE(rep.trace_radius, 1.0 / 3.0);
    EXPECT_TRUE(rep.a_bound_ok);
    EXPECT_TRUE(rep.locality_ok);
    EXPECT_TRUE(nodes_equal_outside(u, res.w, x0, rep.slice.s));
    EXPECT_EQ(rep.L_after, 0.0);
    EXPECT_GE(rep.epsilon, 2 * u.h() * (1 - 1e-12));
    EXPECT_LE(rep.cheb_integral, rep.poincare_rhs * 10);
    try {
      replace_good_ball(u, x0, 0.2, none, opts(1e-8));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NotAGoodBall);
    }
  }
}

TEST(GoodBall, WideTraceRefused) {
  DomainSpec d(2, Shape::Box);
  const GridMap u = make_map(d, 128, PresetId::EquatorWrap);
  try {
    replace_good_ball(u, d.centre(), 0.2, MatchingSolution{}, opts(1e6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TraceNotInSmallDisk);
  }
}

TEST(BoundaryBall, Refusals) {
  {
    DomainSpec d(2, Shape::Ball);
    const GridMap u = make_map(d, 64, PresetId::Constant);
    try {
      replace_boundary_ball(u, {1, 0, 0}, 0.05, MatchingSolution{}, opts(1));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::CurvedBoundaryUnsupported);
    }
  }
  DomainSpec d(2, Shape::Box);
  const GridMap u = make_map(d, 64, PresetId::Constant);
  try {
    replace_boundary_ball(u, {0.5, 0.3, 0}, 0.05, MatchingSolution{}, opts(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotOnBoundary);
  }
}

TEST(BoundaryBall, BadBranchRemovesNearFaceCharge) {
  DomainSpec d(2, Shape::Box);
  const int res = 384;
  const Lattice L = Lattice::for_domain(d, res);
  PresetParams prm;
  prm.centre = Vec3{0.5 + 0.3 * L.h, 0.012 + 0.2 * L.h, 0};
  const GridMap u = make_map(d, res, PresetId::Hedgehog, prm);
  const LResult lr = l_of_map(u);
  ASSERT_EQ(lr.charges.size(), 1u);
  const Vec3 y0{(*prm.centre)[0], 0, 0};
  const double r = 4.2 * lr.L;
  const SurgeryResult out = replace_boundary_ball(u, y0, r, lr.matching, opts(0.01));
  const SurgeryReport& rep = out.report;
  EXPECT_EQ(rep.branch, "bad");
  EXPECT_FALSE(rep.multi_face);
  EXPECT_EQ(rep.inner_charges_after, 0u);
  EXPECT_LE(rep.L_after, rep.L_before + 2 * lr.cell_scale);
  EXPECT_TRUE(rep.locality_ok);
  EXPECT_TRUE(rep.volume_ok);
  EXPECT_TRUE(std::isfinite(rep.c_grad));
}

TEST(BoundaryBall, GoodBranch) {
  DomainSpec d(3, Shape::Box);
  const GridMap u = gentle(d, 32, 0.2);
  const SurgeryResult out = replace_boundary_ball(u, {0.5, 0.5, 0.0}, 0.06, MatchingSolution{}, opts(1e6));
  EXPECT_EQ(out.report.branch, "good");
  EXPECT_TRUE(out.report.locality_ok);
  EXPECT_TRUE(out.report.a_bound_ok);
  EXPECT_EQ(out.report.L_after, 0.0);
}
