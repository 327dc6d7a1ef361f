#include <gtest/gtest.h>

#include <random>

#include "sphmap/jacobian.hpp"

using namespace sphmap;

namespace {

// Degree of an analytic map on a sphere by lat-long quadrature of signed
// solid angles (N=3) or dense angle increments (N=2); independent of the
// library meshes.
double analytic_degree(const std::function<Vec3(const Vec3&)>& g, const Vec3& c, double R, int dim) {
  if (dim == 2) {
    const int M = 20000;
    double s = 0;
    Vec3 prev = g(c + Vec3{R, 0, 0});
    for (int i = 1; i <= M; ++i) {
      const double a = 2 * kPi * i / M;
      const Vec3 cur = g(c + R * Vec3{std::cos(a), std::sin(a), 0});
      s += std::atan2(prev[0] * cur[1] - prev[1] * cur[0], prev[0] * cur[0] + prev[1] * cur[1]);
      prev = cur;
    }
    return s / (2 * kPi);
  }
  const int nt = 200, np = 400;
  auto P = [&](int i, int j) {
    const double t = kPi * i / nt, p = 2 * kPi * j / np;
    return g(c + R * Vec3{std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)});
  };
  double s = 0;
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < np; ++j) {
      const Vec3 a = P(i, j), b = P(i + 1, j), cc = P(i + 1, j + 1), d = P(i, j + 1);
      // (theta, phi) increasing is outward for this ordering
      s += solid_angle(a, b, cc) + solid_angle(a, cc, d);
    }
  return s / (4 * kPi);
}

}  // namespace

TEST(DipoleOracle, AnalyticDegreesAroundEachCharge) {
  for (int dim : {2, 3}) {
    DomainSpec d(dim, Shape::Box);
    const Lattice L = Lattice::for_domain(d, 32);
    PresetFunction pf = preset_function(d, L, PresetId::Dipole, {});
    const Vec3 P = pf.singularities[0], Q = pf.singularities[1];
    EXPECT_NEAR(analytic_degree(pf.eval, P, 0.05, dim), 1.0, 1e-6);
    EXPECT_NEAR(analytic_degree(pf.eval, Q, 0.05, dim), -1.0, 1e-6);
    EXPECT_NEAR(analytic_degree(pf.eval, 0.5 * (P + Q), 0.4, dim), 0.0, 1e-6);
    // the library's gridded degree agrees with the oracle
    GridMap u = make_map(d, 64, PresetId::Dipole);
    EXPECT_EQ(sphere_degree(u, P, 0.06).degree, 1);
    EXPECT_EQ(sphere_degree(u, Q, 0.06).degree, -1);
    EXPECT_EQ(sphere_degree(u, 0.5 * (P + Q), 0.4).degree, 0);
  }
}

TEST(DField, ConstantIsZero) {
  GridMap u = make_map(DomainSpec(3, Shape::Box), 10, PresetId::Constant);
  for (double x : d_field(u).data) EXPECT_EQ(x, 0.0);
}

TEST(DField, VortexIsTangentialOverRho) {
  GridMap u = make_map(DomainSpec(2, Shape::Ball), 128, PresetId::Hedgehog);
  const DField D = d_field(u);
  u.field().for_each_cell(Region::all(), [&](int i, int j, int k, std::size_t c) {
    const Vec3 x = u.lattice().cell_centre(i, j, k);
    const double rho = norm(x);
    if (rho < 0.3 || rho > 0.9) return;
    // symbolic: (u1 u2_y - u2 u1_y, u1_x u2 - u2_x u1) = x / rho^2 for u = x/rho
    const Vec3 oracle = (1.0 / (rho * rho)) * x;
    const Vec3 got{D.data[2 * c], D.data[2 * c + 1], 0};
    EXPECT_LT(distance(got, oracle), 3.0 * u.h() / (rho * rho));
  });
}

TEST(DField, HedgehogIsInverseSquareRadial) {
  GridMap u = make_map(DomainSpec(3, Shape::Ball), 48, PresetId::Hedgehog);
  const DField D = d_field(u);
  u.field().for_each_cell(Region::all(), [&](int i, int j, int k, std::size_t c) {
    const Vec3 x = u.lattice().cell_centre(i, j, k);
    const double r = norm(x);
    if (r < 0.25) return;
    const Vec3 oracle = (1.0 / (r * r * r)) * x;
    const Vec3 got{D.data[3 * c], D.data[3 * c + 1], D.data[3 * c + 2]};
    EXPECT_LT(distance(got, oracle), 4.0 * u.h() / (r * r * r));
  });
}

TEST(Pairing, HedgehogAtomAt64) {
  GridMap u = make_map(DomainSpec(3, Shape::Ball), 64, PresetId::Hedgehog);
  const DField D = d_field(u);
  for (double R : {0.4, 0.6, 0.8}) {
    const TestFunction z = make_bump({0, 0, 0}, R);
    EXPECT_NEAR(pairing_with(D, z) / (4 * kPi / 3), 1.0, 0.03) << R;
  }
}

TEST(Pairing, LinearityAndSupport) {
  GridMap u = make_map(DomainSpec(3, Shape::Box), 24, PresetId::Dipole);
  const DField D = d_field(u);
  const TestFunction z1 = make_bump({0.5, 0.5, 0.5}, 0.3), z2 = make_cone({0.45, 0.52, 0.5}, 0.25);
  const double a = 0.7, b = -1.3;
  const TestFunction z = make_combination({{a, z1}, {b, z2}});
  EXPECT_NEAR(pairing_with(D, z), a * pairing_with(D, z1) + b * pairing_with(D, z2), 1e-12);
  try {
    pairing_with(D, make_bump({0.5, 0.5, 0.5}, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SupportTouchesBoundary);
  }
}

TEST(Pairing, SmoothPresetsVanishUnderRefinement) {
  for (PresetId id : {PresetId::EquatorWrap, PresetId::SmoothRandom}) {
    double prev = 1e9;
    for (int res : {16, 32}) {
      GridMap u = make_map(DomainSpec(3, Shape::Box), res, id);
      const DField D = d_field(u);
      double worst = 0;
      for (const TestFunction& z : {make_bump({0.5, 0.5, 0.5}, 0.4), make_cone({0.4, 0.6, 0.5}, 0.35),
                                    make_boundary_distance(D.domain, 2 * u.h())})
        worst = std::max(worst, std::abs(pairing_with(D, z)));
      EXPECT_LT(worst, prev);
      prev = worst;
    }
    EXPECT_LT(prev, 0.05);
  }
}

TEST(Pairing, StabilityBoundIsExact) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0, 1);
  DomainSpec d(3, Shape::Box);
  for (int t = 0; t < 10; ++t) {
    PresetParams a, b;
    a.seed = rng();
    b.seed = rng();
    GridMap u = make_map(d, 16, PresetId::SmoothRandom, a);
    GridMap v = make_map(d, 16, t % 2 ? PresetId::Dipole : PresetId::Hedgehog, b);
    const DField Du = d_field(u), Dv = d_field(v);
    const TestFunction z = make_bump({0.3 + 0.4 * U(rng), 0.3 + 0.4 * U(rng), 0.3 + 0.4 * U(rng)}, 0.2, U(rng));
    EXPECT_LE(std::abs(pairing_with(Du, z) - pairing_with(Dv, z)), d_distance_l1(Du, Dv) * z.lipschitz());
  }
}

TEST(Degree, ConstantAndHedgehogs) {
  GridMap c = make_map(DomainSpec(3, Shape::Box), 16, PresetId::Constant);
  EXPECT_EQ(sphere_degree(c, {0.5, 0.5, 0.5}, 0.3).degree, 0);
  for (int dim : {2, 3})
    for (int deg = -2; deg <= 2; ++deg) {
      PresetParams prm;
      prm.degree = deg;
      GridMap u = make_map(DomainSpec(dim, Shape::Ball), dim == 3 ? 32 : 64, PresetId::Hedgehog, prm);
      for (double R : {0.15, 0.5, 0.9}) {
        const DegreeResult r = sphere_degree(u, {0, 0, 0}, R);
        EXPECT_EQ(r.degree, deg) << dim << " " << R;
        EXPECT_LE(r.residual, 0.2);
      }
    }
}

TEST(Degree, SphereOutsideDomainRefused) {
  GridMap u = make_map(DomainSpec(3, Shape::Box), 16, PresetId::Constant);
  EXPECT_THROW(sphere_degree(u, {0.5, 0.5, 0.5}, 0.6), Error);
}

TEST(Trace, HedgehogTraceIsIdentity) {
  GridMap u = make_map(DomainSpec(3, Shape::Ball), 48, PresetId::Hedgehog);
  const double R = 0.5, p = 2.0;
  const SphericalTrace tr = restrict_to_sphere(u, {0, 0, 0}, R, p);
  for (std::size_t v = 0; v < tr.values.size(); ++v) EXPECT_LT(distance(tr.values[v], tr.mesh->dirs[v]), 0.02);
  // |grad_T omega|^2 = 2/R^2 on the sphere of area 4 pi R^2: (8 pi)^{1/2}
  EXPECT_NEAR(tr.surface_lp(), std::sqrt(8 * kPi), 0.03 * std::sqrt(8 * kPi));
  GridMap c = make_map(DomainSpec(3, Shape::Ball), 16, PresetId::Constant);
  EXPECT_NEAR(restrict_to_sphere(c, {0.1, 0, 0}, 0.4).surface_energy, 0.0, 1e-20);
}

TEST(Trace, VortexCircleWinds) {
  GridMap u = make_map(DomainSpec(2, Shape::Box), 64, PresetId::Hedgehog);
  const Vec3 c = default_singularity(u.domain(), u.lattice());
  const SphericalTrace tr = restrict_to_sphere(u, c, 0.3);
  for (std::size_t v = 0; v < tr.values.size(); ++v) {
    const double ang = std::atan2(tr.mesh->dirs[v][1], tr.mesh->dirs[v][0]);
    EXPECT_NEAR(std::abs(angle_increment(tr.values[v], {std::cos(ang), std::sin(ang), 0})), 0.0, 0.02);
  }
  EXPECT_EQ(trace_degree(tr).degree, 1);
}

TEST(Charges, SmoothHedgehogDipole) {
  for (int dim : {2, 3}) {
    DomainSpec d(dim, Shape::Box);
    const int res = dim == 3 ? 64 : 128;
    GridMap s = make_map(d, res, PresetId::SmoothRandom);
    const double cs = 4 * s.h();
    EXPECT_TRUE(detect_charges(s, cs).empty());

    GridMap h = make_map(d, res, PresetId::Hedgehog);
    ChargeSet ch = detect_charges(h, cs);
    ASSERT_EQ(ch.size(), 1u);
    EXPECT_EQ(ch.charges[0].d, 1);
    EXPECT_LT(distance(ch.charges[0].x, default_singularity(d, h.lattice())), cs);

    GridMap q = make_map(d, res, PresetId::Dipole);
    const auto [P, Q] = default_dipole(d, q.lattice());
    ASSERT_GT(distance(P, Q), 3 * cs);
    ch = detect_charges(q, cs);
    ASSERT_EQ(ch.size(), 2u);
    int plus = 0, minus = 0;
    for (const auto& c : ch.charges) {
      if (c.d == 1 && distance(c.x, P) < cs) ++plus;
      if (c.d == -1 && distance(c.x, Q) < cs) ++minus;
    }
    EXPECT_EQ(plus, 1);
    EXPECT_EQ(minus, 1);
  }
}

TEST(Charges, AdditivityOnRandomSpheres) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> U(0, 1);
  for (int dim : {2, 3})
    for (PresetId id : {PresetId::Hedgehog, PresetId::Dipole, PresetId::Constant, PresetId::SmoothRandom, PresetId::EquatorWrap}) {
      DomainSpec d(dim, Shape::Box);
      GridMap u = make_map(d, dim == 3 ? 32 : 96, id);
      const ChargeSet ch = detect_charges(u, 4 * u.h());
      int tested = 0;
      while (tested < 20) {
        Vec3 c{0.2 + 0.6 * U(rng), 0.2 + 0.6 * U(rng), dim == 3 ? 0.2 + 0.6 * U(rng) : 0.0};
        const double R = 0.05 + U(rng) * (d.boundary_distance(c) - 0.06);
        // keep spheres a few cells clear of every charge
        bool clear = true;
        for (const auto& q : ch.charges) clear = clear && std::abs(distance(q.x, c) - R) > 3 * u.h();
        if (!clear) continue;
        int inside = 0;
        for (const auto& q : ch.charges)
          if (distance(q.x, c) < R) inside += q.d;
        EXPECT_EQ(sphere_degree(u, c, R).degree, inside) << to_string(id);
        ++tested;
      }
    }
}

TEST(Jacobian, DeterminantOfUnitMapIsSmall) {
  GridMap u = make_map(DomainSpec(3, Shape::Box), 32, PresetId::SmoothRandom);
  u.field().for_each_cell(Region::all(), [&](int i, int j, int k, std::size_t) {
    const Mat3 G = cell_gradient(u.field(), i, j, k);
    const Vec3 a{G[0][0], G[1][0], G[2][0]}, b{G[0][1], G[1][1], G[2][1]}, c{G[0][2], G[1][2], G[2][2]};
    const double g = frobenius(G);
    EXPECT_LE(std::abs(dot(a, cross(b, c))), 2.0 * u.h() * g * g * g + 1e-12);
  });
}
