#include <catch_amalgamated.hpp>

#include "set_sampling.hpp"

#include <random>

using namespace inclusol;
using namespace sampling;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Vector v2(double a, double b) {
  Vector x(2);
  x << a, b;
  return x;
}

Vector v1(double a) { return Vector::Constant(1, a); }

Union two_intervals() {
  return Union{{Box{v1(-2.0), v1(-1.0)}, Box{v1(1.0), v1(2.0)}}};
}

}  // namespace

TEST_CASE("distance examples", "[sets]") {
  CHECK(distance(Ball{v2(0, 0), 1.0}, v2(0, 0)) == 0.0);
  CHECK(distance(HalfSpace{v2(1, 0), 0.0}, v2(2, 0)) == Approx(2.0));
  CHECK(distance(BallComplement{v2(0, 0), 1.0}, v2(0, 0)) == Approx(1.0));
  CHECK(distance(Box{v2(0, 0), v2(1, 1)}, v2(2, 2)) == Approx(std::sqrt(2.0)));
}

TEST_CASE("projection examples", "[sets]") {
  Ball ball{v2(0, 0), 1.0};
  Vector inside = v2(0.3, -0.2);
  CHECK((project(ball, inside) - inside).norm() == 0.0);

  Vector a = v2(1.0, 2.0);
  HalfSpace hs{a, 1.0};
  Vector x = v2(3.0, 4.0);
  Vector expected = x - (a.dot(x) - 1.0) / a.squaredNorm() * a;
  CHECK((project(hs, x) - expected).norm() < 1e-14);

  // Equidistant candidates: the lexicographically largest one wins.
  CHECK(project(two_intervals(), v1(0.0))[0] == 1.0);
  CHECK(project(two_intervals(), v1(-0.1))[0] == -1.0);

  // The centre of a ball complement maps to a fixed point of the sphere.
  Vector p = project(BallComplement{v2(0, 0), 2.0}, v2(0, 0));
  CHECK(p.norm() == Approx(2.0));
  CHECK((project(BallComplement{v2(0, 0), 2.0}, v2(0, 0)) - p).norm() == 0.0);
}

TEST_CASE("distance subgradient examples", "[sets]") {
  CHECK((distance_subgradient(Ball{v2(0, 0), 1.0}, v2(2, 0)) - v2(1, 0)).norm() < 1e-15);
  CHECK((distance_subgradient(BallComplement{v2(0, 0), 1.0}, v2(0.5, 0)) - v2(-1, 0)).norm() < 1e-15);
  CHECK((distance_subgradient(HalfSpace{v2(1, 0), 0.0}, v2(3, 4)) - v2(1, 0)).norm() < 1e-15);
  CHECK_THROWS_WITH(distance_subgradient(Ball{v2(0, 0), 1.0}, v2(0.1, 0.1)),
                    ContainsSubstring("no nonzero subgradient selected"));
  // Boundary points get the outward normal of the active piece.
  CHECK((distance_subgradient(Box{v2(0, 0), v2(1, 1)}, v2(1, 0.5)) - v2(1, 0)).norm() < 1e-15);
  CHECK((distance_subgradient(Ball{v2(0, 0), 2.0}, v2(0, 2)) - v2(0, 1)).norm() < 1e-15);
}

TEST_CASE("validation rejects malformed geometry", "[sets]") {
  CHECK_THROWS(validate(Ball{v2(0, 0), 0.0}));
  CHECK_THROWS(validate(BallComplement{v2(0, 0), -1.0}));
  CHECK_THROWS(validate(Union{}));
  CHECK_THROWS(validate(Box{v2(1, 0), v2(0, 1)}));
  CHECK_THROWS(validate(HalfSpace{v2(0, 0), 1.0}));
  CHECK_NOTHROW(validate(two_intervals()));
}

TEST_CASE("projections are optimal on sampled set points", "[sets][property]") {
  Sampler s(101);
  std::size_t violations = 0, checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index D = 1 + trial % 3;
    SetGeometry S = s.any(D);
    Vector x = s.gauss(D, 2.0);
    Vector p = project(S, x);
    const double d = (x - p).norm();
    REQUIRE(contains(S, p, 1e-9));
    CHECK(std::abs(distance(S, x) - d) <= 1e-12);
    for (int j = 0; j < 300; ++j) {
      // Half the candidates near x, half near the returned point.
      Vector y = (j % 2 ? x : p) + s.gauss(D, j % 2 ? d + 0.5 : 0.05 + 0.2 * d);
      if (!contains(S, y)) continue;
      ++checked;
      if ((x - y).norm() < d - 1e-9) ++violations;
    }
  }
  CHECK(checked > 50000);
  CHECK(violations == 0);
}

TEST_CASE("convex projections are nonexpansive", "[sets][property]") {
  Sampler s(7);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index D = 1 + trial % 3;
    ConvexSet c = s.convex(D);
    SetGeometry S = std::visit([](const auto& v) -> SetGeometry { return v; }, c);
    Vector x = s.gauss(D, 2.0), y = s.gauss(D, 2.0);
    Vector px = project(S, x), py = project(S, y);
    CHECK((px - py).norm() <= (x - y).norm() + 1e-12);
    // Firm nonexpansiveness.
    CHECK((px - py).squaredNorm() <= (px - py).dot(x - y) + 1e-12);
  }
}

TEST_CASE("stepping back along the subgradient lands on the set", "[sets][property]") {
  Sampler s(13);
  int outside = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index D = 1 + trial % 3;
    SetGeometry S = s.any(D);
    Vector x = s.gauss(D, 2.0);
    double d = distance(S, x);
    if (d <= 1e-9) continue;
    ++outside;
    Vector n = distance_subgradient(S, x);
    CHECK(std::abs(n.norm() - 1.0) <= 1e-12);
    CHECK(n.dot(x - project(S, x)) >= 0.0);
    CHECK(distance(S, x - d * n) <= 1e-9);
  }
  CHECK(outside > 300);
}

TEST_CASE("convex boundary normals are monotone", "[sets][property]") {
  Sampler s(21);
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index D = 2 + trial % 2;
    ConvexSet c = s.convex(D);
    SetGeometry S = std::visit([](const auto& v) -> SetGeometry { return v; }, c);
    std::vector<std::pair<Vector, Vector>> pts;
    for (int j = 0; j < 8; ++j) {
      Vector x = s.gauss(D, 3.0);
      if (distance(S, x) < 1e-6) continue;
      Vector b = project(S, x);
      pts.emplace_back(b, distance_subgradient(S, b));
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = 0; j < pts.size(); ++j) {
        double ip = (pts[i].second - pts[j].second).dot(pts[i].first - pts[j].first);
        CHECK(ip >= -1e-12 * (1.0 + (pts[i].first - pts[j].first).norm()));
      }
    }
  }
}

TEST_CASE("ball complement satisfies the prox-regular inequality", "[sets][property]") {
  Sampler s(33);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index D = 2 + trial % 2;
    const double R = 0.3 + s.u(s.rng);
    BallComplement bc{s.gauss(D), R};
    for (int j = 0; j < 10; ++j) {
      Vector d1 = s.gauss(D).normalized(), d2 = s.gauss(D).normalized();
      Vector x1 = bc.center + R * d1, x2 = bc.center + R * d2;
      Vector n1 = distance_subgradient(bc, x1), n2 = distance_subgradient(bc, x2);
      CHECK((n1 + d1).norm() < 1e-12);
      double gap = (x1 - x2).squaredNorm();
      CHECK((n1 - n2).dot(x1 - x2) >= -(2.0 / R) * gap - 1e-9);
    }
  }
}

TEST_CASE("alpha-far estimates", "[sets]") {
  Sampler s(5);
  std::vector<Vector> cloud2;
  for (int i = 0; i < 400; ++i) cloud2.push_back(s.gauss(2, 2.0));
  for (int trial = 0; trial < 20; ++trial) {
    SetGeometry S = std::visit([](const auto& v) -> SetGeometry { return v; }, s.convex(2));
    CHECK(alpha_far_estimate(S, 10.0, cloud2).value == 1.0);
  }

  std::vector<Vector> line;
  for (int i = 0; i <= 400; ++i) line.push_back(v1(-3.0 + 6.0 * i / 400.0));
  auto narrow = alpha_far_estimate(two_intervals(), 0.5, line);
  CHECK(narrow.value == 1.0);
  CHECK(narrow.tube_samples > 0);

  auto wide = alpha_far_estimate(two_intervals(), 1.5, line);
  CHECK(wide.value < 0.2);
  CHECK(wide.worst_point[0] == Approx(0.0).margin(1e-12));

  std::vector<Vector> far{v1(10.0)};
  CHECK_THROWS_WITH(alpha_far_estimate(two_intervals(), 0.5, far), ContainsSubstring("empty tube sample"));

  // The centre of a ball complement sees the whole sphere.
  std::vector<Vector> centre{v2(0, 0), v2(0.2, 0.0)};
  CHECK(alpha_far_estimate(BallComplement{v2(0, 0), 1.0}, 2.0, centre).value == 0.0);
}

TEST_CASE("minimum-norm point of a hull", "[sets]") {
  CHECK(detail::min_norm_in_hull({v1(-1.0), v1(1.0)}).norm() < 1e-9);
  Vector m = detail::min_norm_in_hull({v2(1, 0), v2(0, 1)});
  CHECK((m - v2(0.5, 0.5)).norm() < 1e-9);
  CHECK((detail::min_norm_in_hull({v2(1, 1), v2(1, -1), v2(2, 0)}) - v2(1, 0)).norm() < 1e-9);
}

TEST_CASE("lipschitz probe of moving sets", "[sets]") {
  std::vector<LipschitzProbe> probes;
  for (int i = 0; i <= 10; ++i) {
    for (double z : {-1.0, 0.3, 2.0}) probes.push_back({0.1 * i, v1(0.0), v1(z)});
  }

  SECTION("static set") {
    auto rep = lipschitz_probe(MovingSet::fixed(Ball{v1(0.0), 0.5}), probes);
    CHECK(rep.compliant());
    CHECK(rep.worst_ratio == 0.0);
  }
  SECTION("translating half-line") {
    MovingSet M;
    M.family = [](double t, const Vector&) -> SetGeometry { return HalfSpace{v1(-1.0), -t}; };
    M.zeta = [](double t) { return t; };
    M.kind = VariationKind::TimeOnly;
    auto rep = lipschitz_probe(M, probes);
    CHECK(rep.compliant());
    CHECK(rep.worst_zeta_ratio == Approx(1.0));
  }
  SECTION("state-dependent set with an understated modulus") {
    MovingSet M;
    M.family = [](double, const Vector& x) -> SetGeometry { return HalfSpace{v1(-1.0), -0.5 * x.norm()}; };
    M.L = 0.4;
    std::vector<LipschitzProbe> pts;
    for (int i = 0; i <= 10; ++i) pts.push_back({0.0, v1(0.2 * i), v1(-3.0)});
    auto rep = lipschitz_probe(M, pts);
    CHECK_FALSE(rep.compliant());
    CHECK(rep.empirical_L == Approx(0.5));
    M.L = 0.5;
    CHECK(lipschitz_probe(M, pts).compliant());
  }
  SECTION("L outside [0,1) is rejected") {
    MovingSet M = MovingSet::fixed(Ball{v1(0.0), 1.0});
    M.kind = VariationKind::StateDependent;
    M.L = 1.0;
    CHECK_THROWS_WITH(M.validate(), ContainsSubstring("L must lie in [0,1)"));
  }
}
