#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "hesslab/activation.hpp"
#include "hesslab/net.hpp"
#include "hesslab/rng.hpp"

using namespace hesslab;

TEST_CASE("seed derivation separates streams") {
  const auto a = derive_seed(1, "teacher-w1", 0);
  const auto b = derive_seed(1, "teacher-w1", 1);
  const auto c = derive_seed(1, "teacher-w2", 0);
  const auto d = derive_seed(2, "teacher-w1", 0);
  CHECK(a != b);
  CHECK(a != c);
  CHECK(a != d);
  CHECK(derive_seed(1, "teacher-w1", 0) == a);
}

TEST_CASE("rng moments") {
  Rng rng(42);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == Catch::Approx(1.0).margin(0.02));

  // gamma(k) has mean k, var k; spot check both branches of Marsaglia-Tsang
  for (double shape : {0.5, 3.5}) {
    double g = 0;
    for (int i = 0; i < n / 2; ++i) g += rng.gamma(shape);
    CHECK(g / (n / 2) == Catch::Approx(shape).epsilon(0.03));
  }
}

TEST_CASE("sample_teacher is deterministic in the seed") {
  const Architecture arch(3, 4);
  const auto a = sample_teacher(arch, Activation::erf(), WeightDist::Gaussian, 7);
  const auto b = sample_teacher(arch, Activation::erf(), WeightDist::Gaussian, 7);
  const auto c = sample_teacher(arch, Activation::erf(), WeightDist::Gaussian, 8);
  CHECK(a.w1 == b.w1);
  CHECK(a.w2 == b.w2);
  CHECK(a.w1 != c.w1);
}

TEST_CASE("teacher weight variance matches 1/N_prev") {
  const Architecture arch(10, 20);
  for (auto dist : {WeightDist::Gaussian, WeightDist::Uniform, WeightDist::Rademacher}) {
    double s = 0, s2 = 0;
    long n = 0;
    for (int rep = 0; rep < 50; ++rep) {  // 50 * 200 = 1e4 w1 entries
      const auto net = sample_teacher(arch, Activation::linear(), dist, 100 + rep);
      s += net.w1.sum();
      s2 += net.w1.squaredNorm();
      n += net.w1.size();
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    INFO("dist " << to_string(dist));
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == Catch::Approx(0.1).epsilon(0.05));
  }
}

TEST_CASE("rademacher entries take exactly the two scaled values") {
  const Architecture arch(4, 3);
  const auto net = sample_teacher(arch, Activation::linear(), WeightDist::Rademacher, 5);
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 4; ++n)
      CHECK(std::abs(net.w1(m, n)) == Catch::Approx(0.5).margin(1e-15));
  std::set<double> seen(net.w1.data(), net.w1.data() + net.w1.size());
  CHECK(seen.size() == 2);
}

TEST_CASE("forward basics") {
  const Architecture arch(1, 1);
  Eigen::MatrixXd w1(1, 1);
  w1 << 2.0;
  Eigen::RowVectorXd w2(1);
  w2 << 3.0;
  const TwoLayerNet net(arch, w1, w2, Activation::linear());
  Eigen::VectorXd x(1);
  x << 1.0;
  const auto r = forward(net, x);
  CHECK(r.y == Catch::Approx(6.0));
  CHECK(r.z(0) == Catch::Approx(2.0));
  CHECK(r.h(0) == Catch::Approx(2.0));

  // no biases: zero input maps to zero everywhere
  const auto lin = sample_teacher(Architecture(4, 3), Activation::linear(),
                                  WeightDist::Gaussian, 1);
  const auto r0 = forward(lin, Eigen::VectorXd::Zero(4));
  CHECK(r0.y == 0.0);
  CHECK(r0.z.norm() == 0.0);
  CHECK(r0.h.norm() == 0.0);

  CHECK_THROWS_AS(forward(net, Eigen::VectorXd::Zero(3)), usage_error);
}

TEST_CASE("erf unit with zero w1 row emits zero") {
  const Architecture arch(3, 2);
  auto net = sample_teacher(arch, Activation::erf(), WeightDist::Gaussian, 2);
  Eigen::MatrixXd w1 = net.w1;
  w1.row(1).setZero();
  const TwoLayerNet patched(arch, w1, net.w2, net.activation);
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd x(3);
    for (int i = 0; i < 3; ++i) x(i) = rng.normal();
    CHECK(forward(patched, x).h(1) == 0.0);
  }
}

TEST_CASE("activation_eval examples") {
  const auto lin = activation_eval(Activation::linear(), 7.0);
  CHECK(lin.g == 7.0);
  CHECK(lin.g1 == 1.0);
  CHECK(lin.g2 == 0.0);

  const auto quad = activation_eval(Activation::quadratic(1.0), 2.0);
  CHECK(quad.g == Catch::Approx(6.0));
  CHECK(quad.g1 == Catch::Approx(5.0));
  CHECK(quad.g2 == Catch::Approx(2.0));

  const auto erf0 = activation_eval(Activation::erf(), 0.0);
  CHECK(erf0.g == 0.0);
  CHECK(erf0.g1 == Catch::Approx(std::sqrt(2.0 / M_PI)));
  CHECK(erf0.g2 == 0.0);

  // polynomial path against the quadratic closed form
  const auto poly = activation_eval(Activation::polynomial({1.0, 1.0}), 2.0);
  CHECK(poly.g == Catch::Approx(6.0));
  CHECK(poly.g1 == Catch::Approx(5.0));
  CHECK(poly.g2 == Catch::Approx(2.0));
}

TEST_CASE("activation derivatives agree with central differences") {
  const double h = 1e-5;
  for (const auto& act :
       {Activation::linear(), Activation::quadratic(0.7), Activation::erf(),
        Activation::polynomial({0.5, -1.0, 0.25})}) {
    for (double x = -3.0; x <= 3.0; x += 0.25) {
      const auto e = act(x);
      const double g1_fd = (act(x + h).g - act(x - h).g) / (2 * h);
      const double g2_fd = (act(x + h).g1 - act(x - h).g1) / (2 * h);
      CHECK(std::abs(e.g1 - g1_fd) < 10.0 * h * h + 1e-10);
      CHECK(std::abs(e.g2 - g2_fd) < 10.0 * h * h + 1e-10);
    }
  }
}

TEST_CASE("forward is linear in w2") {
  const Architecture arch(5, 4);
  const auto base = sample_teacher(arch, Activation::erf(), WeightDist::Gaussian, 11);
  Rng rng(12);
  Eigen::RowVectorXd u(4), v(4);
  for (int i = 0; i < 4; ++i) {
    u(i) = rng.normal();
    v(i) = rng.normal();
  }
  const double a = 1.7, b = -0.4;
  Eigen::VectorXd x(5);
  for (int i = 0; i < 5; ++i) x(i) = rng.normal();
  const TwoLayerNet nu(arch, base.w1, u, base.activation);
  const TwoLayerNet nv(arch, base.w1, v, base.activation);
  const TwoLayerNet nc(arch, base.w1, a * u + b * v, base.activation);
  CHECK(forward(nc, x).y ==
        Catch::Approx(a * forward(nu, x).y + b * forward(nv, x).y).margin(1e-12));
}

TEST_CASE("erf hidden units stay inside (-1, 1)") {
  const auto net = sample_teacher(Architecture(6, 5), Activation::erf(),
                                  WeightDist::Gaussian, 3);
  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    Eigen::VectorXd x(6);
    for (int i = 0; i < 6; ++i) x(i) = 3.0 * rng.normal();
    const auto r = forward(net, x);
    // std::erf rounds to exactly 1.0 once |z| is large; the open bound is
    // only observable at moderate pre-activations
    CHECK(r.h.cwiseAbs().maxCoeff() <= 1.0);
    if (r.z.cwiseAbs().maxCoeff() < 5.0) CHECK(r.h.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("network json round trip preserves weights exactly") {
  for (const auto& act : {Activation::linear(), Activation::quadratic(0.25),
                          Activation::erf(), Activation::polynomial({1.0, 0.0, 2.0})}) {
    const auto net = sample_teacher(Architecture(3, 2), act, WeightDist::Gaussian, 17);
    const auto j = to_json(net);
    const auto back = net_from_json(j);
    CHECK(back.w1 == net.w1);
    CHECK(back.w2 == net.w2);
    CHECK(back.activation == net.activation);
  }
}

TEST_CASE("architecture validation") {
  CHECK_THROWS_AS(Architecture(0, 3), usage_error);
  CHECK_THROWS_AS(Architecture(3, 0), usage_error);
  CHECK(Architecture(10, 20).param_count() == 220);
}
