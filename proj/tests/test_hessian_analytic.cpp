#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hesslab/hessian_analytic.hpp"
#include "hesslab/hessian_empirical.hpp"
#include "hesslab/quadrature.hpp"
#include "hesslab/spectral.hpp"

using namespace hesslab;

namespace {

// Test-side oracle: central second differences of the EXACT generalization
// loss of a linear net, L(theta) = 0.5 |w2 w1 - w2* w1*|^2 (E[xx^T] = I
// collapses the Gaussian integral). Truncation error is O(h^2).
Eigen::MatrixXd fd_hessian_exact_linear(const TwoLayerNet& net, double h) {
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  const int s = ni * nh, d = net.arch.param_count();
  const Eigen::RowVectorXd target = net.w2 * net.w1;
  Eigen::MatrixXd w1 = net.w1;
  Eigen::RowVectorXd w2 = net.w2;
  auto param = [&](int p) -> double& { return p < s ? w1(p / ni, p % ni) : w2(p - s); };
  auto loss = [&]() { return 0.5 * (w2 * w1 - target).squaredNorm(); };

  Eigen::MatrixXd H(d, d);
  for (int i = 0; i < d; ++i) {
    double& ti = param(i);
    const double t0 = ti;
    ti = t0 + h;
    const double lp = loss();
    ti = t0 - h;
    const double lm = loss();
    ti = t0;
    H(i, i) = (lp + lm) / (h * h);  // loss at the optimum is exactly 0
    for (int j = 0; j < i; ++j) {
      double& tj = param(j);
      const double u0 = tj;
      ti = t0 + h; tj = u0 + h;
      const double lpp = loss();
      tj = u0 - h;
      const double lpm = loss();
      ti = t0 - h; tj = u0 + h;
      const double lmp = loss();
      tj = u0 - h;
      const double lmm = loss();
      ti = t0; tj = u0;
      H(i, j) = H(j, i) = (lpp - lpm - lmp + lmm) / (4 * h * h);
    }
  }
  return H;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("linear hessian, one input one hidden unit") {
  const Architecture arch(1, 1);
  const double w = 1.3, v = -0.7;
  Eigen::MatrixXd w1(1, 1);
  w1 << w;
  Eigen::RowVectorXd w2(1);
  w2 << v;
  const TwoLayerNet net(arch, w1, w2, Activation::linear());
  const auto H = hessian_linear(net);
  CHECK(H.matrix()(0, 0) == Catch::Approx(v * v));
  CHECK(H.matrix()(0, 1) == Catch::Approx(w * v));
  CHECK(H.matrix()(1, 1) == Catch::Approx(w * w));

  const auto s = eig_sym(H);
  CHECK(s.eigenvalues(0) == Catch::Approx(0.0).margin(1e-14));
  CHECK(s.eigenvalues(1) == Catch::Approx(v * v + w * w));
}

TEST_CASE("linear hessian with zero w2 keeps only the B block") {
  const auto base = sample_teacher(Architecture(4, 3), Activation::linear(),
                                   WeightDist::Gaussian, 21);
  const TwoLayerNet net(base.arch, base.w1, Eigen::RowVectorXd::Zero(3), base.activation);
  const auto H = hessian_linear(net);
  CHECK(max_abs(H.block_a()) == 0.0);
  CHECK(max_abs(H.block_c()) == 0.0);
  CHECK(max_abs(Eigen::MatrixXd(H.block_b()) - net.w1 * net.w1.transpose()) == 0.0);
}

TEST_CASE("linear hessian matches exact-loss finite differences") {
  const auto net = sample_teacher(Architecture(10, 20), Activation::linear(),
                                  WeightDist::Gaussian, 33);
  const auto H = hessian_linear(net);
  const auto Hfd = fd_hessian_exact_linear(net, 1e-4);
  CHECK(max_abs(H.matrix() - Hfd) < 1e-6);
}

TEST_CASE("linear A block is (w2^T w2) kron I") {
  const auto net = sample_teacher(Architecture(3, 4), Activation::linear(),
                                  WeightDist::Gaussian, 8);
  const auto H = hessian_linear(net);
  const int ni = 3, nh = 4;
  for (int m = 0; m < nh; ++m)
    for (int p = 0; p < nh; ++p)
      for (int n = 0; n < ni; ++n)
        for (int q = 0; q < ni; ++q) {
          const double expect = n == q ? net.w2(m) * net.w2(p) : 0.0;
          CHECK(H.matrix()(m * ni + n, p * ni + q) == expect);
        }
}

TEST_CASE("quadratic hessian at eps=0 is bitwise the linear one") {
  const auto lin = sample_teacher(Architecture(5, 4), Activation::linear(),
                                  WeightDist::Gaussian, 13);
  const TwoLayerNet quad(lin.arch, lin.w1, lin.w2, Activation::quadratic(0.0));
  CHECK(hessian_quadratic(quad).matrix() == hessian_linear(lin).matrix());
}

TEST_CASE("quadratic hessian, scalar case B entry") {
  const double w = 0.9, v = 1.1, eps = 0.8;
  Eigen::MatrixXd w1(1, 1);
  w1 << w;
  Eigen::RowVectorXd w2(1);
  w2 << v;
  const TwoLayerNet net(Architecture(1, 1), w1, w2, Activation::quadratic(eps));
  const auto H = hessian_quadratic(net);
  CHECK(H.matrix()(1, 1) ==
        Catch::Approx(w * w + 3.0 * eps * eps * std::pow(w, 4)).epsilon(1e-14));
}

TEST_CASE("quadratic hessian agrees with the MC oracle") {
  const auto net = sample_teacher(Architecture(4, 4), Activation::quadratic(1.0),
                                  WeightDist::Gaussian, 71);
  const auto H = hessian_quadratic(net);
  const auto rep = validate_analytic_vs_mc(net, H, 200000, 71, 2);
  INFO("max_abs_dev=" << rep.max_abs_dev
                      << " frac_outside=" << rep.frac_outside_4se);
  CHECK(rep.pass);
}

TEST_CASE("erf B diagonal matches 1-d Gaussian quadrature of E[g(z)^2]") {
  for (const double S : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    const double analytic =
        (2.0 / M_PI) * std::atan(S / std::sqrt(1.0 + 2.0 * S));
    const double sd = std::sqrt(S);
    const double quad = integrate(
        [&](double z) {
          const double g = std::erf(z / std::sqrt(2.0));
          return g * g * std::exp(-0.5 * z * z / S) / (sd * std::sqrt(2.0 * M_PI));
        },
        -12.0 * sd, 12.0 * sd, 1e-12);
    CHECK(analytic == Catch::Approx(quad).epsilon(1e-8));
  }
}

TEST_CASE("erf hessian with a zero w1 row zeroes that B row") {
  const auto base = sample_teacher(Architecture(3, 3), Activation::erf(),
                                   WeightDist::Gaussian, 14);
  Eigen::MatrixXd w1 = base.w1;
  w1.row(1).setZero();
  const TwoLayerNet net(base.arch, w1, base.w2, base.activation);
  const auto H = hessian_erf(net);
  const Eigen::MatrixXd B = H.block_b();
  for (int j = 0; j < 3; ++j) CHECK(B(1, j) == 0.0);
}

TEST_CASE("erf hessian agrees with the MC oracle") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::erf(),
                                  WeightDist::Gaussian, 55);
  const auto H = hessian_erf(net);
  const auto rep = validate_analytic_vs_mc(net, H, 200000, 55, 2);
  INFO("max_abs_dev=" << rep.max_abs_dev
                      << " frac_outside=" << rep.frac_outside_4se);
  CHECK(rep.pass);
}

TEST_CASE("erf tilted covariance matches MC moments") {
  // Sigma check in isolation: E[g'(z_m) g'(z_p) x_n x_q] should equal
  // (2/pi) Sigma[n,q] / sqrt(det) for every row pair.
  const auto net = sample_teacher(Architecture(3, 2), Activation::erf(),
                                  WeightDist::Gaussian, 91);
  const int M = 400000;
  Rng rng(derive_seed(91, "sigma-mc"));
  for (int m = 0; m < 2; ++m)
    for (int p = 0; p <= m; ++p) {
      Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(3, 3);
      Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(3, 3);
      Eigen::VectorXd x(3);
      for (int s = 0; s < M; ++s) {
        for (int i = 0; i < 3; ++i) x(i) = rng.normal();
        const Eigen::VectorXd z = net.w1 * x;
        const double w = net.activation(z(m)).g1 * net.activation(z(p)).g1;
        for (int n = 0; n < 3; ++n)
          for (int q = 0; q < 3; ++q) {
            const double t = w * x(n) * x(q);
            mean(n, q) += t;
            m2(n, q) += t * t;
          }
      }
      mean /= M;
      const detail::ErfTiltedCovariance cov(net.w1, m, p);
      for (int n = 0; n < 3; ++n)
        for (int q = 0; q < 3; ++q) {
          const double var = m2(n, q) / M - mean(n, q) * mean(n, q);
          const double se = std::sqrt(var / M);
          const double expect = (2.0 / M_PI) * cov(n, q) / std::sqrt(cov.det);
          INFO("m=" << m << " p=" << p << " n=" << n << " q=" << q);
          CHECK(std::abs(mean(n, q) - expect) < 5.0 * se + 1e-12);
        }
    }
}

TEST_CASE("analytic hessians are symmetric and PSD at the optimum") {
  const std::vector<Activation> acts = {Activation::linear(), Activation::quadratic(0.5),
                                        Activation::erf()};
  int seed = 100;
  for (const auto& act : acts) {
    for (auto arch : {Architecture(3, 5), Architecture(5, 3), Architecture(4, 4)}) {
      const auto net = sample_teacher(arch, act, WeightDist::Gaussian, seed++);
      const auto H = hessian_analytic(net);
      CHECK(max_abs(H.matrix() - H.matrix().transpose()) == 0.0);
      const auto s = eig_sym(H);
      const double lmax = s.eigenvalues(s.eigenvalues.size() - 1);
      CHECK(s.eigenvalues(0) >= -1e-10 * std::max(1.0, lmax));
    }
  }
}

TEST_CASE("linear hessian has rank n_in for gaussian teachers") {
  const auto net = sample_teacher(Architecture(10, 20), Activation::linear(),
                                  WeightDist::Gaussian, 5);
  CHECK(eig_sym(hessian_linear(net)).rank == 10);
}

TEST_CASE("activation dispatch errors") {
  const auto lin = sample_teacher(Architecture(2, 2), Activation::linear(),
                                  WeightDist::Gaussian, 1);
  CHECK_THROWS_AS(hessian_quadratic(lin), usage_error);
  CHECK_THROWS_AS(hessian_erf(lin), usage_error);
  const auto poly = sample_teacher(Architecture(2, 2), Activation::polynomial({1.0, 1.0, 1.0}),
                                   WeightDist::Gaussian, 1);
  CHECK_THROWS_AS(hessian_analytic(poly), usage_error);
  CHECK_THROWS_AS(hessian_linear(poly), usage_error);
}
