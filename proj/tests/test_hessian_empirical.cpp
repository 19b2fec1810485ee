#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "hesslab/hessian_analytic.hpp"
#include "hesslab/hessian_empirical.hpp"
#include "hesslab/spectral.hpp"

using namespace hesslab;

namespace {
double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }
}

TEST_CASE("outer product estimator converges to the linear B block") {
  const auto net = sample_teacher(Architecture(4, 3), Activation::linear(),
                                  WeightDist::Gaussian, 7);
  const auto est = outer_product_hessian_mc(net, 200000, 7);
  const Eigen::MatrixXd B = net.w1 * net.w1.transpose();
  const Eigen::MatrixXd Bhat = est.mean.block_b();
  const Eigen::MatrixXd se = est.stderr_.bottomRightCorner(3, 3);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(Bhat(k, j) - B(k, j)) < 4.0 * se(k, j));
}

TEST_CASE("w2 = 0 zeroes the A and C estimates exactly") {
  const auto base = sample_teacher(Architecture(3, 2), Activation::erf(),
                                   WeightDist::Gaussian, 9);
  const TwoLayerNet net(base.arch, base.w1, Eigen::RowVectorXd::Zero(2), base.activation);
  const auto est = outer_product_hessian_mc(net, 5000, 9);
  CHECK(max_abs(est.mean.block_a()) == 0.0);
  CHECK(max_abs(est.mean.block_c()) == 0.0);
}

TEST_CASE("erf oracle run: every entry within 4 standard errors") {
  const auto net = sample_teacher(Architecture(3, 2), Activation::erf(),
                                  WeightDist::Gaussian, 1234);
  const auto H = hessian_erf(net);
  const auto est = outer_product_hessian_mc(net, 1000000, 1234);
  for (int i = 0; i < H.dim(); ++i)
    for (int j = 0; j <= i; ++j) {
      INFO("entry (" << i << "," << j << ")");
      CHECK(std::abs(H.matrix()(i, j) - est.mean.matrix()(i, j)) <=
            4.0 * est.stderr_(i, j) + 1e-12);
    }
}

TEST_CASE("fisher information equals the outer product estimate on shared randomness") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::quadratic(0.7),
                                  WeightDist::Gaussian, 17);
  const auto a = outer_product_hessian_mc(net, 50000, 17);
  const auto b = empirical_fim(net, 50000, 17);
  CHECK(max_abs(a.mean.matrix() - b.mean.matrix()) <= 1e-12);
  CHECK(max_abs(a.stderr_ - b.stderr_) <= 1e-12);
}

TEST_CASE("single-sample gram matrix has rank at most one") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::erf(),
                                  WeightDist::Gaussian, 3);
  const auto est = detail::gram_mean(net, 1, 3);
  CHECK(eig_sym(est.mean).rank <= 1);
  CHECK_THROWS_AS(outer_product_hessian_mc(net, 1, 3), usage_error);
  CHECK_THROWS_AS(empirical_fim(net, 1, 3), usage_error);
}

TEST_CASE("linear FIM numerical rank is n_in") {
  // gradients of a linear net span an n_in-dimensional subspace, so the
  // sampled Gram matrix has exact rank n_in for any M >= n_in
  const auto net = sample_teacher(Architecture(5, 8), Activation::linear(),
                                  WeightDist::Gaussian, 23);
  const auto est = empirical_fim(net, 2000, 23);
  CHECK(eig_sym(est.mean).rank == 5);
}

TEST_CASE("standard errors shrink like 1/sqrt(M)") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::quadratic(1.0),
                                  WeightDist::Gaussian, 29);
  const auto a = outer_product_hessian_mc(net, 100000, 29);
  const auto b = outer_product_hessian_mc(net, 200000, 29);
  std::vector<double> ratios;
  for (int i = 0; i < a.mean.dim(); ++i)
    for (int j = 0; j <= i; ++j)
      if (b.stderr_(i, j) > 0.0) ratios.push_back(a.stderr_(i, j) / b.stderr_(i, j));
  std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
  const double median = ratios[ratios.size() / 2];
  CHECK(median == Catch::Approx(std::sqrt(2.0)).epsilon(0.10));
}

TEST_CASE("gram estimates are exactly symmetric and numerically PSD") {
  const auto net = sample_teacher(Architecture(4, 3), Activation::erf(),
                                  WeightDist::Gaussian, 31);
  const auto est = outer_product_hessian_mc(net, 20000, 31);
  CHECK(max_abs(est.mean.matrix() - est.mean.matrix().transpose()) == 0.0);
  const auto s = eig_sym(est.mean);
  CHECK(s.eigenvalues(0) >=
        -1e-10 * std::max(1.0, s.eigenvalues(s.eigenvalues.size() - 1)));
}

TEST_CASE("chunked reduction is deterministic across thread counts") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::erf(),
                                  WeightDist::Gaussian, 37);
  const auto a = outer_product_hessian_mc(net, 150000, 37, /*threads=*/1, /*chunk=*/8192);
  const auto b = outer_product_hessian_mc(net, 150000, 37, /*threads=*/3, /*chunk=*/8192);
  CHECK(a.mean.matrix() == b.mean.matrix());
  CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("finite differences of the empirical loss match the closed form") {
  const auto net = sample_teacher(Architecture(2, 2), Activation::linear(),
                                  WeightDist::Gaussian, 41);
  const auto H = hessian_linear(net);
  const auto fd = finite_diff_hessian(net, 1e-4, 100000, 41);
  const auto mc = outer_product_hessian_mc(net, 100000, 41);
  for (int i = 0; i < H.dim(); ++i)
    for (int j = 0; j <= i; ++j) {
      const double tol = std::max(1e-3, 4.0 * mc.stderr_(i, j));
      INFO("entry (" << i << "," << j << ")");
      CHECK(std::abs(fd.matrix()(i, j) - H.matrix()(i, j)) < tol);
    }
}

TEST_CASE("finite differences are insensitive to halving h") {
  const auto net = sample_teacher(Architecture(2, 2), Activation::linear(),
                                  WeightDist::Gaussian, 43);
  const auto a = finite_diff_hessian(net, 1e-4, 20000, 43);
  const auto b = finite_diff_hessian(net, 5e-5, 20000, 43);
  for (int i = 0; i < a.dim(); ++i)
    for (int j = 0; j < a.dim(); ++j)
      CHECK(std::abs(a.matrix()(i, j) - b.matrix()(i, j)) <=
            1e-4 * std::max(std::abs(a.matrix()(i, j)), 1e-2));
}

TEST_CASE("finite-difference W1 block equals the sampled A block on shared randomness") {
  // the empirical loss of a linear net is quadratic in W1 alone, so central
  // differences reproduce the per-sample Gram block exactly (up to rounding)
  const auto net = sample_teacher(Architecture(2, 3), Activation::linear(),
                                  WeightDist::Gaussian, 47);
  const auto fd = finite_diff_hessian(net, 1e-4, 30000, 47);
  const auto mc = outer_product_hessian_mc(net, 30000, 47);
  CHECK(max_abs(Eigen::MatrixXd(fd.block_a()) - Eigen::MatrixXd(mc.mean.block_a())) <
        1e-7);
}

TEST_CASE("finite_diff_hessian validates h") {
  const auto net = sample_teacher(Architecture(2, 2), Activation::linear(),
                                  WeightDist::Gaussian, 51);
  CHECK_THROWS_AS(finite_diff_hessian(net, 1e-7, 100, 51), usage_error);
  CHECK_THROWS_AS(finite_diff_hessian(net, 0.1, 100, 51), usage_error);
}

TEST_CASE("validation report json shape") {
  const auto net = sample_teacher(Architecture(3, 3), Activation::quadratic(0.5),
                                  WeightDist::Gaussian, 53);
  const auto rep = validate_analytic_vs_mc(net, hessian_quadratic(net), 100000, 53);
  const auto j = to_json(rep);
  CHECK(j.at("activation") == "quadratic");
  CHECK(j.at("M") == 100000);
  CHECK(j.at("verdict") == "pass");
  CHECK(j.contains("max_abs_dev"));
  CHECK(j.contains("frac_entries_outside_4se"));
}
