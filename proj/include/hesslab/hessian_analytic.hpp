#ifndef HESSLAB_HESSIAN_ANALYTIC_HPP
#define HESSLAB_HESSIAN_ANALYTIC_HPP

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "hesslab/errors.hpp"
#include "hesslab/hessian.hpp"
#include "hesslab/net.hpp"

// Closed-form Hessians of the generalization error at the optimum
// (student = teacher), for standard-normal inputs. Everything below is an
// expectation over x of products of first derivatives of the network output;
// the residual-weighted terms vanish identically at the optimum.

namespace hesslab {

/// Linear activation. Blocks:
///   A[(m,n),(p,q)] = w2[m] w2[p] delta(n,q)     i.e.  (w2^T w2) (x) I_{n_in}
///   B[k,j]         = sum_r w1[k][r] w1[j][r]
///   C[(m,n),k]     = w2[m] w1[k][n]
inline HessianMatrix hessian_linear(const TwoLayerNet& net) {
  if (net.activation.kind() != ActKind::Linear)
    throw usage_error("hessian_linear: activation must be linear");
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  const int s = ni * nh, d = net.arch.param_count();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);

  for (int m = 0; m < nh; ++m)
    for (int p = 0; p <= m; ++p) {
      const double vmp = net.w2(m) * net.w2(p);
      for (int n = 0; n < ni; ++n) {
        H(m * ni + n, p * ni + n) = vmp;
        H(p * ni + n, m * ni + n) = vmp;
      }
    }

  for (int k = 0; k < nh; ++k)
    for (int j = 0; j <= k; ++j) {
      const double b = net.w1.row(k).dot(net.w1.row(j));
      H(s + k, s + j) = b;
      H(s + j, s + k) = b;
    }

  for (int m = 0; m < nh; ++m)
    for (int n = 0; n < ni; ++n)
      for (int k = 0; k < nh; ++k) {
        const double c = net.w2(m) * net.w1(k, n);
        H(m * ni + n, s + k) = c;
        H(s + k, m * ni + n) = c;
      }

  return HessianMatrix(net.arch, std::move(H));
}

/// Quadratic activation g(x) = x + eps x^2. Wick expansion of the Gaussian
/// moments gives, with S = w1 w1^T:
///   B[k,j]         = S_kj + eps^2 (S_kk S_jj + 2 S_kj^2)
///   A[(m,n),(p,q)] = w2[m] w2[p] (delta(n,q) + 4 eps^2 F2)
///   F2             = delta(n,q) S_mp + w1[m][n] w1[p][q] + w1[m][q] w1[p][n]
///   C[(m,n),k]     = w2[m] (w1[k][n] + 2 eps^2 (S_kk w1[m][n] + 2 S_km w1[k][n]))
/// The w2 factors multiply the eps^2 terms as well: every A/C entry is an
/// expectation of a product of two output gradients, each carrying its own w2.
/// At eps = 0 this reduces exactly to hessian_linear.
inline HessianMatrix hessian_quadratic(const TwoLayerNet& net) {
  if (net.activation.kind() != ActKind::Quadratic)
    throw usage_error("hessian_quadratic: activation must be quadratic");
  const double eps = net.activation.eps();
  const double e2 = eps * eps;
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  const int s = ni * nh, d = net.arch.param_count();
  const Eigen::MatrixXd S = net.w1 * net.w1.transpose();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);

  for (int k = 0; k < nh; ++k)
    for (int j = 0; j <= k; ++j) {
      const double b = S(k, j) + e2 * (S(k, k) * S(j, j) + 2.0 * S(k, j) * S(k, j));
      H(s + k, s + j) = b;
      H(s + j, s + k) = b;
    }

  for (int m = 0; m < nh; ++m)
    for (int p = 0; p <= m; ++p) {
      const double vmp = net.w2(m) * net.w2(p);
      for (int n = 0; n < ni; ++n)
        for (int q = 0; q < ni; ++q) {
          double f2 = net.w1(m, n) * net.w1(p, q) + net.w1(m, q) * net.w1(p, n);
          if (n == q) f2 += S(m, p);
          double a = vmp * 4.0 * e2 * f2;
          if (n == q) a += vmp;
          H(m * ni + n, p * ni + q) = a;
          H(p * ni + q, m * ni + n) = a;
        }
    }

  for (int m = 0; m < nh; ++m)
    for (int n = 0; n < ni; ++n)
      for (int k = 0; k < nh; ++k) {
        const double f3 = S(k, k) * net.w1(m, n) + 2.0 * S(k, m) * net.w1(k, n);
        const double c = net.w2(m) * (net.w1(k, n) + 2.0 * e2 * f3);
        H(m * ni + n, s + k) = c;
        H(s + k, m * ni + n) = c;
      }

  return HessianMatrix(net.arch, std::move(H));
}

namespace detail {

/// Covariance of the Gaussian obtained by tilting N(0,I) with
/// g'(z_m) g'(z_p), i.e. Sigma = (I + Wm^T Wm + Wp^T Wp)^{-1}, evaluated via
/// two Sherman-Morrison steps:
///   Sigma = I - Wm^T Wm / (1+a) - (1+a)/det * u u^T,
///   u = Wp^T - (c/(1+a)) Wm^T, a = |Wm|^2, b = |Wp|^2, c = Wm.Wp^T,
///   det = det(I + Wm^T Wm + Wp^T Wp) = (1+a)(1+b) - c^2.
/// All denominators are >= 1, so zero rows are harmless.
struct ErfTiltedCovariance {
  Eigen::VectorXd wm, u;
  double inv1a;     // 1/(1+a)
  double det;       // det(Sigma^{-1})
  double uu_coeff;  // (1+a)/det

  ErfTiltedCovariance(const Eigen::MatrixXd& w1, int m, int p) {
    wm = w1.row(m).transpose();
    const Eigen::VectorXd wp = w1.row(p).transpose();
    const double a = wm.squaredNorm();
    const double b = wp.squaredNorm();
    const double c = wm.dot(wp);
    inv1a = 1.0 / (1.0 + a);
    det = (1.0 + a) * (1.0 + b) - c * c;
    u = wp - (c * inv1a) * wm;
    uu_coeff = (1.0 + a) / det;
  }

  double operator()(int n, int q) const {
    double v = -wm(n) * wm(q) * inv1a - uu_coeff * u(n) * u(q);
    if (n == q) v += 1.0;
    return v;
  }
};

}  // namespace detail

/// Error-function activation g(x) = erf(x/sqrt(2)). The Gaussian integrals
/// close in terms of the tilted covariance above:
///   A[(m,n),(p,q)] = 2 w2[m] w2[p] / (pi sqrt(det)) * Sigma[n,q]
///   B[k,j]         = (2/pi) atan( S_kj / sqrt((1+S_kk)(1+S_jj) - S_kj^2) )
///   C[(m,n),k]     = 2 w2[m] / (pi sqrt(1+a_m))
///                    * (w1[k][n] - S_km w1[m][n]/(1+a_m))
///                    / sqrt(1 + S_kk - S_km^2/(1+a_m))
inline HessianMatrix hessian_erf(const TwoLayerNet& net) {
  if (net.activation.kind() != ActKind::Erf)
    throw usage_error("hessian_erf: activation must be erf");
  constexpr double two_over_pi = 0.63661977236758134307553505349006;
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  const int s = ni * nh, d = net.arch.param_count();
  const Eigen::MatrixXd S = net.w1 * net.w1.transpose();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);

  for (int k = 0; k < nh; ++k)
    for (int j = 0; j <= k; ++j) {
      const double disc =
          (1.0 + S(k, k)) * (1.0 + S(j, j)) - S(k, j) * S(k, j);
      if (!(disc > 0.0) || !std::isfinite(disc))
        throw numeric_error("hessian_erf: non-positive discriminant in B at rows " +
                            std::to_string(k) + "," + std::to_string(j));
      const double b = two_over_pi * std::atan(S(k, j) / std::sqrt(disc));
      H(s + k, s + j) = b;
      H(s + j, s + k) = b;
    }

  for (int m = 0; m < nh; ++m)
    for (int p = 0; p <= m; ++p) {
      const detail::ErfTiltedCovariance cov(net.w1, m, p);
      if (!(cov.det > 0.0) || !std::isfinite(cov.det))
        throw numeric_error("hessian_erf: bad determinant in A at rows " +
                            std::to_string(m) + "," + std::to_string(p));
      const double pref = two_over_pi * net.w2(m) * net.w2(p) / std::sqrt(cov.det);
      for (int n = 0; n < ni; ++n)
        for (int q = 0; q <= n; ++q) {
          const double a = pref * cov(n, q);
          H(m * ni + n, p * ni + q) = a;
          H(p * ni + q, m * ni + n) = a;
          H(m * ni + q, p * ni + n) = a;
          H(p * ni + n, m * ni + q) = a;
        }
    }

  for (int m = 0; m < nh; ++m) {
    const double inv1am = 1.0 / (1.0 + S(m, m));
    for (int k = 0; k < nh; ++k) {
      const double denom = 1.0 + S(k, k) - S(k, m) * S(k, m) * inv1am;
      if (!(denom > 0.0) || !std::isfinite(denom))
        throw numeric_error("hessian_erf: bad variance in C at rows " +
                            std::to_string(m) + "," + std::to_string(k));
      const double pref =
          two_over_pi * net.w2(m) * std::sqrt(inv1am) / std::sqrt(denom);
      for (int n = 0; n < ni; ++n) {
        const double c = pref * (net.w1(k, n) - S(k, m) * net.w1(m, n) * inv1am);
        H(m * ni + n, s + k) = c;
        H(s + k, m * ni + n) = c;
      }
    }
  }

  return HessianMatrix(net.arch, std::move(H));
}

/// Dispatch on the activation; polynomial activations have no closed form
/// here (use the Monte-Carlo estimator instead).
inline HessianMatrix hessian_analytic(const TwoLayerNet& net) {
  switch (net.activation.kind()) {
    case ActKind::Linear:
      return hessian_linear(net);
    case ActKind::Quadratic:
      return hessian_quadratic(net);
    case ActKind::Erf:
      return hessian_erf(net);
    case ActKind::Polynomial:
      throw usage_error("hessian_analytic: no closed form for polynomial activations");
  }
  throw usage_error("hessian_analytic: unknown activation");
}

}  // namespace hesslab

#endif
