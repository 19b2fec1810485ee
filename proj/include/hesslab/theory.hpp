#ifndef HESSLAB_THEORY_HPP
#define HESSLAB_THEORY_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "hesslab/errors.hpp"
#include "hesslab/hessian_analytic.hpp"
#include "hesslab/net.hpp"
#include "hesslab/rng.hpp"
#include "hesslab/spectral.hpp"

// Closed-form predictions for the nonzero Hessian eigenvalues of linear
// teachers, plus the effective-parameter formulas for polynomial activations.
//
// For Gaussian teachers the two diagonal blocks contribute independently:
//  * the W1-W1 block is (w2^T w2) (x) I with single nonzero eigenvalue
//    |w2|^2 ~ (1/N_h) chi^2_{N_h}  (multiplicity N_i),
//  * the W2-W2 block is W1 W1^T, whose nonzero eigenvalues asymptotically
//    follow a Marchenko-Pastur law with ratio N_h/N_i, unit scale
//    (entries have variance 1/N_i, so the diagonal is ~1), support
//    (1 +- sqrt(ratio))^2.
// Each nonzero Hessian eigenvalue is a block-eigenvalue sum, so the pooled
// law is the convolution of the two when N_i <= N_h, and a
// (N_i-N_h)/N_i vs N_h/N_i mixture of pure chi^2 and the convolution when
// N_i > N_h (the kernel of W1 contributes pure-|w2|^2 eigenvalues).

namespace hesslab {

class TheoreticalSpectrum {
 public:
  enum class Kind { Chi2Scaled, MpScaled, Convolution, Mixture };

  /// Law of (1/df) chi^2_df: mean 1, variance 2/df.
  static TheoreticalSpectrum chi2_scaled(int df) {
    if (df < 1) throw usage_error("chi2_scaled: df must be >= 1");
    TheoreticalSpectrum t;
    t.kind_ = Kind::Chi2Scaled;
    t.df_ = df;
    boost::math::chi_squared dist(static_cast<double>(df));
    t.hi_ = boost::math::quantile(dist, 1.0 - 1e-12) / df;
    return t;
  }

  /// Law of a nonzero eigenvalue of W1 W1^T for iid entries of variance
  /// 1/n_in: Marchenko-Pastur, ratio = n_hidden/n_in, support
  /// [(1-sqrt(ratio))^2, (1+sqrt(ratio))^2]. For ratio > 1 the density is
  /// renormalized over the nonzero part (the matrix is rank n_in).
  static TheoreticalSpectrum mp_scaled(int n_in, int n_hidden) {
    if (n_in < 1 || n_hidden < 1) throw usage_error("mp_scaled: sizes must be >= 1");
    TheoreticalSpectrum t;
    t.kind_ = Kind::MpScaled;
    t.n_in_ = n_in;
    t.n_hidden_ = n_hidden;
    t.ratio_ = static_cast<double>(n_hidden) / n_in;
    const double sq = std::sqrt(t.ratio_);
    t.lo_ = (1.0 - sq) * (1.0 - sq);
    t.hi_ = (1.0 + sq) * (1.0 + sq);
    t.mult_ = t.ratio_ > 1.0 ? t.ratio_ : 1.0;
    t.build_mp_cdf_grid();
    return t;
  }

  /// Sum of independent chi2_scaled(n_hidden) and mp_scaled(n_in, n_hidden)
  /// draws; pdf/cdf by quadrature over the MP support.
  static TheoreticalSpectrum convolution(int n_in, int n_hidden) {
    TheoreticalSpectrum t;
    t.kind_ = Kind::Convolution;
    t.n_in_ = n_in;
    t.n_hidden_ = n_hidden;
    t.chi2_ = std::make_shared<TheoreticalSpectrum>(chi2_scaled(n_hidden));
    t.mp_ = std::make_shared<TheoreticalSpectrum>(mp_scaled(n_in, n_hidden));
    t.lo_ = t.mp_->lo_;
    t.hi_ = t.mp_->hi_ + t.chi2_->hi_;
    t.build_conv_cdf_grid();
    return t;
  }

  /// Predicted law of a pooled nonzero Hessian eigenvalue of a Gaussian
  /// linear teacher: convolution when n_in <= n_hidden, else the
  /// (n_in-n_hidden)/n_in : n_hidden/n_in mixture of pure chi^2 and the
  /// convolution.
  static TheoreticalSpectrum linear_spectrum_prediction(int n_in, int n_hidden) {
    if (n_in <= n_hidden) return convolution(n_in, n_hidden);
    TheoreticalSpectrum t;
    t.kind_ = Kind::Mixture;
    t.n_in_ = n_in;
    t.n_hidden_ = n_hidden;
    t.weight_chi2_ = static_cast<double>(n_in - n_hidden) / n_in;
    t.chi2_ = std::make_shared<TheoreticalSpectrum>(chi2_scaled(n_hidden));
    t.conv_ = std::make_shared<TheoreticalSpectrum>(convolution(n_in, n_hidden));
    t.lo_ = 0.0;
    t.hi_ = t.conv_->hi_;
    return t;
  }

  Kind kind() const { return kind_; }
  int df() const { return df_; }
  double weight_chi2() const { return weight_chi2_; }
  double support_lo() const { return lo_; }
  /// Effective upper end (1e-12 tail mass) for unbounded components.
  double support_hi() const { return hi_; }

  double pdf(double x) const {
    switch (kind_) {
      case Kind::Chi2Scaled: {
        if (x <= 0.0) return 0.0;
        boost::math::chi_squared dist(static_cast<double>(df_));
        return df_ * boost::math::pdf(dist, df_ * x);
      }
      case Kind::MpScaled:
        return mp_pdf(x);
      case Kind::Convolution: {
        // integral of mp_pdf(u) chi2_pdf(x-u) du in the edge-regular variable
        // u(theta) = 1 + ratio - 2 sqrt(ratio) cos(theta)
        if (x <= lo_) return 0.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < theta_nodes_.size(); ++i) {
          const double dx = x - theta_nodes_[i];
          if (dx > 0.0) acc += theta_weights_[i] * chi2_->pdf(dx);
        }
        return acc;
      }
      case Kind::Mixture:
        return weight_chi2_ * chi2_->pdf(x) + (1.0 - weight_chi2_) * conv_->pdf(x);
    }
    return 0.0;
  }

  double cdf(double x) const {
    switch (kind_) {
      case Kind::Chi2Scaled: {
        if (x <= 0.0) return 0.0;
        boost::math::chi_squared dist(static_cast<double>(df_));
        return boost::math::cdf(dist, df_ * x);
      }
      case Kind::MpScaled: {
        if (x <= lo_) return 0.0;
        if (x >= hi_) return 1.0;
        // invert u(theta), interpolate the cumulative on the uniform theta grid
        const double c = (1.0 + ratio_ - x) / (2.0 * std::sqrt(ratio_));
        const double theta = std::acos(std::clamp(c, -1.0, 1.0));
        const double pos = theta / 3.14159265358979323846 *
                           static_cast<double>(cdf_grid_.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        if (i + 1 >= cdf_grid_.size()) return cdf_grid_.back();
        const double frac = pos - static_cast<double>(i);
        return cdf_grid_[i] + frac * (cdf_grid_[i + 1] - cdf_grid_[i]);
      }
      case Kind::Convolution: {
        if (x <= lo_) return 0.0;
        if (x >= hi_) return 1.0;
        const double pos = (x - lo_) / (hi_ - lo_) *
                           static_cast<double>(cdf_grid_.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        if (i + 1 >= cdf_grid_.size()) return 1.0;
        const double frac = pos - static_cast<double>(i);
        return cdf_grid_[i] + frac * (cdf_grid_[i + 1] - cdf_grid_[i]);
      }
      case Kind::Mixture:
        return weight_chi2_ * chi2_->cdf(x) + (1.0 - weight_chi2_) * conv_->cdf(x);
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (kind_) {
      case Kind::Chi2Scaled:
        return 2.0 * rng.gamma(0.5 * df_) / df_;
      case Kind::MpScaled:
        return sample_mp(rng);
      case Kind::Convolution:
        return chi2_->sample(rng) + mp_->sample(rng);
      case Kind::Mixture:
        return rng.uniform01() < weight_chi2_ ? chi2_->sample(rng) : conv_->sample(rng);
    }
    return 0.0;
  }

  /// n iid draws from a substream derived from (seed, "theory-sampler").
  std::vector<double> sample_many(std::int64_t n, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "theory-sampler"));
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = sample(rng);
    return out;
  }

  std::string name() const {
    switch (kind_) {
      case Kind::Chi2Scaled:
        return "chi2_scaled";
      case Kind::MpScaled:
        return "mp_scaled";
      case Kind::Convolution:
        return "convolution";
      case Kind::Mixture:
        return "mixture";
    }
    return "?";
  }

 private:
  TheoreticalSpectrum() = default;

  double mp_pdf(double x) const {
    if (x <= lo_ || x >= hi_) return 0.0;
    return mult_ * std::sqrt((hi_ - x) * (x - lo_)) /
           (2.0 * 3.14159265358979323846 * ratio_ * x);
  }

  // cumulative of the MP density on a uniform theta grid; the substitution
  // u = 1 + ratio - 2 sqrt(ratio) cos(theta) regularizes the edges (and the
  // x^{-1/2} singularity at ratio == 1)
  void build_mp_cdf_grid() {
    const int n = 4097;
    const double pi = 3.14159265358979323846;
    theta_nodes_.resize(n);
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) {
      const double th = pi * i / (n - 1);
      const double u = 1.0 + ratio_ - 2.0 * std::sqrt(ratio_) * std::cos(th);
      theta_nodes_[i] = u;
      const double s2 = std::sin(th) * std::sin(th);
      // sin^2/u is finite at theta=0 even when u->0 (ratio==1): ->1? handle 0/0
      g[i] = u > 0.0 ? mult_ * (2.0 / pi) * s2 / u : mult_ * (2.0 / pi);
    }
    cdf_grid_.assign(n, 0.0);
    const double dth = pi / (n - 1);
    for (int i = 1; i < n; ++i)
      cdf_grid_[i] = cdf_grid_[i - 1] + 0.5 * dth * (g[i - 1] + g[i]);
    const double total = cdf_grid_.back();
    for (auto& v : cdf_grid_) v /= total;
    // rejection envelope over the pdf for ratio != 1
    pdf_max_ = 0.0;
    for (int i = 0; i < n; ++i) pdf_max_ = std::max(pdf_max_, mp_pdf(theta_nodes_[i]));
    pdf_max_ *= 1.02;
  }

  void build_conv_cdf_grid() {
    // quadrature nodes/weights over the MP support in the theta variable
    const int nq = 1025;
    const double pi = 3.14159265358979323846;
    const double ratio = mp_->ratio_, mult = mp_->mult_;
    theta_nodes_.resize(nq);
    theta_weights_.resize(nq);
    const double dth = pi / (nq - 1);
    for (int i = 0; i < nq; ++i) {
      const double th = pi * i / (nq - 1);
      const double u = 1.0 + ratio - 2.0 * std::sqrt(ratio) * std::cos(th);
      const double s2 = std::sin(th) * std::sin(th);
      double g = u > 0.0 ? mult * (2.0 / pi) * s2 / u : mult * (2.0 / pi);
      theta_nodes_[i] = u;
      theta_weights_[i] = g * dth * (i == 0 || i == nq - 1 ? 0.5 : 1.0);
    }
    const int n = 4096;
    cdf_grid_.assign(n, 0.0);
    boost::math::chi_squared dist(static_cast<double>(chi2_->df_));
    for (int i = 0; i < n; ++i) {
      const double x = lo_ + (hi_ - lo_) * i / (n - 1);
      double acc = 0.0;
      for (int q = 0; q < nq; ++q) {
        const double dx = x - theta_nodes_[q];
        if (dx > 0.0) acc += theta_weights_[q] * boost::math::cdf(dist, chi2_->df_ * dx);
      }
      cdf_grid_[static_cast<std::size_t>(i)] = std::min(acc, 1.0);
    }
  }

  double sample_mp(Rng& rng) const {
    if (ratio_ == 1.0) {
      // quarter-circle law of the singular value; eigenvalue is its square
      for (;;) {
        const double s = rng.uniform(0.0, 2.0);
        const double u = rng.uniform(0.0, 2.0 / 3.14159265358979323846);
        if (u * u <= (4.0 - s * s) / 9.869604401089358) return s * s;
      }
    }
    for (;;) {
      const double x = rng.uniform(lo_, hi_);
      const double u = rng.uniform(0.0, pdf_max_);
      if (u <= mp_pdf(x)) return x;
    }
  }

  Kind kind_ = Kind::Chi2Scaled;
  int df_ = 0;
  int n_in_ = 0, n_hidden_ = 0;
  double ratio_ = 0.0, mult_ = 1.0;
  double lo_ = 0.0, hi_ = 0.0;
  double weight_chi2_ = 0.0;
  double pdf_max_ = 0.0;
  std::shared_ptr<const TheoreticalSpectrum> chi2_, mp_, conv_;
  std::vector<double> theta_nodes_, theta_weights_;
  std::vector<double> cdf_grid_;
};

inline TheoreticalSpectrum chi2_scaled(int df) { return TheoreticalSpectrum::chi2_scaled(df); }
inline TheoreticalSpectrum mp_scaled(int n_in, int n_hidden) {
  return TheoreticalSpectrum::mp_scaled(n_in, n_hidden);
}
inline TheoreticalSpectrum linear_spectrum_prediction(int n_in, int n_hidden) {
  return TheoreticalSpectrum::linear_spectrum_prediction(n_in, n_hidden);
}

// --- effective parameter counting ------------------------------------------------

namespace detail {

inline std::uint64_t binomial_checked(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  if (k > n - k) k = n - k;
  unsigned __int128 r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;  // exact: the running value is C(n-k+i, i)
    if (r > static_cast<unsigned __int128>(UINT64_MAX))
      throw numeric_error("binomial_checked: result exceeds 64 bits");
  }
  return static_cast<std::uint64_t>(r);
}

}  // namespace detail

/// Independent components of a symmetric tensor of the given order over
/// n_in dimensions: C(n_in + order - 1, order).
inline std::int64_t symmetric_tensor_components(int order, int n_in) {
  if (order < 1 || n_in < 1)
    throw usage_error("symmetric_tensor_components: order and n_in must be >= 1");
  return static_cast<std::int64_t>(
      detail::binomial_checked(static_cast<std::uint64_t>(n_in) + order - 1, order));
}

/// Upper bound on the Hessian rank for a degree-n polynomial activation:
/// sum_k C(n_in+k-1, k) = C(n_in+n, n) - 1 (hockey-stick identity).
inline std::int64_t poly_rank_upper_bound(int degree, int n_in) {
  if (degree < 1 || n_in < 1)
    throw usage_error("poly_rank_upper_bound: degree and n_in must be >= 1");
  return static_cast<std::int64_t>(
             detail::binomial_checked(static_cast<std::uint64_t>(n_in) + degree, degree)) -
         1;
}

struct EffectiveParamReport {
  std::int64_t n_eff_predicted = 0;
  std::int64_t rank_observed = -1;  // fill in after measuring
  std::string activation;
  int n_in = 0, n_hidden = 0;
  int nu = 0;                     // n_in - n_hidden
  bool upper_bound_only = false;  // polynomial: prediction is only a bound
  bool empirical_claim = false;   // erf: full rank is an observation
};

/// Predicted Hessian rank at the optimum. Linear: n_in. Quadratic:
/// n_in + n_in(n_in+1)/2 - (nu^2+3nu)/2 for nu = n_in - n_hidden > 0.
/// Erf: full rank D (empirical). Polynomial: only the degree-n upper bound.
inline EffectiveParamReport effective_params(const Activation& kind,
                                             const Architecture& arch) {
  EffectiveParamReport r;
  r.activation = kind.name();
  r.n_in = arch.n_in;
  r.n_hidden = arch.n_hidden;
  r.nu = arch.n_in - arch.n_hidden;
  const std::int64_t ni = arch.n_in;
  switch (kind.kind()) {
    case ActKind::Linear:
      r.n_eff_predicted = ni;
      break;
    case ActKind::Quadratic: {
      const std::int64_t nu = r.nu;
      r.n_eff_predicted = ni + ni * (ni + 1) / 2;
      if (nu > 0) r.n_eff_predicted -= (nu * nu + 3 * nu) / 2;
      break;
    }
    case ActKind::Erf:
      r.n_eff_predicted = arch.param_count();
      r.empirical_claim = true;
      break;
    case ActKind::Polynomial:
      r.n_eff_predicted = poly_rank_upper_bound(kind.degree(), arch.n_in);
      r.upper_bound_only = true;
      break;
  }
  return r;
}

inline nlohmann::json to_json(const EffectiveParamReport& r) {
  return nlohmann::json{{"n_eff_predicted", r.n_eff_predicted},
                        {"rank_observed", r.rank_observed},
                        {"activation", r.activation},
                        {"arch", {{"n_in", r.n_in}, {"n_hidden", r.n_hidden}}},
                        {"nu", r.nu},
                        {"upper_bound_only", r.upper_bound_only},
                        {"empirical_claim", r.empirical_claim}};
}

// --- linear block eigenstructure ---------------------------------------------------

/// Residual report for the constructed eigenvectors of a linear Hessian.
/// For each nonzero singular value sqrt(l1) of W1 with singular pair (z', z),
/// y = [w2^T (x) z', sqrt(l1) z] satisfies H y = (l1 + l2) y with
/// l2 = |w2|^2; kernel vectors z' of W1 give y = [w2^T (x) z', 0] with
/// eigenvalue l2. That yields exactly n_in independent eigenvectors.
struct BlockEigReport {
  std::vector<double> eigenvalues;  // constructed l1 + l2, sum type first
  std::vector<double> residuals;    // |H y - lambda y| / |y|
  int n_sum_type = 0;
  int n_kernel_type = 0;
  double lambda2 = 0.0;  // |w2|^2
  double max_residual = 0.0;
  bool independent = false;  // the n_in constructed vectors span rank n_in
};

inline BlockEigReport verify_block_eigenstructure(const TwoLayerNet& net) {
  if (net.activation.kind() != ActKind::Linear)
    throw usage_error("verify_block_eigenstructure: activation must be linear");
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  const int d = net.arch.param_count();
  const HessianMatrix H = hessian_linear(net);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(net.w1,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double sv_tol = (sv.size() ? sv(0) : 0.0) * 1e-12;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > sv_tol) ++r;

  BlockEigReport rep;
  rep.lambda2 = net.w2.squaredNorm();
  rep.n_sum_type = r;
  rep.n_kernel_type = ni - r;

  Eigen::MatrixXd Y(d, ni);
  auto push = [&](const Eigen::VectorXd& zp, double s, const Eigen::VectorXd& z,
                  int col) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(d);
    for (int m = 0; m < nh; ++m)
      y.segment(static_cast<Eigen::Index>(m) * ni, ni) = net.w2(m) * zp;
    if (s > 0.0) y.tail(nh) = s * z;
    const double lambda = rep.lambda2 + s * s;
    const double res = (H.matrix() * y - lambda * y).norm() / y.norm();
    rep.eigenvalues.push_back(lambda);
    rep.residuals.push_back(res);
    rep.max_residual = std::max(rep.max_residual, res);
    Y.col(col) = y / y.norm();
  };

  for (int i = 0; i < r; ++i) push(svd.matrixV().col(i), sv(i), svd.matrixU().col(i), i);
  for (int i = r; i < ni; ++i)
    push(svd.matrixV().col(i), 0.0, Eigen::VectorXd::Zero(nh), i);

  Eigen::JacobiSVD<Eigen::MatrixXd> ysvd(Y);
  rep.independent = ysvd.singularValues().minCoeff() > 1e-8;
  return rep;
}

}  // namespace hesslab

#endif
