#ifndef HESSLAB_SPECTRAL_HPP
#define HESSLAB_SPECTRAL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hesslab/errors.hpp"
#include "hesslab/hessian.hpp"

namespace hesslab {

inline constexpr double default_rank_tol = 1e-8;

/// Full eigenvalue set of a symmetric matrix, ascending, plus the
/// tolerance-based numerical rank.
struct Spectrum {
  Eigen::VectorXd eigenvalues;  // ascending
  int rank = 0;
  double tol_used = 0.0;
};

/// Eigenvalues exceeding tau_rel * max(lambda_max, 1) count toward the rank.
/// The max(.,1) floor keeps the zero matrix at rank 0.
inline int numerical_rank(const Eigen::VectorXd& ascending, double tau_rel,
                          double* tol_out = nullptr) {
  if (!(tau_rel > 0.0)) throw usage_error("numerical_rank: tau_rel must be > 0");
  const double lmax = ascending.size() ? ascending(ascending.size() - 1) : 0.0;
  const double tol = tau_rel * std::max(lmax, 1.0);
  if (tol_out) *tol_out = tol;
  int r = 0;
  for (Eigen::Index i = 0; i < ascending.size(); ++i)
    if (ascending(i) > tol) ++r;
  return r;
}

inline int numerical_rank(const Spectrum& s, double tau_rel = default_rank_tol) {
  return numerical_rank(s.eigenvalues, tau_rel);
}

inline Spectrum eig_sym(const Eigen::MatrixXd& H, double tau_rel = default_rank_tol) {
  if (H.rows() != H.cols()) throw usage_error("eig_sym: matrix must be square");
  if (!H.allFinite()) throw usage_error("eig_sym: matrix must be finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw numeric_error("eig_sym: eigensolver did not converge");
  Spectrum s;
  s.eigenvalues = es.eigenvalues();
  s.rank = numerical_rank(s.eigenvalues, tau_rel, &s.tol_used);
  return s;
}

inline Spectrum eig_sym(const HessianMatrix& H, double tau_rel = default_rank_tol) {
  return eig_sym(H.matrix(), tau_rel);
}

/// Eigenvalues plus the orthogonal eigenvector matrix (columns match the
/// ascending eigenvalue order).
struct EigenSystem {
  Spectrum spectrum;
  Eigen::MatrixXd vectors;
};

inline EigenSystem eig_sym_vectors(const Eigen::MatrixXd& H,
                                   double tau_rel = default_rank_tol) {
  if (H.rows() != H.cols()) throw usage_error("eig_sym_vectors: matrix must be square");
  if (!H.allFinite()) throw usage_error("eig_sym_vectors: matrix must be finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success)
    throw numeric_error("eig_sym_vectors: eigensolver did not converge");
  EigenSystem r;
  r.spectrum.eigenvalues = es.eigenvalues();
  r.spectrum.rank = numerical_rank(r.spectrum.eigenvalues, tau_rel, &r.spectrum.tol_used);
  r.vectors = es.eigenvectors();
  return r;
}

// --- histograms ---------------------------------------------------------------

struct BinningRule {
  enum class Kind { FreedmanDiaconis, FixedCount, LogSpaced };
  Kind kind = Kind::FreedmanDiaconis;
  int count = 50;  // used by FixedCount and LogSpaced

  static BinningRule freedman_diaconis() { return {}; }
  static BinningRule fixed(int n) { return {Kind::FixedCount, n}; }
  static BinningRule log_spaced(int n) { return {Kind::LogSpaced, n}; }
};

struct SpectralDensity {
  std::vector<double> bin_edges;  // size counts.size()+1, ascending
  std::vector<long> counts;
  bool normalized = false;

  /// count / (n * width) when normalized, raw counts otherwise.
  std::vector<double> densities() const {
    std::vector<double> d(counts.size());
    long n = 0;
    for (long c : counts) n += c;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double w = bin_edges[i + 1] - bin_edges[i];
      d[i] = normalized ? static_cast<double>(counts[i]) / (static_cast<double>(n) * w)
                        : static_cast<double>(counts[i]);
    }
    return d;
  }
};

inline SpectralDensity spectral_histogram(std::vector<double> values,
                                          BinningRule rule = {},
                                          bool normalized = true) {
  if (values.empty()) throw usage_error("spectral_histogram: empty input");
  std::sort(values.begin(), values.end());
  const double lo = values.front(), hi = values.back();
  const std::size_t n = values.size();

  SpectralDensity out;
  out.normalized = normalized;

  if (rule.kind == BinningRule::Kind::LogSpaced) {
    if (!(lo > 0.0))
      throw usage_error("spectral_histogram: log-spaced bins need positive values");
    const int nb = std::max(rule.count, 1);
    const double la = std::log10(lo), lb = std::log10(hi > lo ? hi : lo * 1.0001);
    out.bin_edges.resize(nb + 1);
    for (int i = 0; i <= nb; ++i)
      out.bin_edges[i] = std::pow(10.0, la + (lb - la) * i / nb);
  } else {
    int nb;
    if (hi == lo) {
      out.bin_edges = {lo - 0.5, hi + 0.5};
      out.counts = {static_cast<long>(n)};
      return out;
    }
    if (rule.kind == BinningRule::Kind::FixedCount) {
      nb = std::max(rule.count, 1);
    } else {
      // Freedman-Diaconis: width = 2 IQR n^(-1/3)
      const double q1 = values[static_cast<std::size_t>(0.25 * (n - 1))];
      const double q3 = values[static_cast<std::size_t>(0.75 * (n - 1))];
      const double iqr = q3 - q1;
      const double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
      nb = width > 0.0 ? static_cast<int>(std::ceil((hi - lo) / width)) : 1;
      nb = std::clamp(nb, 1, 100000);
    }
    out.bin_edges.resize(nb + 1);
    for (int i = 0; i <= nb; ++i) out.bin_edges[i] = lo + (hi - lo) * i / nb;
  }

  const int nb = static_cast<int>(out.bin_edges.size()) - 1;
  out.counts.assign(nb, 0);
  for (double v : values) {
    auto it = std::upper_bound(out.bin_edges.begin(), out.bin_edges.end(), v);
    int idx = static_cast<int>(it - out.bin_edges.begin()) - 1;
    idx = std::clamp(idx, 0, nb - 1);
    ++out.counts[static_cast<std::size_t>(idx)];
  }
  return out;
}

// --- goodness of fit ------------------------------------------------------------

/// Sup distance between the empirical CDF of the samples and the given CDF.
inline double ks_distance(std::vector<double> samples,
                          const std::function<double(double)>& cdf) {
  if (samples.empty()) throw usage_error("ks_distance: empty sample set");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::max(f - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - f));
  }
  return d;
}

/// Right-continuous empirical CDF; usable as the reference in ks_distance.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
    if (sorted_.empty()) throw usage_error("EmpiricalCdf: empty sample set");
    std::sort(sorted_.begin(), sorted_.end());
  }
  double operator()(double x) const {
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
  }

 private:
  std::vector<double> sorted_;
};

}  // namespace hesslab

#endif
