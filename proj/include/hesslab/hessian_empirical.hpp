#ifndef HESSLAB_HESSIAN_EMPIRICAL_HPP
#define HESSLAB_HESSIAN_EMPIRICAL_HPP

#include <Eigen/Dense>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hesslab/errors.hpp"
#include "hesslab/hessian.hpp"
#include "hesslab/net.hpp"
#include "hesslab/rng.hpp"

// Formula-independent estimators of the Hessian at the optimum. All of them
// reduce to the same object: the Gram matrix E_x[grad_theta y  grad_theta y^T]
// of output gradients under standard-normal inputs, since the residual terms
// vanish at student = teacher.

namespace hesslab {

inline constexpr int mc_default_chunk = 65536;

/// Monte-Carlo mean with per-entry standard errors of the mean.
struct McEstimate {
  HessianMatrix mean;
  Eigen::MatrixXd stderr_;  // same shape as mean
  std::int64_t samples;
};

namespace detail {

struct ChunkSums {
  Eigen::MatrixXd sum;    // sum of g g^T          (lower triangle filled)
  Eigen::MatrixXd sumsq;  // sum of (g.^2)(g.^2)^T (lower triangle filled)
};

inline void kahan_add(Eigen::MatrixXd& acc, Eigen::MatrixXd& comp,
                      const Eigen::MatrixXd& delta) {
  // compensated elementwise accumulation; entry magnitudes span several
  // orders once M gets large
  Eigen::ArrayXXd y = delta.array() - comp.array();
  Eigen::ArrayXXd t = acc.array() + y;
  comp = ((t - acc.array()) - y).matrix();
  acc = t.matrix();
}

/// Runs compute(chunk) for chunk = 0..n_chunks-1 on `threads` workers and
/// merges results strictly in chunk order, so the reduction is bit-identical
/// for any thread count. In-flight chunks are bounded to limit memory.
inline void ordered_chunk_reduce(std::int64_t n_chunks, int threads,
                                 const std::function<ChunkSums(std::int64_t)>& compute,
                                 const std::function<void(const ChunkSums&)>& merge) {
  if (threads <= 1 || n_chunks <= 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) merge(compute(c));
    return;
  }
  const std::int64_t window = 2 * threads + 2;
  std::mutex mu;
  std::condition_variable cv_space, cv_ready;
  std::map<std::int64_t, ChunkSums> ready;
  std::int64_t next = 0, merged = 0;

  auto worker = [&] {
    for (;;) {
      std::int64_t c;
      {
        std::unique_lock lk(mu);
        cv_space.wait(lk, [&] { return next >= n_chunks || next - merged < window; });
        if (next >= n_chunks) return;
        c = next++;
      }
      ChunkSums cs = compute(c);
      {
        std::lock_guard lk(mu);
        ready.emplace(c, std::move(cs));
      }
      cv_ready.notify_all();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);

  while (merged < n_chunks) {
    ChunkSums cs;
    {
      std::unique_lock lk(mu);
      cv_ready.wait(lk, [&] { return ready.count(merged) > 0; });
      auto node = ready.extract(merged);
      cs = std::move(node.mapped());
    }
    merge(cs);
    {
      std::lock_guard lk(mu);
      ++merged;
    }
    cv_space.notify_all();
  }
  for (auto& t : pool) t.join();
}

/// Gradient of the network output w.r.t. all parameters, laid out per
/// HessianMatrix: dy/dW1[m][n] = w2[m] g'(z_m) x_n, dy/dW2[k] = g(z_k).
inline void output_gradient(const TwoLayerNet& net, const Eigen::VectorXd& x,
                            Eigen::VectorXd& z, Eigen::VectorXd& grad) {
  const int ni = net.arch.n_in, nh = net.arch.n_hidden;
  z.noalias() = net.w1 * x;
  for (int m = 0; m < nh; ++m) {
    const auto e = net.activation(z(m));
    grad.segment(static_cast<Eigen::Index>(m) * ni, ni) = (net.w2(m) * e.g1) * x;
    grad(static_cast<Eigen::Index>(ni) * nh + m) = e.g;
  }
}

struct GramSums {
  Eigen::MatrixXd sum, sumsq;
  std::int64_t samples;
};

/// Shared accumulation core. grad_fn fills the per-sample gradient vector;
/// inputs are drawn chunk by chunk from substreams keyed on (seed, chunk), so
/// any estimator fed the same (seed, chunk) sees the identical sample stream.
template <typename GradFn>
GramSums gram_sums(const TwoLayerNet& net, std::int64_t samples, std::uint64_t seed,
                   GradFn&& grad_fn, int threads, int chunk) {
  if (samples < 1) throw usage_error("gram_sums: need at least one sample");
  if (chunk < 1) throw usage_error("gram_sums: chunk must be >= 1");
  const int d = net.arch.param_count();
  const int ni = net.arch.n_in;
  const std::int64_t n_chunks = (samples + chunk - 1) / chunk;
  if (threads <= 0)
    threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;

  auto compute = [&](std::int64_t c) {
    ChunkSums cs{Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d)};
    Rng rng(derive_seed(seed, "mc-input", static_cast<std::uint64_t>(c)));
    const std::int64_t lo = c * static_cast<std::int64_t>(chunk);
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, samples);
    Eigen::VectorXd x(ni), z(net.arch.n_hidden), g(d);
    for (std::int64_t s = lo; s < hi; ++s) {
      for (int i = 0; i < ni; ++i) x(i) = rng.normal();
      grad_fn(net, x, z, g);
      cs.sum.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0);
      cs.sumsq.selfadjointView<Eigen::Lower>().rankUpdate(g.cwiseProduct(g), 1.0);
    }
    return cs;
  };

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d), sum_c = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(d, d), sumsq_c = Eigen::MatrixXd::Zero(d, d);
  ordered_chunk_reduce(
      n_chunks, threads, compute,
      [&](const ChunkSums& cs) {
        kahan_add(sum, sum_c, cs.sum);
        kahan_add(sumsq, sumsq_c, cs.sumsq);
      });

  return {std::move(sum), std::move(sumsq), samples};
}

inline McEstimate finalize_gram(const TwoLayerNet& net, GramSums&& gs) {
  const int d = net.arch.param_count();
  const double m = static_cast<double>(gs.samples);
  gs.sum.triangularView<Eigen::StrictlyUpper>() =
      gs.sum.triangularView<Eigen::StrictlyLower>().transpose();
  gs.sumsq.triangularView<Eigen::StrictlyUpper>() =
      gs.sumsq.triangularView<Eigen::StrictlyLower>().transpose();
  Eigen::MatrixXd mean = gs.sum / m;
  Eigen::MatrixXd se(d, d);
  if (gs.samples >= 2) {
    Eigen::ArrayXXd var =
        (gs.sumsq.array() / m - mean.array().square()) * (m / (m - 1.0));
    se = (var.max(0.0) / m).sqrt().matrix();
  } else {
    se.setZero();
  }
  return McEstimate{HessianMatrix(net.arch, std::move(mean)), std::move(se), gs.samples};
}

/// M >= 1 variant without the M >= 2 public precondition (single-sample Gram
/// matrices are rank <= 1; handy for internal checks).
inline McEstimate gram_mean(const TwoLayerNet& net, std::int64_t samples,
                            std::uint64_t seed, int threads = 0,
                            int chunk = mc_default_chunk) {
  return finalize_gram(net, gram_sums(net, samples, seed, output_gradient, threads, chunk));
}

}  // namespace detail

/// Monte-Carlo average of the outer-product Hessian terms evaluated at the
/// teacher's weights: B = <h_k h_j>, A = <w2m w2p g'(z_m) g'(z_p) x_n x_q>,
/// C = <h_k w2m g'(z_m) x_n>. Returns mean and per-entry standard error.
inline McEstimate outer_product_hessian_mc(const TwoLayerNet& net, std::int64_t samples,
                                           std::uint64_t seed, int threads = 0,
                                           int chunk = mc_default_chunk) {
  if (samples < 2) throw usage_error("outer_product_hessian_mc: need M >= 2");
  return detail::gram_mean(net, samples, seed, threads, chunk);
}

/// Empirical Fisher information matrix, E_x[grad f grad f^T]. The same
/// algebraic quantity as outer_product_hessian_mc; given the same seed and
/// chunking it consumes the identical input stream and must agree to machine
/// precision. The gradient here is assembled entry by entry.
inline McEstimate empirical_fim(const TwoLayerNet& net, std::int64_t samples,
                                std::uint64_t seed, int threads = 0,
                                int chunk = mc_default_chunk) {
  if (samples < 2) throw usage_error("empirical_fim: need M >= 2");
  auto grad_fn = [](const TwoLayerNet& nt, const Eigen::VectorXd& x,
                    Eigen::VectorXd& z, Eigen::VectorXd& grad) {
    const int ni = nt.arch.n_in, nh = nt.arch.n_hidden;
    z.noalias() = nt.w1 * x;
    for (int m = 0; m < nh; ++m) {
      const auto e = nt.activation(z(m));
      const double c = nt.w2(m) * e.g1;
      for (int n = 0; n < ni; ++n) grad(static_cast<Eigen::Index>(m) * ni + n) = c * x(n);
      grad(static_cast<Eigen::Index>(ni) * nh + m) = e.g;
    }
  };
  return detail::finalize_gram(net, detail::gram_sums(net, samples, seed, grad_fn, threads, chunk));
}

namespace detail {

inline Eigen::MatrixXd mc_input_matrix(int n_in, std::int64_t samples, std::uint64_t seed,
                                       int chunk) {
  Eigen::MatrixXd X(samples, n_in);
  const std::int64_t n_chunks = (samples + chunk - 1) / chunk;
  for (std::int64_t c = 0; c < n_chunks; ++c) {
    Rng rng(derive_seed(seed, "mc-input", static_cast<std::uint64_t>(c)));
    const std::int64_t lo = c * static_cast<std::int64_t>(chunk);
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, samples);
    for (std::int64_t s = lo; s < hi; ++s)
      for (int i = 0; i < n_in; ++i) X(s, i) = rng.normal();
  }
  return X;
}

}  // namespace detail

/// Central second differences of the empirical loss
///   Lhat(theta) = 1/(2M) sum_i (y_i(theta) - y*_i)^2
/// around theta = teacher parameters, with the same M inputs reused for every
/// perturbed evaluation (common random numbers). The sample stream matches
/// outer_product_hessian_mc for equal (seed, chunk).
inline HessianMatrix finite_diff_hessian(const TwoLayerNet& teacher, double h,
                                         std::int64_t samples, std::uint64_t seed,
                                         int chunk = mc_default_chunk) {
  if (!(h >= 1e-6 && h <= 1e-2))
    throw usage_error("finite_diff_hessian: h must lie in [1e-6, 1e-2]");
  if (samples < 1) throw usage_error("finite_diff_hessian: need M >= 1");
  const int ni = teacher.arch.n_in, nh = teacher.arch.n_hidden;
  const int s = ni * nh, d = teacher.arch.param_count();

  const Eigen::MatrixXd X = detail::mc_input_matrix(ni, samples, seed, chunk);
  const Eigen::VectorXd ystar = forward_batch(teacher, X);

  Eigen::MatrixXd w1 = teacher.w1;
  Eigen::RowVectorXd w2 = teacher.w2;
  auto param = [&](int p) -> double& {
    return p < s ? w1(p / ni, p % ni) : w2(p - s);
  };
  auto loss = [&]() {
    Eigen::MatrixXd Z = X * w1.transpose();
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
      for (int k = 0; k < nh; ++k) Z(i, k) = teacher.activation.value(Z(i, k));
    const Eigen::VectorXd y = Z * w2.transpose();
    return (y - ystar).squaredNorm() / (2.0 * static_cast<double>(samples));
  };

  const double l0 = loss();
  Eigen::MatrixXd H(d, d);
  for (int i = 0; i < d; ++i) {
    double& ti = param(i);
    const double ti0 = ti;
    ti = ti0 + h;
    const double lp = loss();
    ti = ti0 - h;
    const double lm = loss();
    ti = ti0;
    H(i, i) = (lp - 2.0 * l0 + lm) / (h * h);
    for (int j = 0; j < i; ++j) {
      double& tj = param(j);
      const double tj0 = tj;
      ti = ti0 + h; tj = tj0 + h;
      const double lpp = loss();
      tj = tj0 - h;
      const double lpm = loss();
      ti = ti0 - h; tj = tj0 + h;
      const double lmp = loss();
      tj = tj0 - h;
      const double lmm = loss();
      ti = ti0; tj = tj0;
      const double v = (lpp - lpm - lmp + lmm) / (4.0 * h * h);
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  if (!H.allFinite()) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (!std::isfinite(H(i, j)))
          throw numeric_error("finite_diff_hessian: non-finite entry at (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
  }
  return HessianMatrix(teacher.arch, std::move(H));
}

/// Validates an analytic Hessian against the MC oracle: fraction of unique
/// entries outside mean +- 4*stderr must stay at or below 1%.
struct ValidationReport {
  std::string activation;
  int n_in = 0, n_hidden = 0;
  std::int64_t samples = 0;
  double max_abs_dev = 0.0;
  double frac_outside_4se = 0.0;
  bool pass = false;
};

inline ValidationReport validate_against_mc(const HessianMatrix& analytic,
                                            const McEstimate& mc) {
  const int d = analytic.dim();
  if (mc.mean.dim() != d) throw usage_error("validate_against_mc: dimension mismatch");
  ValidationReport r;
  r.n_in = analytic.arch().n_in;
  r.n_hidden = analytic.arch().n_hidden;
  r.samples = mc.samples;
  long outside = 0, total = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      const double dev = std::abs(analytic.matrix()(i, j) - mc.mean.matrix()(i, j));
      r.max_abs_dev = std::max(r.max_abs_dev, dev);
      // exact-zero entries (e.g. w2 = 0) have zero spread; any deviation counts
      const double band = 4.0 * mc.stderr_(i, j);
      if (dev > band && dev > 1e-12) ++outside;
      ++total;
    }
  r.frac_outside_4se = static_cast<double>(outside) / static_cast<double>(total);
  r.pass = r.frac_outside_4se <= 0.01;
  return r;
}

inline ValidationReport validate_analytic_vs_mc(const TwoLayerNet& net,
                                                const HessianMatrix& analytic,
                                                std::int64_t samples, std::uint64_t seed,
                                                int threads = 0) {
  auto mc = outer_product_hessian_mc(net, samples, seed, threads);
  ValidationReport r = validate_against_mc(analytic, mc);
  r.activation = net.activation.name();
  return r;
}

inline nlohmann::json to_json(const ValidationReport& r) {
  return nlohmann::json{{"activation", r.activation},
                        {"arch", {{"n_in", r.n_in}, {"n_hidden", r.n_hidden}}},
                        {"M", r.samples},
                        {"max_abs_dev", r.max_abs_dev},
                        {"frac_entries_outside_4se", r.frac_outside_4se},
                        {"verdict", r.pass ? "pass" : "fail"}};
}

}  // namespace hesslab

#endif
