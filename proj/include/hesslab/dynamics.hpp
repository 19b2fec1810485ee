#ifndef HESSLAB_DYNAMICS_HPP
#define HESSLAB_DYNAMICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hesslab/errors.hpp"
#include "hesslab/net.hpp"
#include "hesslab/rng.hpp"
#include "hesslab/spectral.hpp"

// Near-optimum learning dynamics: perturb the student, train by plain SGD on
// fresh Gaussian minibatches, and compare against the eigenvalue decay law
// L(t) = (sigma0^2/2) sum_i lambda_i exp(-2 lambda_i t) with t = steps * lr.

namespace hesslab {

/// Student = teacher + iid N(0, sigma0^2) on every parameter.
inline TwoLayerNet perturb(const TwoLayerNet& teacher, double sigma0, std::uint64_t seed) {
  if (!(sigma0 > 0.0)) throw usage_error("perturb: sigma0 must be > 0");
  Rng rng(derive_seed(seed, "perturb"));
  Eigen::MatrixXd w1 = teacher.w1;
  Eigen::RowVectorXd w2 = teacher.w2;
  for (int m = 0; m < teacher.arch.n_hidden; ++m)
    for (int n = 0; n < teacher.arch.n_in; ++n) w1(m, n) += sigma0 * rng.normal();
  for (int k = 0; k < teacher.arch.n_hidden; ++k) w2(k) += sigma0 * rng.normal();
  return TwoLayerNet(teacher.arch, std::move(w1), std::move(w2), teacher.activation);
}

/// Exact generalization error of a linear student against a linear teacher:
/// E_x[ (w2 w1 x - w2* w1* x)^2 ] / 2 = |w2 w1 - w2* w1*|^2 / 2.
inline double linear_generalization_loss(const TwoLayerNet& student,
                                         const TwoLayerNet& teacher) {
  if (student.activation.kind() != ActKind::Linear ||
      teacher.activation.kind() != ActKind::Linear)
    throw usage_error("linear_generalization_loss: both nets must be linear");
  return 0.5 * (student.w2 * student.w1 - teacher.w2 * teacher.w1).squaredNorm();
}

struct LossTrajectory {
  std::vector<double> times;   // t = step * lr
  std::vector<double> losses;
  struct Meta {
    double lr = 0.0;
    int batch = 0;
    double sigma0 = 0.0;
    std::uint64_t seed = 0;
  } meta;
};

/// Plain SGD (explicit Euler on the minibatch MSE) with fresh Gaussian inputs
/// each step. The recorded loss is the exact generalization error for linear
/// nets, otherwise the empirical loss on a fixed held-out batch of 10^4
/// samples. Records at step 0, every record_every steps, and the final step.
inline LossTrajectory sgd_train(TwoLayerNet student, const TwoLayerNet& teacher,
                                double lr, int batch, int steps, int record_every,
                                std::uint64_t seed,
                                std::optional<double> lambda_max_hint = std::nullopt) {
  if (!(lr > 0.0)) throw usage_error("sgd_train: lr must be > 0");
  if (batch < 1 || steps < 0 || record_every < 1)
    throw usage_error("sgd_train: batch >= 1, steps >= 0, record_every >= 1 required");
  if (!(student.arch == teacher.arch) || !(student.activation == teacher.activation))
    throw usage_error("sgd_train: student and teacher must share architecture");
  if (lambda_max_hint && lr >= 1.0 / *lambda_max_hint)
    std::cerr << "[hesslab] sgd_train: lr=" << lr << " >= 1/lambda_max="
              << 1.0 / *lambda_max_hint << ", updates may diverge\n";

  const int ni = student.arch.n_in, nh = student.arch.n_hidden;
  const bool exact_linear = student.activation.kind() == ActKind::Linear;

  Eigen::MatrixXd Xeval;
  Eigen::VectorXd yeval;
  if (!exact_linear) {
    const int n_eval = 10000;
    Rng erng(derive_seed(seed, "sgd-eval"));
    Xeval.resize(n_eval, ni);
    for (int i = 0; i < n_eval; ++i)
      for (int j = 0; j < ni; ++j) Xeval(i, j) = erng.normal();
    yeval = forward_batch(teacher, Xeval);
  }
  auto loss_now = [&]() {
    if (exact_linear) return linear_generalization_loss(student, teacher);
    const Eigen::VectorXd y = forward_batch(student, Xeval);
    return (y - yeval).squaredNorm() / (2.0 * static_cast<double>(Xeval.rows()));
  };

  LossTrajectory traj;
  traj.meta = {lr, batch, 0.0, seed};
  double initial = loss_now();
  traj.times.push_back(0.0);
  traj.losses.push_back(initial);

  Rng brng(derive_seed(seed, "sgd-batch"));
  Eigen::MatrixXd X(batch, ni), G1(batch, nh);
  for (int step = 1; step <= steps; ++step) {
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < ni; ++j) X(i, j) = brng.normal();
    // forward with derivative bookkeeping
    Eigen::MatrixXd Z = X * student.w1.transpose();
    Eigen::MatrixXd Hm(batch, nh);
    for (int i = 0; i < batch; ++i)
      for (int k = 0; k < nh; ++k) {
        const auto e = student.activation(Z(i, k));
        Hm(i, k) = e.g;
        G1(i, k) = e.g1;
      }
    const Eigen::VectorXd y = Hm * student.w2.transpose();
    const Eigen::VectorXd resid = y - forward_batch(teacher, X);
    const double inv_b = 1.0 / static_cast<double>(batch);
    // dL/dW2[k] = mean_i resid_i h_ik ; dL/dW1[m][n] = mean_i resid_i w2[m] g'(z_im) x_in
    const Eigen::RowVectorXd grad_w2 = inv_b * (resid.transpose() * Hm);
    Eigen::MatrixXd T = G1;
    for (int k = 0; k < nh; ++k) T.col(k) = T.col(k).cwiseProduct(resid) * student.w2(k);
    const Eigen::MatrixXd grad_w1 = inv_b * (T.transpose() * X);
    student.w1 -= lr * grad_w1;
    student.w2 -= lr * grad_w2;

    if (step % record_every == 0 || step == steps) {
      const double l = loss_now();
      if (!std::isfinite(l) || l > 1e6 * std::max(initial, 1e-300))
        throw numeric_error("sgd_train: diverged at step " + std::to_string(step) +
                            " (loss=" + std::to_string(l) + ", initial=" +
                            std::to_string(initial) + "); lower lr");
      traj.times.push_back(step * lr);
      traj.losses.push_back(l);
    }
  }
  return traj;
}

/// Gradient-flow prediction L(t) = (sigma0^2/2) sum_i lambda_i e^{-2 lambda_i t}.
/// Small negative eigenvalues (>= -1e-10 * max(1, lambda_max)) are clipped to 0.
inline std::vector<double> predicted_loss_curve(const Spectrum& spectrum, double sigma0,
                                                const std::vector<double>& times) {
  const auto& ev = spectrum.eigenvalues;
  const double lmax = ev.size() ? ev(ev.size() - 1) : 0.0;
  const double tol = 1e-10 * std::max(1.0, lmax);
  std::vector<double> lam;
  lam.reserve(static_cast<std::size_t>(ev.size()));
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol)
      throw usage_error("predicted_loss_curve: spectrum has a negative eigenvalue");
    lam.push_back(std::max(ev(i), 0.0));
  }
  std::vector<double> out(times.size());
  const double a = 0.5 * sigma0 * sigma0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    double s = 0.0;
    for (double l : lam) s += l * std::exp(-2.0 * l * times[i]);
    out[i] = a * s;
  }
  return out;
}

struct TailFit {
  double rate = 0.0;       // L ~ amplitude * exp(-rate * t)
  double amplitude = 0.0;
};

/// Least-squares line on (t, log L) over the final window_frac of the
/// trajectory. Records after the loss stops decaying (relative jump > 30%
/// between consecutive records) are treated as noise floor and dropped.
inline TailFit fit_tail_rate(const LossTrajectory& traj, double window_frac = 0.25) {
  if (!(window_frac > 0.0 && window_frac <= 0.5))
    throw usage_error("fit_tail_rate: window_frac must be in (0, 0.5]");
  if (traj.times.size() != traj.losses.size() || traj.times.size() < 2)
    throw usage_error("fit_tail_rate: trajectory too short");

  std::size_t end = traj.losses.size();
  for (std::size_t i = 1; i < traj.losses.size(); ++i) {
    if (traj.losses[i] > 1.3 * traj.losses[i - 1]) {
      end = i;
      break;
    }
  }
  const std::size_t count = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(window_frac * static_cast<double>(end))));
  if (count > end) throw usage_error("fit_tail_rate: window larger than usable trajectory");
  const std::size_t begin = end - count;

  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = begin; i < end; ++i) {
    if (!(traj.losses[i] > 0.0))
      throw usage_error("fit_tail_rate: non-positive loss in fit window; shrink the "
                        "window or raise the noise floor");
    const double t = traj.times[i], l = std::log(traj.losses[i]);
    st += t;
    sl += l;
    stt += t * t;
    stl += t * l;
  }
  const double n = static_cast<double>(count);
  const double denom = n * stt - st * st;
  if (denom == 0.0) throw usage_error("fit_tail_rate: degenerate time grid");
  const double slope = (n * stl - st * sl) / denom;
  const double intercept = (sl - slope * st) / n;
  return TailFit{-slope, std::exp(intercept)};
}

inline nlohmann::json fit_report_json(const TailFit& fit, double two_lambda_min) {
  const double rel = std::abs(fit.rate - two_lambda_min) / two_lambda_min;
  return nlohmann::json{
      {"rate", fit.rate}, {"two_lambda_min", two_lambda_min}, {"rel_err", rel}};
}

}  // namespace hesslab

#endif
