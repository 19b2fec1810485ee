#ifndef HESSLAB_NET_HPP
#define HESSLAB_NET_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "hesslab/activation.hpp"
#include "hesslab/errors.hpp"
#include "hesslab/rng.hpp"

namespace hesslab {

/// Two-layer shape: n_in inputs, n_hidden hidden units, one linear output.
struct Architecture {
  int n_in = 1;
  int n_hidden = 1;

  Architecture(int ni, int nh) : n_in(ni), n_hidden(nh) {
    if (ni < 1 || nh < 1)
      throw usage_error("Architecture: n_in and n_hidden must be >= 1");
  }

  /// Total trainable parameter count D = (n_in + 1) * n_hidden.
  int param_count() const { return (n_in + 1) * n_hidden; }

  bool operator==(const Architecture& o) const {
    return n_in == o.n_in && n_hidden == o.n_hidden;
  }
};

enum class WeightDist { Gaussian, Uniform, Rademacher };

inline std::string to_string(WeightDist d) {
  switch (d) {
    case WeightDist::Gaussian:
      return "gaussian";
    case WeightDist::Uniform:
      return "uniform";
    case WeightDist::Rademacher:
      return "rademacher";
  }
  return "?";
}

/// y = W2 g(W1 x); no biases, scalar output. Treated as immutable once built.
struct TwoLayerNet {
  Architecture arch;
  Eigen::MatrixXd w1;       // n_hidden x n_in
  Eigen::RowVectorXd w2;    // 1 x n_hidden
  Activation activation;

  TwoLayerNet(Architecture a, Eigen::MatrixXd w1_in, Eigen::RowVectorXd w2_in,
              Activation act)
      : arch(a), w1(std::move(w1_in)), w2(std::move(w2_in)), activation(std::move(act)) {
    if (w1.rows() != arch.n_hidden || w1.cols() != arch.n_in)
      throw usage_error("TwoLayerNet: w1 must be n_hidden x n_in");
    if (w2.size() != arch.n_hidden)
      throw usage_error("TwoLayerNet: w2 must have n_hidden entries");
    if (!w1.allFinite() || !w2.allFinite())
      throw usage_error("TwoLayerNet: weights must be finite");
  }
};

namespace detail {

/// One weight with mean 0 and variance 1/n_prev.
inline double draw_weight(Rng& rng, WeightDist dist, int n_prev) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_prev));
  switch (dist) {
    case WeightDist::Gaussian:
      return scale * rng.normal();
    case WeightDist::Uniform:
      // [-sqrt(3/n), sqrt(3/n)] has variance 1/n exactly
      return rng.uniform(-scale * 1.7320508075688772935274463415059,
                         scale * 1.7320508075688772935274463415059);
    case WeightDist::Rademacher:
      return (rng.next_u64() & 1u) ? scale : -scale;
  }
  return 0.0;
}

}  // namespace detail

/// Random teacher: w1 entries iid with variance 1/n_in, w2 entries iid with
/// variance 1/n_hidden. Deterministic in (arch, kind, dist, seed); the two
/// layers use independent derived substreams.
inline TwoLayerNet sample_teacher(const Architecture& arch, const Activation& kind,
                                  WeightDist dist, std::uint64_t seed) {
  Rng rng1(derive_seed(seed, "teacher-w1"));
  Rng rng2(derive_seed(seed, "teacher-w2"));
  Eigen::MatrixXd w1(arch.n_hidden, arch.n_in);
  for (int m = 0; m < arch.n_hidden; ++m)
    for (int n = 0; n < arch.n_in; ++n) w1(m, n) = detail::draw_weight(rng1, dist, arch.n_in);
  Eigen::RowVectorXd w2(arch.n_hidden);
  for (int k = 0; k < arch.n_hidden; ++k) w2(k) = detail::draw_weight(rng2, dist, arch.n_hidden);
  return TwoLayerNet(arch, std::move(w1), std::move(w2), kind);
}

struct ForwardResult {
  double y;           // network output
  Eigen::VectorXd z;  // pre-activations W1 x
  Eigen::VectorXd h;  // hidden vector g(z)
};

inline ForwardResult forward(const TwoLayerNet& net, const Eigen::VectorXd& x) {
  if (x.size() != net.arch.n_in)
    throw usage_error("forward: input has wrong dimension");
  ForwardResult r;
  r.z = net.w1 * x;
  r.h.resize(net.arch.n_hidden);
  for (int k = 0; k < net.arch.n_hidden; ++k) r.h(k) = net.activation.value(r.z(k));
  r.y = net.w2 * r.h;
  return r;
}

/// Batched outputs for inputs given as rows of X (rows = samples).
inline Eigen::VectorXd forward_batch(const TwoLayerNet& net, const Eigen::MatrixXd& X) {
  if (X.cols() != net.arch.n_in)
    throw usage_error("forward_batch: input has wrong dimension");
  Eigen::MatrixXd Z = X * net.w1.transpose();
  for (int i = 0; i < Z.rows(); ++i)
    for (int k = 0; k < Z.cols(); ++k) Z(i, k) = net.activation.value(Z(i, k));
  return Z * net.w2.transpose();
}

// --- JSON serialization -----------------------------------------------------
// w1 is stored row-major; that order is normative because it fixes the
// Hessian parameter layout (see hessian.hpp).

inline nlohmann::json to_json(const Activation& a) {
  nlohmann::json j;
  j["kind"] = a.name();
  if (a.kind() == ActKind::Quadratic) j["eps"] = a.eps();
  if (a.kind() == ActKind::Polynomial) j["coeffs"] = a.coeffs();
  return j;
}

inline Activation activation_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return Activation::linear();
  if (kind == "quadratic") return Activation::quadratic(j.at("eps").get<double>());
  if (kind == "erf") return Activation::erf();
  if (kind == "polynomial")
    return Activation::polynomial(j.at("coeffs").get<std::vector<double>>());
  throw usage_error("unknown activation kind: " + kind);
}

inline nlohmann::json to_json(const TwoLayerNet& net) {
  nlohmann::json j;
  j["n_in"] = net.arch.n_in;
  j["n_hidden"] = net.arch.n_hidden;
  j["activation"] = to_json(net.activation);
  std::vector<double> w1(static_cast<std::size_t>(net.arch.n_hidden) * net.arch.n_in);
  for (int m = 0; m < net.arch.n_hidden; ++m)
    for (int n = 0; n < net.arch.n_in; ++n)
      w1[static_cast<std::size_t>(m) * net.arch.n_in + n] = net.w1(m, n);
  j["w1"] = w1;
  j["w2"] = std::vector<double>(net.w2.data(), net.w2.data() + net.w2.size());
  return j;
}

inline TwoLayerNet net_from_json(const nlohmann::json& j) {
  const Architecture arch(j.at("n_in").get<int>(), j.at("n_hidden").get<int>());
  const auto w1v = j.at("w1").get<std::vector<double>>();
  const auto w2v = j.at("w2").get<std::vector<double>>();
  if (w1v.size() != static_cast<std::size_t>(arch.n_hidden) * arch.n_in)
    throw usage_error("net_from_json: w1 has wrong length");
  if (w2v.size() != static_cast<std::size_t>(arch.n_hidden))
    throw usage_error("net_from_json: w2 has wrong length");
  Eigen::MatrixXd w1(arch.n_hidden, arch.n_in);
  for (int m = 0; m < arch.n_hidden; ++m)
    for (int n = 0; n < arch.n_in; ++n)
      w1(m, n) = w1v[static_cast<std::size_t>(m) * arch.n_in + n];
  Eigen::RowVectorXd w2 = Eigen::Map<const Eigen::RowVectorXd>(w2v.data(), arch.n_hidden);
  return TwoLayerNet(arch, std::move(w1), std::move(w2), activation_from_json(j.at("activation")));
}

}  // namespace hesslab

#endif
