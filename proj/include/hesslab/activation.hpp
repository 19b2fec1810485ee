#ifndef HESSLAB_ACTIVATION_HPP
#define HESSLAB_ACTIVATION_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hesslab/errors.hpp"

namespace hesslab {

enum class ActKind { Linear, Quadratic, Erf, Polynomial };

/// Hidden-layer activation g together with g' and g''.
///
/// Supported forms: g(x) = x, g(x) = x + eps*x^2, g(x) = erf(x/sqrt(2)), and
/// general polynomials c1*x + c2*x^2 + ... (no constant term; the networks
/// have no biases, so a constant would be unreachable anyway).
class Activation {
 public:
  struct Eval {
    double g;   // value
    double g1;  // first derivative
    double g2;  // second derivative
  };

  static Activation linear() { return Activation(ActKind::Linear, 0.0, {}); }

  static Activation quadratic(double eps) {
    return Activation(ActKind::Quadratic, eps, {});
  }

  static Activation erf() { return Activation(ActKind::Erf, 0.0, {}); }

  /// coeffs[k] multiplies x^(k+1); at least the linear coefficient required.
  static Activation polynomial(std::vector<double> coeffs) {
    if (coeffs.empty())
      throw usage_error("Activation::polynomial: need at least one coefficient");
    return Activation(ActKind::Polynomial, 0.0, std::move(coeffs));
  }

  ActKind kind() const { return kind_; }
  double eps() const { return eps_; }
  const std::vector<double>& coeffs() const { return coeffs_; }

  int degree() const {
    switch (kind_) {
      case ActKind::Linear:
        return 1;
      case ActKind::Quadratic:
        return eps_ == 0.0 ? 1 : 2;
      case ActKind::Polynomial:
        return static_cast<int>(coeffs_.size());
      case ActKind::Erf:
        throw usage_error("Activation::degree: erf is not polynomial");
    }
    return 0;
  }

  Eval operator()(double x) const {
    switch (kind_) {
      case ActKind::Linear:
        return {x, 1.0, 0.0};
      case ActKind::Quadratic:
        return {x + eps_ * x * x, 1.0 + 2.0 * eps_ * x, 2.0 * eps_};
      case ActKind::Erf: {
        // g(x) = erf(x/sqrt(2)), g'(x) = sqrt(2/pi) exp(-x^2/2), g'' = -x g'
        const double g1 = 0.7978845608028653558798921198687 * std::exp(-0.5 * x * x);
        return {std::erf(x * 0.7071067811865475244008443621048), g1, -x * g1};
      }
      case ActKind::Polynomial: {
        // Horner on p(x) = c1 x + c2 x^2 + ... = x * (c1 + x*(c2 + ...))
        double p = 0.0, dp = 0.0, d2p = 0.0;
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) {
          d2p = d2p * x + 2.0 * dp;
          dp = dp * x + p;
          p = p * x + *it;
        }
        // p currently holds q(x) with g(x) = x*q(x)
        const double g = x * p;
        const double g1 = p + x * dp;
        const double g2 = 2.0 * dp + x * d2p;
        return {g, g1, g2};
      }
    }
    return {0.0, 0.0, 0.0};
  }

  double value(double x) const { return (*this)(x).g; }

  std::string name() const {
    switch (kind_) {
      case ActKind::Linear:
        return "linear";
      case ActKind::Quadratic:
        return "quadratic";
      case ActKind::Erf:
        return "erf";
      case ActKind::Polynomial:
        return "polynomial";
    }
    return "?";
  }

  bool operator==(const Activation& o) const {
    return kind_ == o.kind_ && eps_ == o.eps_ && coeffs_ == o.coeffs_;
  }

 private:
  Activation(ActKind kind, double eps, std::vector<double> coeffs)
      : kind_(kind), eps_(eps), coeffs_(std::move(coeffs)) {}

  ActKind kind_;
  double eps_;
  std::vector<double> coeffs_;
};

/// (g, g', g'') of the given activation at x.
inline Activation::Eval activation_eval(const Activation& a, double x) { return a(x); }

}  // namespace hesslab

#endif
