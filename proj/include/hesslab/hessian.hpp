#ifndef HESSLAB_HESSIAN_HPP
#define HESSLAB_HESSIAN_HPP

#include <Eigen/Dense>
#include <utility>

#include "hesslab/errors.hpp"
#include "hesslab/net.hpp"

namespace hesslab {

/// Symmetric D x D Hessian of the generalization error, D = (n_in+1)*n_hidden.
///
/// Parameter layout (normative, matches the row-major w1 serialization):
///   p = m*n_in + n        for W1[m][n],  m in [0,n_hidden), n in [0,n_in)
///   p = n_in*n_hidden + k for W2[k]
/// Block A (W1-W1) occupies rows/cols [0, n_in*n_hidden), block B (W2-W2)
/// occupies [n_in*n_hidden, D), block C is the off-diagonal rectangle.
class HessianMatrix {
 public:
  HessianMatrix(Architecture arch, Eigen::MatrixXd data)
      : arch_(arch), data_(std::move(data)) {
    const int d = arch_.param_count();
    if (data_.rows() != d || data_.cols() != d)
      throw usage_error("HessianMatrix: data must be D x D with D=(n_in+1)*n_hidden");
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < i; ++j)
        if (data_(i, j) != data_(j, i))
          throw numeric_error("HessianMatrix: data not exactly symmetric");
  }

  int dim() const { return static_cast<int>(data_.rows()); }
  const Architecture& arch() const { return arch_; }
  const Eigen::MatrixXd& matrix() const { return data_; }

  int w1_index(int m, int n) const { return m * arch_.n_in + n; }
  int w2_index(int k) const { return arch_.n_in * arch_.n_hidden + k; }
  int w1_block_size() const { return arch_.n_in * arch_.n_hidden; }

  auto block_a() const {
    const int s = w1_block_size();
    return data_.topLeftCorner(s, s);
  }
  auto block_b() const {
    const int s = w1_block_size();
    return data_.bottomRightCorner(dim() - s, dim() - s);
  }
  /// Cross block, rows indexed by W1 parameters, columns by W2 parameters.
  auto block_c() const {
    const int s = w1_block_size();
    return data_.topRightCorner(s, dim() - s);
  }

 private:
  Architecture arch_;
  Eigen::MatrixXd data_;
};

}  // namespace hesslab

#endif
