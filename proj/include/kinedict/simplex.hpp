#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace kinedict {

/// A point on the probability simplex: nonnegative entries summing to one. Entries clipped
/// by the projection are exact zeros, so the support is recoverable by `p > 0`.
struct SimplexPoint {
  Eigen::VectorXd p;

  std::vector<Eigen::Index> support() const;
  Eigen::Index size() const { return p.size(); }
};

/// Euclidean projection of z onto the probability simplex (sort-and-threshold, O(N log N)).
/// Ties are broken by original index. Throws InvalidInput for empty or non-finite z.
SimplexPoint sparsemax(const Eigen::Ref<const Eigen::VectorXd>& z);

/// J = Diag(s) - s s^T / |S| where s indicates the support of sparsemax(z).
Eigen::MatrixXd sparsemax_jacobian(const Eigen::Ref<const Eigen::VectorXd>& z);

/// J^T g for the Jacobian at a projection whose output is `p` (J is symmetric): on the
/// support, g minus its support mean; zero elsewhere.
Eigen::VectorXd sparsemax_backward(const SimplexPoint& p, const Eigen::Ref<const Eigen::VectorXd>& g);

}  // namespace kinedict
