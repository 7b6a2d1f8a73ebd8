#include "kinedict/simplex.hpp"

#include <algorithm>
#include <numeric>

#include "kinedict/error.hpp"

namespace kinedict {

std::vector<Eigen::Index> SimplexPoint::support() const {
  std::vector<Eigen::Index> s;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s.push_back(i);
  return s;
}

SimplexPoint sparsemax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Eigen::Index n = z.size();
  if (n == 0) fail(ErrorKind::InvalidInput, "sparsemax of an empty vector");
  if (!z.allFinite()) fail(ErrorKind::InvalidInput, "sparsemax input has non-finite entries");

  const Eigen::VectorXd shifted = z.array() - z.maxCoeff();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return shifted[a] > shifted[b]; });

  double cumsum = 0.0;
  double support_sum = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double v = shifted[order[static_cast<std::size_t>(j)]];
    cumsum += v;
    if (1.0 + static_cast<double>(j + 1) * v > cumsum) {
      k = j + 1;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(k);

  SimplexPoint out;
  out.p = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index i = order[static_cast<std::size_t>(j)];
    out.p[i] = std::max(shifted[i] - tau, 0.0);
  }
  const double total = out.p.sum();
  if (total > 0.0) out.p /= total;
  return out;
}

Eigen::MatrixXd sparsemax_jacobian(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const SimplexPoint p = sparsemax(z);
  Eigen::VectorXd s = (p.p.array() > 0.0).cast<double>();
  const double k = s.sum();
  Eigen::MatrixXd j = Eigen::MatrixXd(s.asDiagonal());
  j.noalias() -= s * s.transpose() / k;
  return j;
}

Eigen::VectorXd sparsemax_backward(const SimplexPoint& p, const Eigen::Ref<const Eigen::VectorXd>& g) {
  const Eigen::Index n = p.p.size();
  double mean = 0.0;
  int k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (p.p[i] > 0.0) {
      mean += g[i];
      ++k;
    }
  mean /= static_cast<double>(k);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (p.p[i] > 0.0) out[i] = g[i] - mean;
  return out;
}

}  // namespace kinedict
