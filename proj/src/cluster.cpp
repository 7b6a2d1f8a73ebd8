#include "kinedict/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "kinedict/error.hpp"
#include "kinedict/obdl.hpp"
#include "kinedict/parallel.hpp"

namespace kinedict {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double chordal_cost(const Eigen::Vector4d& x, const Eigen::Vector4d& c) { return 1.0 - std::abs(x.dot(c)); }

double geodesic(const Eigen::Vector4d& x, const Eigen::Vector4d& c) {
  return geodesic_distance(UnitQuaternion::from_vector(x), UnitQuaternion::from_vector(c));
}

}  // namespace

KMeansResult kmeans_quat_detailed(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index clusters,
                                  std::uint64_t seed, int max_iters) {
  require(clusters >= 1, "k-means needs at least one cluster");
  require(data.cols() >= 1, "k-means needs nonempty data");
  require_canonical_quaternions(data);
  const Eigen::Index m = data.cols();

  std::mt19937_64 rng(seed);
  Eigen::Matrix4Xd centers(4, clusters);

  // k-means++ with D^2 weighting on geodesic distance.
  std::uniform_int_distribution<Eigen::Index> first(0, m - 1);
  centers.col(0) = data.col(first(rng));
  Eigen::VectorXd nearest(m);
  for (Eigen::Index k = 0; k < m; ++k) nearest[k] = geodesic(data.col(k), centers.col(0));
  for (Eigen::Index c = 1; c < clusters; ++c) {
    const Eigen::VectorXd weights = nearest.array().square();
    const double total = weights.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::discrete_distribution<Eigen::Index> dist(weights.data(), weights.data() + m);
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    centers.col(c) = data.col(pick);
    for (Eigen::Index k = 0; k < m; ++k) nearest[k] = std::min(nearest[k], geodesic(data.col(k), centers.col(c)));
  }

  KMeansResult result;
  result.assignment.assign(static_cast<std::size_t>(m), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    Eigen::VectorXd cost(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::Index best = 0;
      (centers.transpose() * data.col(k)).cwiseAbs().maxCoeff(&best);
      if (result.assignment[static_cast<std::size_t>(k)] != best) changed = true;
      result.assignment[static_cast<std::size_t>(k)] = best;
      cost[k] = chordal_cost(data.col(k), centers.col(best));
    }
    if (!changed && it > 0) break;

    // Empty clusters take the currently worst-served point.
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(clusters), 0);
    for (Eigen::Index a : result.assignment) ++counts[static_cast<std::size_t>(a)];
    for (Eigen::Index c = 0; c < clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = 0;
      cost.maxCoeff(&far);
      if (counts[static_cast<std::size_t>(result.assignment[static_cast<std::size_t>(far)])] <= 1) continue;
      --counts[static_cast<std::size_t>(result.assignment[static_cast<std::size_t>(far)])];
      result.assignment[static_cast<std::size_t>(far)] = c;
      ++counts[static_cast<std::size_t>(c)];
      centers.col(c) = data.col(far);
      cost[far] = 0.0;
    }

    Eigen::Matrix4Xd sums = Eigen::Matrix4Xd::Zero(4, clusters);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Eigen::Index a = result.assignment[static_cast<std::size_t>(k)];
      const double s = data.col(k).dot(centers.col(a)) < 0.0 ? -1.0 : 1.0;
      sums.col(a) += s * data.col(k);
    }
    for (Eigen::Index c = 0; c < clusters; ++c)
      if (sums.col(c).norm() > 1e-12) centers.col(c) = UnitQuaternion::from_vector(sums.col(c)).coeffs();

    double objective = 0.0;
    for (Eigen::Index k = 0; k < m; ++k)
      objective += chordal_cost(data.col(k), centers.col(result.assignment[static_cast<std::size_t>(k)]));
    result.objective_history.push_back(objective);
    result.iterations = it + 1;
  }

  result.dict.mode = AtomMode::Quaternion;
  result.dict.atoms.resize(4, clusters);
  for (Eigen::Index c = 0; c < clusters; ++c) result.dict.atoms.col(c) = UnitQuaternion::from_vector(centers.col(c)).coeffs();
  result.dict.provenance.method = "kmeans";
  result.dict.provenance.seed = seed;
  result.dict.provenance.steps = result.iterations;

  std::set<std::vector<double>> distinct;
  for (Eigen::Index k = 0; k < m; ++k) distinct.emplace(data.col(k).data(), data.col(k).data() + 4);
  result.dict.provenance.duplicate_atoms = static_cast<std::size_t>(clusters) > distinct.size();
  return result;
}

Dictionary kmeans_quat(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index clusters, std::uint64_t seed,
                       int max_iters) {
  return kmeans_quat_detailed(data, clusters, seed, max_iters).dict;
}

double geodesic_inertia(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < data.cols(); ++k) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < dict.size(); ++j) best = std::min(best, geodesic(data.col(k), dict.atoms.col(j)));
    total += best * best;
  }
  return total;
}

SampleFit fit_sample(const Dictionary& dict, const Eigen::Vector4d& sample, const CoverageConfig& config,
                     std::uint64_t sample_seed) {
  const Eigen::MatrixXd aligned = align_signs(dict, sample);
  const UnitQuaternion target = UnitQuaternion::from_vector(sample);
  std::mt19937_64 rng(sample_seed);
  std::normal_distribution<double> normal;

  SampleFit best;
  best.error_deg = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, config.restarts); ++r) {
    Eigen::MatrixXd w(dict.size(), 1);
    for (Eigen::Index j = 0; j < w.rows(); ++j) w(j, 0) = normal(rng);
    const CodeBatch cb = optimize_codes(dict, aligned, std::move(w), config.inner);
    SimplexPoint code{cb.codes.col(0)};
    double err = 180.0;
    try {
      err = geodesic_distance(UnitQuaternion::from_vector(reconstruct(dict, code)), target) * kRadToDeg;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateCombination) throw;
    }
    if (err < best.error_deg) {
      best.error_deg = err;
      best.code = std::move(code);
    }
  }
  return best;
}

CoverageReport coverage(const Dictionary& source, const Eigen::Ref<const Eigen::MatrixXd>& data,
                        const CoverageConfig& config) {
  require(source.mode == AtomMode::Quaternion, "coverage needs a quaternion dictionary");
  require(data.rows() == 4, "coverage data must be quaternions");
  Dictionary dict = source;
  for (Eigen::Index j = 0; j < dict.size(); ++j) dict.atoms.col(j) = UnitQuaternion::from_vector(dict.atoms.col(j)).coeffs();

  CoverageReport report;
  report.method = dict.provenance.method;
  report.atoms = dict.size();
  report.threshold_deg = config.threshold_deg;
  report.per_sample_errors_deg.assign(static_cast<std::size_t>(data.cols()), 0.0);
  parallel_for(static_cast<std::size_t>(data.cols()), [&](std::size_t k) {
    const Eigen::Vector4d x = UnitQuaternion::from_vector(data.col(static_cast<Eigen::Index>(k))).coeffs();
    report.per_sample_errors_deg[k] = fit_sample(dict, x, config, mix_seed(config.seed, k)).error_deg;
  });
  std::size_t covered = 0;
  for (double e : report.per_sample_errors_deg)
    if (e <= config.threshold_deg) ++covered;
  report.ratio = data.cols() > 0 ? static_cast<double>(covered) / static_cast<double>(data.cols()) : 0.0;
  return report;
}

nlohmann::json to_json(const CoverageReport& report) {
  return {{"method", report.method},
          {"N", report.atoms},
          {"threshold_deg", report.threshold_deg},
          {"ratio", report.ratio},
          {"per_sample_errors_deg", report.per_sample_errors_deg}};
}

std::string coverage_csv(const CoverageReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "index,error_deg\n";
  for (std::size_t k = 0; k < report.per_sample_errors_deg.size(); ++k)
    out << k << ',' << report.per_sample_errors_deg[k] << '\n';
  return out.str();
}

}  // namespace kinedict
