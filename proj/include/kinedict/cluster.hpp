#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinedict/dictionary.hpp"

namespace kinedict {

struct KMeansResult {
  Dictionary dict;
  std::vector<Eigen::Index> assignment;
  /// Lloyd objective sum_k (1 - |<x_k, c_a(k)>|) after every iteration; non-increasing.
  std::vector<double> objective_history;
  int iterations = 0;
};

/// Spherical k-means on quaternions: k-means++ seeding by geodesic distance, geodesic
/// assignment, centroid = normalized sum of members sign-aligned to the previous centroid.
/// Empty clusters take the point farthest from its own centroid.
KMeansResult kmeans_quat_detailed(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index clusters,
                                  std::uint64_t seed, int max_iters = 100);

Dictionary kmeans_quat(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index clusters, std::uint64_t seed,
                       int max_iters = 100);

/// Sum of squared geodesic distances (radians^2) from each sample to its nearest atom.
double geodesic_inertia(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data);

struct CoverageConfig {
  double threshold_deg = 5.0;
  int restarts = 4;
  std::uint64_t seed = 0;
  InnerLoopConfig inner;
};

struct CoverageReport {
  std::string method;
  Eigen::Index atoms = 0;
  double threshold_deg = 0.0;
  double ratio = 0.0;
  std::vector<double> per_sample_errors_deg;
};

/// Best simplex code for one sample (lowest geodesic reconstruction error over the restarts)
/// and that error in degrees.
struct SampleFit {
  SimplexPoint code;
  double error_deg = 0.0;
};
SampleFit fit_sample(const Dictionary& dict, const Eigen::Vector4d& sample, const CoverageConfig& config,
                     std::uint64_t sample_seed);

/// Fraction of held-out samples whose reconstruction lies within the geodesic threshold.
CoverageReport coverage(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data,
                        const CoverageConfig& config);

nlohmann::json to_json(const CoverageReport& report);
/// Rows "index,error_deg" with a header line.
std::string coverage_csv(const CoverageReport& report);

}  // namespace kinedict
