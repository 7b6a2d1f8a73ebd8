#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "kinedict/dataset.hpp"
#include "kinedict/fitting.hpp"

namespace kinedict {

/// Generated data plus the hidden ground truth it was drawn from.
struct SynthOutput {
  PoseDataset data;
  nlohmann::json truth;
};

/// Samples around `clusters` random centers. Each sample is center * exp(delta) with delta an
/// isotropic Gaussian rotation vector scaled so its RMS angle equals `spread_deg`. Centers are
/// uniform over all rotations unless `center_max_deg` < 180, in which case each center is a
/// rotation about a random axis by an angle uniform in [0, center_max_deg].
struct ClusterParams {
  int clusters = 8;
  int samples = 1000;
  double spread_deg = 2.0;
  int joints = 1;
  double center_max_deg = 180.0;
};
SynthOutput synth_clusters(const ClusterParams& params, std::uint64_t seed);

/// Samples along slerp paths between endpoint pairs `arc_deg` apart, optionally perturbed by
/// isotropic jitter of RMS angle `jitter_deg`.
struct ArcParams {
  int arcs = 4;
  int samples = 1000;
  double arc_deg = 60.0;
  double jitter_deg = 0.0;
  int joints = 1;
};
SynthOutput synth_arcs(const ArcParams& params, std::uint64_t seed);

/// Convex combinations of `support` atoms of a hidden unit-norm dictionary plus Gaussian noise.
struct PlantedParams {
  int dim = 10;
  int atoms = 12;
  int samples = 1000;
  int support = 3;
  double noise = 0.01;
};
SynthOutput synth_planted_euclidean(const PlantedParams& params, std::uint64_t seed);

/// Fit problem observed from an in-hull pose: codes drawn with at most `support` active atoms
/// per joint, a random camera facing the body, and exact 2D and 3D keypoints.
struct ProblemParams {
  int support = 3;
  bool with_3d = true;
  double image_size = 224.0;
};
struct SynthProblem {
  FitProblem problem;
  CodeSet codes;
  Camera camera;
  Keypoints3 points_3d;
};
SynthProblem synth_problem(const std::vector<Dictionary>& dictionaries, const ProblemParams& params,
                           std::uint64_t seed);
nlohmann::json problem_to_json(const FitProblem& problem, const std::vector<std::string>& dictionary_paths);

/// Uniformly random canonical unit quaternion.
Eigen::Vector4d random_quaternion(std::mt19937_64& rng);
/// q * exp(delta) with delta a Gaussian rotation vector of RMS angle `rms_rad`.
Eigen::Vector4d perturb(const Eigen::Vector4d& q, double rms_rad, std::mt19937_64& rng);

}  // namespace kinedict
