#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "kinedict/dictionary.hpp"
#include "kinedict/kinematics.hpp"

namespace kinedict {

/// Observations plus per-joint dictionaries for dictionary-constrained pose recovery.
/// `dictionaries[i]` constrains articulated joint i + 1. 2D keypoints are in image units
/// (a 224-unit frame by convention), 3D keypoints in meters.
struct FitProblem {
  Skeleton skeleton = default_skeleton();
  std::vector<Dictionary> dictionaries;
  Keypoints2 observed_2d;
  std::vector<bool> visible_2d;
  std::optional<Keypoints3> observed_3d;
  std::vector<bool> visible_3d;
  double lambda_2d = 1.0;
  double lambda_3d = 1.0;

  /// Throws InvalidInput on shape mismatches and UnderConstrained when fewer than four 2D
  /// joints are visible and the 3D observations are not complete.
  void validate() const;
};

/// Per-joint logits; the code of joint i is sparsemax(codes[i]).
using CodeSet = std::vector<Eigen::VectorXd>;

struct LossTerms {
  double total = 0.0;
  double l2d = 0.0;
  double l3d = 0.0;
};

struct LossGradient {
  CodeSet codes;
  double scale = 0.0;
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  std::array<double, 6> r6{};
};

/// L = lambda_3d * L3D + lambda_2d * L2D. L2D sums squared reprojection residuals over visible
/// joints; L3D compares root-centered camera-frame keypoints (R * FK) with root-centered
/// observations, and is zero without 3D observations.
LossTerms loss(const FitProblem& problem, const CodeSet& codes, const Camera& camera);

/// Same value as loss(); fills `grad` with the analytic gradient. The sparsemax Jacobian is
/// taken at the support of the computed code.
LossTerms loss_and_gradient(const FitProblem& problem, const CodeSet& codes, const Camera& camera,
                            LossGradient& grad);

/// Pose whose joint i rotation is nlerp(sparsemax(codes[i]), atoms of dictionary i).
Pose pose_from_codes(const FitProblem& problem, const CodeSet& codes);

struct FitConfig {
  int restarts = 8;
  int max_iters = 200;
  std::uint64_t seed = 0;
  /// Standard deviation of the Gaussian logit initialization.
  double init_logit_scale = 0.05;
};

struct FitResult {
  CodeSet codes;
  Pose pose;
  Camera camera;
  LossTerms losses;
  int iterations = 0;
  int restart = 0;
  std::vector<double> restart_losses;
};

/// Best-of-restarts code-space optimization. Each restart draws logits from a seeded Gaussian,
/// picks a camera from a coarse bounding-box alignment over a small rotation grid, then runs up to
/// max_iters Levenberg-Marquardt steps on the simplex weights (projected back with sparsemax, so
/// returned codes are simplex points). With 3D observations the search multiplies the 3D weight by
/// the squared initial camera scale; restarts are ranked by the true loss. Restart r uses the same
/// seed regardless of the restart count.
FitResult fit(const FitProblem& problem, const FitConfig& config);

/// Optimizes from a given starting point (no restarts, no camera search).
FitResult refine(const FitProblem& problem, CodeSet codes, Camera camera, int max_iters);

/// Mean per-joint distance after optimal similarity (scale, rotation, translation) alignment
/// of `predicted` onto `reference`.
double procrustes_mean_error(const Keypoints3& predicted, const Keypoints3& reference);

/// Problem file: {skeleton, dictionaries, keypoints_2d, visibility, keypoints_3d?,
/// visibility_3d?, lambda_2d?, lambda_3d?}. Paths resolve relative to `base_dir`.
FitProblem problem_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
FitProblem load_problem(const std::filesystem::path& path);
nlohmann::json to_json(const FitResult& result, const FitProblem& problem);

}  // namespace kinedict
