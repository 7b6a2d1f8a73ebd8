#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kinedict/quat.hpp"

namespace kinedict {

using Keypoints3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Keypoints2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct Joint {
  std::string name;
  int parent = -1;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
};

/// Kinematic tree in topological order: joint 0 is the single root and every other joint's
/// parent has a smaller index. Offsets are rest-pose displacements from the parent, in meters.
class Skeleton {
 public:
  explicit Skeleton(std::vector<Joint> joints);

  std::size_t size() const { return joints_.size(); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(std::size_t i) const { return joints_[i]; }
  /// Index of the named joint; throws InvalidInput when absent.
  std::size_t index_of(std::string_view name) const;
  /// Names of the articulated (non-root) joints, i.e. the Pose order.
  std::vector<std::string> articulated_names() const;

  static Skeleton from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::vector<Joint> joints_;
};

/// Bundled 24-node tree with the SMPL topology (root + 23 articulated joints).
Skeleton default_skeleton();
std::string_view default_skeleton_json();
/// Loads a skeleton file; the literal path "default" yields default_skeleton().
Skeleton load_skeleton(const std::filesystem::path& path);

/// Relative rotation of every articulated joint in its parent's frame (root excluded).
struct Pose {
  std::vector<UnitQuaternion> rotations;

  static Pose identity(const Skeleton& skel) { return {std::vector<UnitQuaternion>(skel.size() - 1)}; }
};

/// Weak-perspective camera: x2d = s * Pi(R x3d) + t, with R stored as its first two columns.
struct Camera {
  double scale = 1.0;
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  std::array<double, 6> r6{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  Eigen::Matrix3d rotation() const;
  static Camera from_rotation(double scale, const Eigen::Vector2d& translation, const Eigen::Matrix3d& r);
};

/// Gram-Schmidt on the two 3-columns packed in r6 (column 1 = r6[0..2], column 2 = r6[3..5]);
/// the third column is their cross product. Throws InvalidInput for zero or parallel columns.
Eigen::Matrix3d r6_to_rotation(std::span<const double, 6> r6);

/// Joint positions (K x 3). The root sits at its rest offset with orientation `root_rotation`;
/// joint i is placed at parent + W_parent * offset_i and carries W_i = W_parent * R_i.
Keypoints3 forward_kinematics(const Skeleton& skel, const Pose& pose,
                              const Eigen::Matrix3d& root_rotation = Eigen::Matrix3d::Identity());

/// Rotates by the camera rotation, drops depth, scales, then translates.
Keypoints2 project(const Keypoints3& points, const Camera& cam);

}  // namespace kinedict
