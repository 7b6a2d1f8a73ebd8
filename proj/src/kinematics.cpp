#include "kinedict/kinematics.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>

#include "kinedict/error.hpp"

namespace kinedict {

Skeleton::Skeleton(std::vector<Joint> joints) : joints_(std::move(joints)) {
  require(!joints_.empty(), "skeleton has no joints");
  require(joints_[0].parent == -1, "joint 0 must be the root (parent -1)");
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const Joint& j = joints_[i];
    require(j.offset.allFinite(), "joint '" + j.name + "' has a non-finite offset");
    if (i == 0) continue;
    require(j.parent >= 0, "skeleton has more than one root ('" + j.name + "')");
    require(static_cast<std::size_t>(j.parent) < i, "joint '" + j.name + "' is not in topological order");
  }
}

std::size_t Skeleton::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < joints_.size(); ++i)
    if (joints_[i].name == name) return i;
  fail(ErrorKind::InvalidInput, "unknown joint '" + std::string(name) + "'");
}

std::vector<std::string> Skeleton::articulated_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 1; i < joints_.size(); ++i) names.push_back(joints_[i].name);
  return names;
}

Skeleton Skeleton::from_json(const nlohmann::json& j) {
  std::vector<Joint> joints;
  try {
    for (const auto& item : j.at("joints")) {
      Joint joint;
      joint.name = item.at("name").get<std::string>();
      joint.parent = item.at("parent").get<int>();
      const auto off = item.at("offset").get<std::vector<double>>();
      if (off.size() != 3) fail(ErrorKind::Data, "joint '" + joint.name + "' offset must have 3 entries");
      joint.offset = Eigen::Vector3d(off[0], off[1], off[2]);
      joints.push_back(std::move(joint));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed skeleton JSON: ") + e.what());
  }
  try {
    return Skeleton(std::move(joints));
  } catch (const Error& e) {
    fail(ErrorKind::Data, e.what());
  }
}

nlohmann::json Skeleton::to_json() const {
  nlohmann::json joints = nlohmann::json::array();
  for (const Joint& j : joints_)
    joints.push_back({{"name", j.name}, {"parent", j.parent}, {"offset", {j.offset.x(), j.offset.y(), j.offset.z()}}});
  return {{"joints", std::move(joints)}};
}

Skeleton default_skeleton() { return Skeleton::from_json(nlohmann::json::parse(default_skeleton_json())); }

Skeleton load_skeleton(const std::filesystem::path& path) {
  if (path == "default") return default_skeleton();
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read skeleton file " + path.string());
  try {
    return Skeleton::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
}

Eigen::Matrix3d Camera::rotation() const { return r6_to_rotation(r6); }

Camera Camera::from_rotation(double scale, const Eigen::Vector2d& translation, const Eigen::Matrix3d& r) {
  Camera c;
  c.scale = scale;
  c.translation = translation;
  c.r6 = {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
  return c;
}

Eigen::Matrix3d r6_to_rotation(std::span<const double, 6> r6) {
  const Eigen::Vector3d a1(r6[0], r6[1], r6[2]);
  const Eigen::Vector3d a2(r6[3], r6[4], r6[5]);
  require(a1.allFinite() && a2.allFinite(), "6D rotation has non-finite entries");
  const double n1 = a1.norm();
  require(n1 > 1e-12, "6D rotation: first column is zero");
  const Eigen::Vector3d c1 = a1 / n1;
  const Eigen::Vector3d v = a2 - c1.dot(a2) * c1;
  const double n2 = v.norm();
  require(n2 > 1e-12 * std::max(1.0, a2.norm()), "6D rotation: columns are parallel or the second is zero");
  const Eigen::Vector3d c2 = v / n2;
  Eigen::Matrix3d r;
  r.col(0) = c1;
  r.col(1) = c2;
  r.col(2) = c1.cross(c2);
  return r;
}

Keypoints3 forward_kinematics(const Skeleton& skel, const Pose& pose, const Eigen::Matrix3d& root_rotation) {
  const std::size_t k = skel.size();
  require(pose.rotations.size() + 1 == k, "pose has " + std::to_string(pose.rotations.size()) +
                                              " rotations, skeleton expects " + std::to_string(k - 1));
  std::vector<Eigen::Matrix3d> world(k);
  Keypoints3 out(static_cast<Eigen::Index>(k), 3);
  world[0] = root_rotation;
  out.row(0) = skel.joint(0).offset.transpose();
  for (std::size_t i = 1; i < k; ++i) {
    const auto p = static_cast<std::size_t>(skel.joint(i).parent);
    out.row(static_cast<Eigen::Index>(i)) =
        out.row(static_cast<Eigen::Index>(p)) + (world[p] * skel.joint(i).offset).transpose();
    world[i] = world[p] * pose.rotations[i - 1].to_matrix();
  }
  return out;
}

Keypoints2 project(const Keypoints3& points, const Camera& cam) {
  const Eigen::Matrix3d r = cam.rotation();
  Keypoints2 out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d x = r * points.row(i).transpose();
    out(i, 0) = cam.scale * x.x() + cam.translation.x();
    out(i, 1) = cam.scale * x.y() + cam.translation.y();
  }
  return out;
}

}  // namespace kinedict
