#pragma once

#include <Eigen/Core>
#include <span>

namespace kinedict {

/// Rotation by `angle` radians about `axis`. Canonical form has a unit axis and angle in [0, pi].
struct AxisAngle {
  Eigen::Vector3d axis{0.0, 0.0, 1.0};
  double angle = 0.0;
};

/// Unit quaternion (w, x, y, z) kept on the canonical hemisphere: w >= 0, and when w == 0
/// the first nonzero of (x, y, z) is positive. q and -q are the same rotation, so every
/// value constructed here is normalized and then folded onto that hemisphere.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  /// Normalizes (unless already unit to within 1e-14) and canonicalizes. Throws
  /// InvalidInput on non-finite or zero-length input.
  static UnitQuaternion from_wxyz(double w, double x, double y, double z);
  static UnitQuaternion from_vector(const Eigen::Vector4d& wxyz);
  static UnitQuaternion identity() { return {}; }

  double w() const { return q_[0]; }
  double x() const { return q_[1]; }
  double y() const { return q_[2]; }
  double z() const { return q_[3]; }

  /// Components in (w, x, y, z) order.
  const Eigen::Vector4d& coeffs() const { return q_; }

  Eigen::Matrix3d to_matrix() const;
  Eigen::Vector3d rotate(const Eigen::Vector3d& v) const;
  UnitQuaternion conjugate() const;

  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b);
  friend bool operator==(const UnitQuaternion& a, const UnitQuaternion& b) { return a.q_ == b.q_; }

 private:
  Eigen::Vector4d q_{1.0, 0.0, 0.0, 0.0};
};

/// Sign rule only: flips v onto the canonical hemisphere without normalizing.
Eigen::Vector4d canonical_sign(const Eigen::Vector4d& v);

UnitQuaternion from_axis_angle(const AxisAngle& a);
AxisAngle to_axis_angle(const UnitQuaternion& q);

/// Rotation vector encoding: axis * angle packed in one 3-vector.
UnitQuaternion from_rotation_vector(const Eigen::Vector3d& rv);
Eigen::Vector3d to_rotation_vector(const UnitQuaternion& q);

UnitQuaternion from_matrix(const Eigen::Matrix3d& r);

/// Rotation angle between p and q in [0, pi]; invariant to the sign of either argument.
double geodesic_distance(const UnitQuaternion& p, const UnitQuaternion& q);

/// Geodesic interpolation; x1 is the weight on q1 (x1 = 1 returns q1) and x2 = 1 - x1 weights q2.
/// q2 is sign-aligned to q1 first. Arcs shorter than 1e-7 rad fall back to normalized lerp.
UnitQuaternion slerp(double x1, const UnitQuaternion& q1, const UnitQuaternion& q2);

/// Convex combination of atoms after aligning each active atom's sign to the atom with the
/// largest weight. Returns the unnormalized combination; `signs` (if given) receives +1/-1
/// per atom. Throws InvalidInput when weights are not a simplex point.
Eigen::Vector4d aligned_combination(std::span<const double> weights,
                                    const Eigen::Ref<const Eigen::Matrix4Xd>& atoms,
                                    Eigen::VectorXd* signs = nullptr);

/// normalize(sum_i w_i s_i atom_i), canonicalized. Throws DegenerateCombination when the
/// combination norm falls below 1e-6.
UnitQuaternion nlerp(std::span<const double> weights, const Eigen::Ref<const Eigen::Matrix4Xd>& atoms);
UnitQuaternion nlerp(std::span<const double> weights, std::span<const UnitQuaternion> atoms);

Eigen::Matrix4Xd to_columns(std::span<const UnitQuaternion> qs);

}  // namespace kinedict
