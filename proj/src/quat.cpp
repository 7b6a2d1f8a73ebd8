#include "kinedict/quat.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kinedict/error.hpp"

namespace kinedict {

namespace {

constexpr double kDegenerateNorm = 1e-6;
constexpr double kSlerpFallback = 1e-7;

bool all_finite(const Eigen::Vector4d& v) { return v.allFinite(); }

}  // namespace

Eigen::Vector4d canonical_sign(const Eigen::Vector4d& v) {
  for (int i = 0; i < 4; ++i) {
    if (v[i] > 0.0) return v;
    if (v[i] < 0.0) return -v;
  }
  return v;
}

UnitQuaternion UnitQuaternion::from_vector(const Eigen::Vector4d& wxyz) {
  if (!all_finite(wxyz)) fail(ErrorKind::InvalidInput, "quaternion has non-finite components");
  const double n2 = wxyz.squaredNorm();
  if (n2 < 1e-300) fail(ErrorKind::InvalidInput, "quaternion has zero length");
  UnitQuaternion q;
  q.q_ = std::abs(n2 - 1.0) > 1e-14 ? Eigen::Vector4d(wxyz / std::sqrt(n2)) : wxyz;
  q.q_ = canonical_sign(q.q_);
  // Normalize -0.0 to 0.0.
  for (int i = 0; i < 4; ++i) q.q_[i] += 0.0;
  return q;
}

UnitQuaternion UnitQuaternion::from_wxyz(double w, double x, double y, double z) {
  return from_vector(Eigen::Vector4d(w, x, y, z));
}

Eigen::Matrix3d UnitQuaternion::to_matrix() const {
  const double w = q_[0], x = q_[1], y = q_[2], z = q_[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Vector3d UnitQuaternion::rotate(const Eigen::Vector3d& v) const { return to_matrix() * v; }

UnitQuaternion UnitQuaternion::conjugate() const {
  return from_vector(Eigen::Vector4d(q_[0], -q_[1], -q_[2], -q_[3]));
}

UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  const Eigen::Vector4d& p = a.q_;
  const Eigen::Vector4d& q = b.q_;
  return UnitQuaternion::from_wxyz(p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
                                   p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
                                   p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
                                   p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]);
}

UnitQuaternion from_axis_angle(const AxisAngle& a) {
  if (!a.axis.allFinite() || !std::isfinite(a.angle))
    fail(ErrorKind::InvalidInput, "axis-angle has non-finite components");
  const double n = a.axis.norm();
  if (n < 1e-12) fail(ErrorKind::InvalidInput, "axis-angle axis has zero length");
  const Eigen::Vector3d axis = a.axis / n;
  const double h = 0.5 * a.angle;
  const double s = std::sin(h);
  return UnitQuaternion::from_wxyz(std::cos(h), s * axis.x(), s * axis.y(), s * axis.z());
}

AxisAngle to_axis_angle(const UnitQuaternion& q) {
  const Eigen::Vector3d v(q.x(), q.y(), q.z());
  const double vn = v.norm();
  AxisAngle out;
  out.angle = 2.0 * std::atan2(vn, q.w());
  if (vn > 0.0) out.axis = v / vn;
  return out;
}

UnitQuaternion from_rotation_vector(const Eigen::Vector3d& rv) {
  if (!rv.allFinite()) fail(ErrorKind::InvalidInput, "rotation vector has non-finite components");
  const double angle = rv.norm();
  if (angle == 0.0) return UnitQuaternion::identity();
  return from_axis_angle({rv / angle, angle});
}

Eigen::Vector3d to_rotation_vector(const UnitQuaternion& q) {
  const AxisAngle aa = to_axis_angle(q);
  return aa.axis * aa.angle;
}

UnitQuaternion from_matrix(const Eigen::Matrix3d& r) {
  if (!r.allFinite()) fail(ErrorKind::InvalidInput, "rotation matrix has non-finite entries");
  const Eigen::Quaterniond q(r);
  return UnitQuaternion::from_wxyz(q.w(), q.x(), q.y(), q.z());
}

double geodesic_distance(const UnitQuaternion& p, const UnitQuaternion& q) {
  Eigen::Vector4d b = q.coeffs();
  if (p.coeffs().dot(b) < 0.0) b = -b;
  return 4.0 * std::atan2((p.coeffs() - b).norm(), (p.coeffs() + b).norm());
}

UnitQuaternion slerp(double x1, const UnitQuaternion& q1, const UnitQuaternion& q2) {
  if (!(x1 >= 0.0 && x1 <= 1.0)) fail(ErrorKind::InvalidInput, "slerp weight outside [0, 1]");
  const Eigen::Vector4d& a = q1.coeffs();
  Eigen::Vector4d b = q2.coeffs();
  if (a.dot(b) < 0.0) b = -b;
  const double x2 = 1.0 - x1;
  const double delta = 2.0 * std::atan2((a - b).norm(), (a + b).norm());
  if (delta < kSlerpFallback) return UnitQuaternion::from_vector(x1 * a + x2 * b);
  const double sd = std::sin(delta);
  return UnitQuaternion::from_vector(std::sin(x1 * delta) / sd * a + std::sin(x2 * delta) / sd * b);
}

Eigen::Vector4d aligned_combination(std::span<const double> weights,
                                    const Eigen::Ref<const Eigen::Matrix4Xd>& atoms,
                                    Eigen::VectorXd* signs) {
  const auto n = static_cast<Eigen::Index>(weights.size());
  if (n == 0 || atoms.cols() != n)
    fail(ErrorKind::InvalidInput, "weights and atoms disagree in count");
  double sum = 0.0;
  Eigen::Index dominant = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = weights[static_cast<std::size_t>(i)];
    if (!(wi >= 0.0) || !std::isfinite(wi))
      fail(ErrorKind::InvalidInput, "weights must be finite and nonnegative");
    sum += wi;
    if (wi > weights[static_cast<std::size_t>(dominant)]) dominant = i;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorKind::InvalidInput, "weights must sum to 1");

  Eigen::Vector4d c = Eigen::Vector4d::Zero();
  if (signs) signs->resize(n);
  const Eigen::Vector4d ref = atoms.col(dominant);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = atoms.col(i).dot(ref) < 0.0 ? -1.0 : 1.0;
    if (signs) (*signs)[i] = s;
    const double wi = weights[static_cast<std::size_t>(i)];
    if (wi > 0.0) c += (s * wi) * atoms.col(i);
  }
  return c;
}

UnitQuaternion nlerp(std::span<const double> weights, const Eigen::Ref<const Eigen::Matrix4Xd>& atoms) {
  const Eigen::Vector4d c = aligned_combination(weights, atoms);
  const double n = c.norm();
  if (n < kDegenerateNorm)
    fail(ErrorKind::DegenerateCombination,
         "convex combination of atoms nearly cancels (norm " + std::to_string(n) + ")");
  return UnitQuaternion::from_vector(c);
}

UnitQuaternion nlerp(std::span<const double> weights, std::span<const UnitQuaternion> atoms) {
  return nlerp(weights, to_columns(atoms));
}

Eigen::Matrix4Xd to_columns(std::span<const UnitQuaternion> qs) {
  Eigen::Matrix4Xd m(4, static_cast<Eigen::Index>(qs.size()));
  for (std::size_t i = 0; i < qs.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = qs[i].coeffs();
  return m;
}

}  // namespace kinedict
