#include "kinedict/fitting.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>

#include "kinedict/error.hpp"
#include "kinedict/parallel.hpp"

namespace kinedict {

namespace {

Eigen::Matrix3d quat_matrix(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// <gR, dR/dq_k> for each quaternion component.
Eigen::Vector4d quat_matrix_backward(const Eigen::Vector4d& q, const Eigen::Matrix3d& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return {g.cwiseProduct(dw).sum(), g.cwiseProduct(dx).sum(), g.cwiseProduct(dy).sum(), g.cwiseProduct(dz).sum()};
}

std::array<double, 6> r6_backward(const std::array<double, 6>& r6, const Eigen::Matrix3d& g) {
  const Eigen::Vector3d a1(r6[0], r6[1], r6[2]);
  const Eigen::Vector3d a2(r6[3], r6[4], r6[5]);
  const double n1 = a1.norm();
  const Eigen::Vector3d c1 = a1 / n1;
  const Eigen::Vector3d v = a2 - c1.dot(a2) * c1;
  const double n2 = v.norm();
  const Eigen::Vector3d c2 = v / n2;

  Eigen::Vector3d gc1 = g.col(0) + c2.cross(g.col(2));
  const Eigen::Vector3d gc2 = g.col(1) + g.col(2).cross(c1);
  const Eigen::Vector3d gv = (gc2 - c2 * c2.dot(gc2)) / n2;
  const Eigen::Vector3d ga2 = gv - c1 * c1.dot(gv);
  gc1 += -a2 * c1.dot(gv) - c1.dot(a2) * gv;
  const Eigen::Vector3d ga1 = (gc1 - c1 * c1.dot(gc1)) / n1;
  return {ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]};
}

struct JointForward {
  SimplexPoint code;
  Eigen::VectorXd signs;
  Eigen::Vector4d q;
  double norm = 0.0;
  Eigen::Matrix3d r;
};

struct Forward {
  std::vector<JointForward> joints;
  std::vector<Eigen::Matrix3d> world;
  std::vector<Eigen::Vector3d> pos;
  std::vector<Eigen::Vector3d> y;
  Eigen::Matrix3d g;
};

Forward forward(const FitProblem& problem, const CodeSet& codes, const Camera& camera) {
  const Skeleton& skel = problem.skeleton;
  const std::size_t k = skel.size();
  require(codes.size() + 1 == k, "expected " + std::to_string(k - 1) + " code vectors, got " +
                                     std::to_string(codes.size()));
  Forward fw;
  fw.joints.resize(k - 1);
  for (std::size_t j = 0; j + 1 < k; ++j) {
    const Dictionary& dict = problem.dictionaries[j];
    require(codes[j].size() == dict.size(), "code " + std::to_string(j) + " has the wrong length");
    JointForward& jf = fw.joints[j];
    jf.code = sparsemax(codes[j]);
    const Eigen::Vector4d c = aligned_combination(std::span<const double>(jf.code.p.data(), jf.code.p.size()),
                                                  dict.atoms, &jf.signs);
    jf.norm = c.norm();
    if (!(jf.norm >= 1e-6))
      fail(ErrorKind::DegenerateCombination, "joint " + std::to_string(j + 1) + ": combination norm below 1e-6");
    jf.q = c / jf.norm;
    jf.r = quat_matrix(jf.q);
  }

  fw.world.resize(k);
  fw.pos.resize(k);
  fw.world[0].setIdentity();
  fw.pos[0] = skel.joint(0).offset;
  for (std::size_t i = 1; i < k; ++i) {
    const auto p = static_cast<std::size_t>(skel.joint(i).parent);
    fw.pos[i] = fw.pos[p] + fw.world[p] * skel.joint(i).offset;
    fw.world[i] = fw.world[p] * fw.joints[i - 1].r;
  }

  fw.g = camera.rotation();
  fw.y.resize(k);
  for (std::size_t i = 0; i < k; ++i) fw.y[i] = fw.g * fw.pos[i];
  return fw;
}

// Reverse pass from seeds on the camera-frame joints, the scale and the translation.
// `code_grads` receives gradients with respect to the (post-sparsemax) code entries.
void backward(const FitProblem& problem, const Forward& fw, const Camera& camera,
              const std::vector<Eigen::Vector3d>& gy, double gs, const Eigen::Vector2d& gt, LossGradient* grad,
              std::vector<Eigen::VectorXd>* code_grads) {
  const Skeleton& skel = problem.skeleton;
  const std::size_t k = skel.size();
  Eigen::Matrix3d gg = Eigen::Matrix3d::Zero();
  std::vector<Eigen::Vector3d> gp(k);
  for (std::size_t i = 0; i < k; ++i) {
    gg += gy[i] * fw.pos[i].transpose();
    gp[i] = fw.g.transpose() * gy[i];
  }
  std::vector<Eigen::Matrix3d> gw(k, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector4d> gq(k - 1);
  for (std::size_t i = k - 1; i >= 1; --i) {
    const auto p = static_cast<std::size_t>(skel.joint(i).parent);
    gp[p] += gp[i];
    gw[p] += gp[i] * skel.joint(i).offset.transpose();
    gw[p] += gw[i] * fw.joints[i - 1].r.transpose();
    const Eigen::Matrix3d gr = fw.world[p].transpose() * gw[i];
    gq[i - 1] = quat_matrix_backward(fw.joints[i - 1].q, gr);
  }

  if (grad) {
    grad->codes.resize(k - 1);
    grad->scale = gs;
    grad->translation = gt;
    grad->r6 = r6_backward(camera.r6, gg);
  }
  if (code_grads) code_grads->resize(k - 1);
  for (std::size_t j = 0; j + 1 < k; ++j) {
    const JointForward& jf = fw.joints[j];
    const Eigen::Vector4d gc = (gq[j] - jf.q * jf.q.dot(gq[j])) / jf.norm;
    const Eigen::VectorXd gcode = jf.signs.cwiseProduct(problem.dictionaries[j].atoms.transpose() * gc);
    if (grad) grad->codes[j] = sparsemax_backward(jf.code, gcode);
    if (code_grads) (*code_grads)[j] = gcode;
  }
}

// Weighted residuals; their squared norm is the total loss. Visible 2D joints come first.
Eigen::VectorXd residuals(const FitProblem& problem, const Forward& fw, const Camera& camera, LossTerms* terms) {
  const std::size_t k = problem.skeleton.size();
  const double w2 = std::sqrt(problem.lambda_2d), w3 = std::sqrt(problem.lambda_3d);
  std::vector<double> r;
  LossTerms t;
  for (std::size_t i = 0; i < k; ++i) {
    if (!problem.visible_2d[i]) continue;
    const Eigen::Vector2d e = camera.scale * fw.y[i].head<2>() + camera.translation -
                              problem.observed_2d.row(static_cast<Eigen::Index>(i)).transpose();
    t.l2d += e.squaredNorm();
    r.push_back(w2 * e.x());
    r.push_back(w2 * e.y());
  }
  if (problem.observed_3d) {
    const Keypoints3& obs = *problem.observed_3d;
    const Eigen::Vector3d obs_root = obs.row(0).transpose();
    for (std::size_t i = 0; i < k; ++i) {
      if (!problem.visible_3d[i]) continue;
      const Eigen::Vector3d e =
          (fw.y[i] - fw.y[0]) - (obs.row(static_cast<Eigen::Index>(i)).transpose() - obs_root);
      t.l3d += e.squaredNorm();
      for (int c = 0; c < 3; ++c) r.push_back(w3 * e[c]);
    }
  }
  t.total = problem.lambda_3d * t.l3d + problem.lambda_2d * t.l2d;
  if (terms) *terms = t;
  return Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

struct Evaluation {
  LossTerms terms;
};

Evaluation evaluate(const FitProblem& problem, const CodeSet& codes, const Camera& camera, LossGradient* grad,
                    std::vector<Eigen::VectorXd>* code_grads) {
  const Forward fw = forward(problem, codes, camera);
  const std::size_t k = problem.skeleton.size();
  Evaluation ev;
  std::vector<Eigen::Vector3d> gy(k, Eigen::Vector3d::Zero());
  double gs = 0.0;
  Eigen::Vector2d gt = Eigen::Vector2d::Zero();

  for (std::size_t i = 0; i < k; ++i) {
    if (!problem.visible_2d[i]) continue;
    const Eigen::Vector2d e = camera.scale * fw.y[i].head<2>() + camera.translation -
                              problem.observed_2d.row(static_cast<Eigen::Index>(i)).transpose();
    ev.terms.l2d += e.squaredNorm();
    const Eigen::Vector2d ge = 2.0 * problem.lambda_2d * e;
    gy[i].head<2>() += camera.scale * ge;
    gs += ge.dot(fw.y[i].head<2>());
    gt += ge;
  }
  if (problem.observed_3d) {
    const Keypoints3& obs = *problem.observed_3d;
    const Eigen::Vector3d obs_root = obs.row(0).transpose();
    for (std::size_t i = 0; i < k; ++i) {
      if (!problem.visible_3d[i]) continue;
      const Eigen::Vector3d r =
          (fw.y[i] - fw.y[0]) - (obs.row(static_cast<Eigen::Index>(i)).transpose() - obs_root);
      ev.terms.l3d += r.squaredNorm();
      const Eigen::Vector3d gr = 2.0 * problem.lambda_3d * r;
      gy[i] += gr;
      gy[0] -= gr;
    }
  }
  ev.terms.total = problem.lambda_3d * ev.terms.l3d + problem.lambda_2d * ev.terms.l2d;
  if (grad || code_grads) backward(problem, fw, camera, gy, gs, gt, grad, code_grads);
  return ev;
}

// Flat parameter vector used by the optimizer: logits, then scale and translation divided by
// a reference scale, then r6.
struct Packing {
  std::vector<Eigen::Index> offsets;
  Eigen::Index code_size = 0;
  double ref = 1.0;

  Packing(const CodeSet& codes, double scale) : ref(std::max(std::abs(scale), 1e-12)) {
    for (const auto& c : codes) {
      offsets.push_back(code_size);
      code_size += c.size();
    }
  }
  Eigen::Index size() const { return code_size + 9; }

  Eigen::VectorXd pack(const CodeSet& codes, const Camera& cam) const {
    Eigen::VectorXd x(size());
    for (std::size_t j = 0; j < codes.size(); ++j) x.segment(offsets[j], codes[j].size()) = codes[j];
    x[code_size] = cam.scale / ref;
    x[code_size + 1] = cam.translation.x() / ref;
    x[code_size + 2] = cam.translation.y() / ref;
    for (int i = 0; i < 6; ++i) x[code_size + 3 + i] = cam.r6[static_cast<std::size_t>(i)];
    return x;
  }
  void unpack(const Eigen::VectorXd& x, CodeSet& codes, Camera& cam) const {
    for (std::size_t j = 0; j < codes.size(); ++j) codes[j] = x.segment(offsets[j], codes[j].size());
    cam.scale = x[code_size] * ref;
    cam.translation = Eigen::Vector2d(x[code_size + 1], x[code_size + 2]) * ref;
    for (int i = 0; i < 6; ++i) cam.r6[static_cast<std::size_t>(i)] = x[code_size + 3 + i];
  }
  Eigen::VectorXd pack_grad(const LossGradient& g) const {
    Eigen::VectorXd x(size());
    for (std::size_t j = 0; j < g.codes.size(); ++j) x.segment(offsets[j], g.codes[j].size()) = g.codes[j];
    x[code_size] = g.scale * ref;
    x[code_size + 1] = g.translation.x() * ref;
    x[code_size + 2] = g.translation.y() * ref;
    for (int i = 0; i < 6; ++i) x[code_size + 3 + i] = g.r6[static_cast<std::size_t>(i)];
    return x;
  }
};

constexpr double kInf = std::numeric_limits<double>::infinity();

// Loss at a trial point; infeasible points (degenerate combination, collapsed camera) are +inf.
double trial_loss(const FitProblem& problem, const CodeSet& codes, const Camera& cam) {
  try {
    const double l = evaluate(problem, codes, cam, nullptr, nullptr).terms.total;
    return std::isfinite(l) ? l : kInf;
  } catch (const Error&) {
    return kInf;
  }
}

// Near-ties between the dominant atom and a rival with a different sign pattern.
struct Pin {
  Eigen::Index a;
  Eigen::Index c;
};

std::vector<Pin> joint_pins(const Dictionary& dict, const SimplexPoint& code) {
  constexpr double kMargin = 1e-6;
  std::vector<Pin> pins;
  Eigen::Index a = 0;
  for (Eigen::Index i = 1; i < code.size(); ++i)
    if (code.p[i] > code.p[a]) a = i;
  const auto support = code.support();
  for (Eigen::Index c : support) {
    if (c == a || code.p[a] - code.p[c] > kMargin) continue;
    bool same = true, opposite = true;
    for (Eigen::Index i : support) {
      const bool sa = dict.atoms.col(i).dot(dict.atoms.col(a)) < 0.0;
      const bool sc = dict.atoms.col(i).dot(dict.atoms.col(c)) < 0.0;
      same = same && sa == sc;
      opposite = opposite && sa != sc;
    }
    if (!same && !opposite) pins.push_back({a, c});
  }
  return pins;
}

struct RunOutcome {
  CodeSet codes;
  Camera camera;
  double loss = kInf;
  int iterations = 0;
};

// Jacobian of `residuals` with respect to the simplex weights (not the logits) and the packed
// camera. Changing joint j's rotation turns its subtree about the joint; r6 changes rotate every
// point through the Gram-Schmidt map.
Eigen::MatrixXd geometric_jacobian(const FitProblem& problem, const Forward& fw, const Camera& camera,
                                   const Packing& pk, Eigen::Index rows) {
  const Skeleton& skel = problem.skeleton;
  const std::size_t k = skel.size();
  const double w2 = std::sqrt(problem.lambda_2d), w3 = std::sqrt(problem.lambda_3d);
  std::vector<Eigen::Index> row2(k, -1), row3(k, -1);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (problem.visible_2d[i]) {
      row2[i] = row;
      row += 2;
    }
  if (problem.observed_3d)
    for (std::size_t i = 0; i < k; ++i)
      if (problem.visible_3d[i]) {
        row3[i] = row;
        row += 3;
      }
  std::vector<std::vector<std::size_t>> subtree(k);
  for (std::size_t i = 1; i < k; ++i)
    for (int a = skel.joint(i).parent; a >= 0; a = skel.joint(static_cast<std::size_t>(a)).parent)
      subtree[static_cast<std::size_t>(a)].push_back(i);

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(rows, pk.size());
  // dy[i]: change of camera-frame joint i for a unit step in one parameter
  auto put = [&](Eigen::Index col, std::size_t i, const Eigen::Vector3d& dy, const Eigen::Vector3d& dy0) {
    if (row2[i] >= 0) jac.block<2, 1>(row2[i], col) += w2 * camera.scale * dy.head<2>();
    if (row3[i] >= 0) jac.block<3, 1>(row3[i], col) += w3 * (dy - dy0);
  };

  for (std::size_t i = 1; i < k; ++i) {
    const JointForward& jf = fw.joints[i - 1];
    const Eigen::Vector4d& q = jf.q;
    const Eigen::Vector3d v = q.tail<3>();
    Eigen::Matrix<double, 3, 4> vq;
    vq.col(0) = -v;
    vq.rightCols<3>() << q[0], -v.z(), v.y(), v.z(), q[0], -v.x(), -v.y(), v.x(), q[0];
    const Eigen::Matrix4d tangent = (Eigen::Matrix4d::Identity() - q * q.transpose()) / jf.norm;
    const Eigen::Matrix<double, 3, 4> m =
        2.0 * fw.g * fw.world[static_cast<std::size_t>(skel.joint(i).parent)] * vq * tangent;
    const Dictionary& dict = problem.dictionaries[i - 1];
    for (Eigen::Index a = 0; a < dict.size(); ++a) {
      const Eigen::Vector3d omega = m * (jf.signs[a] * dict.atoms.col(a));
      const Eigen::Index col = pk.offsets[i - 1] + a;
      for (std::size_t d : subtree[i]) put(col, d, omega.cross(fw.y[d] - fw.y[i]), Eigen::Vector3d::Zero());
    }
  }

  const Eigen::Index cs = pk.code_size;
  for (std::size_t i = 0; i < k; ++i) {
    if (row2[i] < 0) continue;
    jac.block<2, 1>(row2[i], cs) = w2 * pk.ref * fw.y[i].head<2>();
    jac(row2[i], cs + 1) = w2 * pk.ref;
    jac(row2[i] + 1, cs + 2) = w2 * pk.ref;
  }
  const Eigen::Vector3d a1(camera.r6[0], camera.r6[1], camera.r6[2]);
  const Eigen::Vector3d a2(camera.r6[3], camera.r6[4], camera.r6[5]);
  const double n1 = a1.norm();
  const Eigen::Vector3d c1 = a1 / n1;
  const Eigen::Vector3d v = a2 - c1.dot(a2) * c1;
  const double n2 = v.norm();
  const Eigen::Vector3d c2 = v / n2;
  for (int m = 0; m < 6; ++m) {
    Eigen::Vector3d da1 = Eigen::Vector3d::Zero(), da2 = Eigen::Vector3d::Zero();
    (m < 3 ? da1 : da2)[m % 3] = 1.0;
    const Eigen::Vector3d dc1 = (da1 - c1 * c1.dot(da1)) / n1;
    const Eigen::Vector3d dv = da2 - (dc1.dot(a2) + c1.dot(da2)) * c1 - c1.dot(a2) * dc1;
    const Eigen::Vector3d dc2 = (dv - c2 * c2.dot(dv)) / n2;
    Eigen::Matrix3d dg;
    dg << dc1, dc2, dc1.cross(c2) + c1.cross(dc2);
    const Eigen::Vector3d dy0 = dg * fw.pos[0];
    for (std::size_t i = 0; i < k; ++i) put(cs + 3 + m, i, dg * fw.pos[i], dy0);
  }
  return jac;
}

// Damped normal equations in the coordinates y = x T, where T centers and masks the columns and
// groups them along pins. All-zero columns are dropped; pins the step violates are merged and re-solved.
class StepSolver {
 public:
  StepSolver(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r, Eigen::SparseMatrix<double> center,
             std::vector<Pin> pins)
      : jac_(jac), r_(r), center_(std::move(center)), pins_(std::move(pins)),
        root_(static_cast<std::size_t>(jac.cols())) {
    std::iota(root_.begin(), root_.end(), Eigen::Index{0});
    build();
  }

  Eigen::VectorXd step(double mu) {
    const Eigen::Index n = jac_.cols();
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    for (std::size_t round = 0; round <= pins_.size(); ++round) {
      Eigen::MatrixXd a = h_;
      a.diagonal() += mu * diag_;
      const Eigen::VectorXd dr = -a.ldlt().solve(b_);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index s = slot_[static_cast<std::size_t>(find(i))];
        d[i] = s < 0 ? 0.0 : dr[s];
      }
      bool merged = false;
      for (const Pin& p : pins_) {
        if (d[p.a] >= d[p.c] || find(p.a) == find(p.c)) continue;
        root_[static_cast<std::size_t>(find(p.c))] = find(p.a);
        merged = true;
      }
      if (!merged) break;
      build();
    }
    return d;
  }

 private:
  Eigen::Index find(Eigen::Index i) const {
    while (root_[static_cast<std::size_t>(i)] != i) i = root_[static_cast<std::size_t>(i)];
    return i;
  }

  void build() {
    const Eigen::Index n = jac_.cols();
    Eigen::SparseMatrix<double> group(n, n);
    std::vector<Eigen::Triplet<double>> entries;
    for (Eigen::Index i = 0; i < n; ++i) entries.emplace_back(i, find(i), 1.0);
    group.setFromTriplets(entries.begin(), entries.end());
    const Eigen::SparseMatrix<double> t = center_ * group;

    Eigen::MatrixXd reduced(jac_.rows(), n);
    slot_.assign(static_cast<std::size_t>(n), -1);
    Eigen::Index m = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (find(i) != i) continue;
      auto col = reduced.col(m);
      col.setZero();
      for (Eigen::SparseMatrix<double>::InnerIterator it(t, i); it; ++it)
        if (it.value() != 0.0) col += it.value() * jac_.col(it.row());
      if (col.squaredNorm() > 0.0) slot_[static_cast<std::size_t>(i)] = m++;
    }
    const auto used = reduced.leftCols(m);
    h_ = Eigen::MatrixXd::Zero(m, m);
    h_.selfadjointView<Eigen::Lower>().rankUpdate(used.transpose());
    h_.triangularView<Eigen::StrictlyUpper>() = h_.transpose();
    b_ = used.transpose() * r_;
    const double floor = std::max(1e-9 * (m > 0 ? h_.diagonal().maxCoeff() : 0.0), 1e-300);
    diag_ = h_.diagonal().cwiseMax(floor);
  }

  const Eigen::MatrixXd& jac_;
  const Eigen::VectorXd& r_;
  Eigen::SparseMatrix<double> center_;
  std::vector<Pin> pins_;
  std::vector<Eigen::Index> root_;
  std::vector<Eigen::Index> slot_;
  Eigen::MatrixXd h_;
  Eigen::VectorXd b_;
  Eigen::VectorXd diag_;
};

// Levenberg-Marquardt on the simplex weights themselves. Each joint's step lives on the free
// set (support plus zero entries whose gradient points inward) and sums to zero there; trial
// weights are projected back with sparsemax.
RunOutcome projected_lm(const FitProblem& problem, CodeSet codes, Camera cam, int max_iters) {
  constexpr double kRelTol = 1e-12;
  RunOutcome out;
  out.codes = codes;
  out.camera = cam;
  out.loss = trial_loss(problem, codes, cam);
  if (max_iters <= 0 || !std::isfinite(out.loss)) return out;
  for (auto& c : codes) c = sparsemax(c).p;

  const Packing pk(codes, cam.scale);
  double f = out.loss;
  double mu = 1e-3;
  int iter = 0;
  while (iter < max_iters && f > 0.0) {
    ++iter;
    const Forward fw = forward(problem, codes, cam);
    const Eigen::VectorXd r = residuals(problem, fw, cam, nullptr);
    const Eigen::MatrixXd raw = geometric_jacobian(problem, fw, cam, pk, r.size());
    const Eigen::RowVectorXd g = r.transpose() * raw;

    // free[j][i]: entry i of joint j may move this iteration
    std::vector<std::vector<bool>> free(codes.size());
    for (std::size_t j = 0; j < codes.size(); ++j) {
      const Eigen::Index o = pk.offsets[j], n = codes[j].size();
      double nu = 0.0;
      int support = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (codes[j][i] > 0.0) {
          nu += g[o + i];
          ++support;
        }
      nu /= support;
      for (Eigen::Index i = 0; i < n; ++i) free[j].push_back(codes[j][i] > 0.0 || g[o + i] < nu);
    }
    std::vector<Pin> pins;
    for (std::size_t j = 0; j < codes.size(); ++j)
      for (const Pin& p : joint_pins(problem.dictionaries[j], SimplexPoint{codes[j]}))
        pins.push_back({pk.offsets[j] + p.a, pk.offsets[j] + p.c});

    // Columns of each joint are centered over its free set, so steps sum to zero there.
    std::optional<StepSolver> solver;
    auto rebuild = [&] {
      const Eigen::Index n = raw.cols();
      std::vector<Eigen::Triplet<double>> entries;
      for (std::size_t j = 0; j < codes.size(); ++j) {
        const Eigen::Index o = pk.offsets[j], size = codes[j].size();
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < size; ++i)
          if (free[j][static_cast<std::size_t>(i)]) idx.push_back(o + i);
        if (idx.size() < 2) continue;
        const double w = 1.0 / static_cast<double>(idx.size());
        for (const Eigen::Index c : idx)
          for (const Eigen::Index r : idx) entries.emplace_back(r, c, (r == c ? 1.0 : 0.0) - w);
      }
      for (Eigen::Index i = pk.code_size; i < n; ++i) entries.emplace_back(i, i, 1.0);
      Eigen::SparseMatrix<double> center(n, n);
      center.setFromTriplets(entries.begin(), entries.end());
      solver.emplace(raw, r, std::move(center), pins);
    };
    rebuild();

    bool accepted = false;
    CodeSet trial = codes;
    Camera tcam = cam;
    double fn = kInf;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::VectorXd x;
      for (;;) {
        const Eigen::VectorXd u = solver->step(mu);
        x = pk.pack(codes, cam);
        x.tail(9) += u.tail(9);
        bool shrunk = false;
        for (std::size_t j = 0; j < codes.size(); ++j) {
          const Eigen::Index o = pk.offsets[j], n = codes[j].size();
          double mean = 0.0, count = 0.0;
          for (Eigen::Index i = 0; i < n; ++i)
            if (free[j][static_cast<std::size_t>(i)]) {
              mean += u[o + i];
              count += 1.0;
            }
          mean /= count;
          for (Eigen::Index i = 0; i < n; ++i) {
            if (!free[j][static_cast<std::size_t>(i)]) continue;
            const double d = u[o + i] - mean;
            if (codes[j][i] == 0.0 && d <= 0.0) {
              free[j][static_cast<std::size_t>(i)] = false;
              shrunk = true;
            }
            x[o + i] += d;
          }
        }
        if (!shrunk) break;
        rebuild();
      }
      pk.unpack(x, trial, tcam);
      for (auto& c : trial) c = sparsemax(c).p;
      fn = trial_loss(problem, trial, tcam);
      if (fn < f) {
        accepted = true;
        mu = std::max(mu / 3.0, 1e-12);
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) break;
    const bool small = f - fn <= kRelTol * f;
    codes = std::move(trial);
    cam = tcam;
    f = fn;
    if (small) break;
  }

  out.codes = std::move(codes);
  out.camera = cam;
  out.loss = trial_loss(problem, out.codes, out.camera);
  out.iterations = iter;
  return out;
}

// Search with the 3D weight rescaled by s^2, then score with the true loss.
RunOutcome descend(const FitProblem& problem, CodeSet codes, Camera cam, int max_iters) {
  const double s2 = cam.scale * cam.scale;
  if (!problem.observed_3d || problem.lambda_3d <= 0 || problem.lambda_2d <= 0 || !(s2 > 1.0))
    return projected_lm(problem, std::move(codes), cam, max_iters);
  FitProblem balanced = problem;
  balanced.lambda_3d = problem.lambda_3d * problem.lambda_2d * s2;
  RunOutcome out = projected_lm(balanced, std::move(codes), cam, max_iters);
  out.loss = trial_loss(problem, out.codes, out.camera);
  return out;
}

Eigen::Matrix3d axis_rotation(int axis, double angle) {
  const Eigen::Vector3d a = Eigen::Vector3d::Unit(axis);
  return from_axis_angle({a, angle}).to_matrix();
}

// Bounding-box match of the projected pose against visible 2D keypoints.
Camera bbox_camera(const FitProblem& problem, const Keypoints3& points, const Eigen::Matrix3d& r) {
  Eigen::Vector2d omin = Eigen::Vector2d::Constant(kInf), omax = -omin;
  Eigen::Vector2d pmin = omin, pmax = -omin;
  int visible = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (!problem.visible_2d[static_cast<std::size_t>(i)]) continue;
    ++visible;
    const Eigen::Vector2d o = problem.observed_2d.row(i).transpose();
    const Eigen::Vector2d p = (r * points.row(i).transpose()).head<2>();
    omin = omin.cwiseMin(o);
    omax = omax.cwiseMax(o);
    pmin = pmin.cwiseMin(p);
    pmax = pmax.cwiseMax(p);
  }
  if (visible == 0) return Camera::from_rotation(1.0, Eigen::Vector2d::Zero(), r);
  const double pd = (pmax - pmin).norm();
  const double od = (omax - omin).norm();
  const double s = (pd > 1e-12 && od > 1e-12) ? od / pd : 1.0;
  const Eigen::Vector2d t = 0.5 * (omin + omax) - s * 0.5 * (pmin + pmax);
  return Camera::from_rotation(s, t, r);
}

RunOutcome run_restart(const FitProblem& problem, const FitConfig& config, int restart) {
  std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(restart)));
  std::normal_distribution<double> normal(0.0, config.init_logit_scale);
  CodeSet codes(problem.dictionaries.size());
  Keypoints3 points;
  for (int attempt = 0;; ++attempt) {
    for (std::size_t j = 0; j < codes.size(); ++j) {
      codes[j].resize(problem.dictionaries[j].size());
      for (auto& v : codes[j]) v = normal(rng);
    }
    try {
      points = forward_kinematics(problem.skeleton, pose_from_codes(problem, codes));
      break;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateCombination || attempt >= 100) throw;
    }
  }

  Camera best_cam;
  double best = kInf;
  for (int flip = 0; flip < 2; ++flip) {
    for (int yaw = 0; yaw < 8; ++yaw) {
      const Eigen::Matrix3d r =
          axis_rotation(0, flip * std::numbers::pi) * axis_rotation(1, yaw * std::numbers::pi / 4.0);
      const Camera cam = bbox_camera(problem, points, r);
      const double l = trial_loss(problem, codes, cam);
      if (l < best) {
        best = l;
        best_cam = cam;
      }
    }
  }
  return descend(problem, std::move(codes), best_cam, config.max_iters);
}

FitResult finish(const FitProblem& problem, RunOutcome run) {
  FitResult res;
  res.codes = std::move(run.codes);
  res.camera = run.camera;
  res.pose = pose_from_codes(problem, res.codes);
  res.losses = loss(problem, res.codes, res.camera);
  res.iterations = run.iterations;
  return res;
}

std::vector<bool> read_mask(const nlohmann::json& j, const char* key, std::size_t k) {
  if (!j.contains(key)) return std::vector<bool>(k, true);
  std::vector<bool> mask;
  for (const auto& v : j.at(key)) mask.push_back(v.is_boolean() ? v.get<bool>() : v.get<double>() != 0.0);
  return mask;
}

template <int Cols>
Eigen::Matrix<double, Eigen::Dynamic, Cols> read_points(const nlohmann::json& j) {
  Eigen::Matrix<double, Eigen::Dynamic, Cols> m(static_cast<Eigen::Index>(j.size()), Cols);
  Eigen::Index r = 0;
  for (const auto& row : j) {
    const auto v = row.get<std::vector<double>>();
    if (v.size() != Cols) fail(ErrorKind::Data, "keypoint rows must have " + std::to_string(Cols) + " entries");
    for (int c = 0; c < Cols; ++c) m(r, c) = v[static_cast<std::size_t>(c)];
    ++r;
  }
  return m;
}

}  // namespace

void FitProblem::validate() const {
  const std::size_t k = skeleton.size();
  require(dictionaries.size() + 1 == k, "need " + std::to_string(k - 1) + " dictionaries, got " +
                                            std::to_string(dictionaries.size()));
  for (const Dictionary& d : dictionaries) {
    require(d.mode == AtomMode::Quaternion, "fit dictionaries must hold quaternion atoms");
    d.validate();
  }
  require(observed_2d.rows() == static_cast<Eigen::Index>(k), "observed_2d must have one row per joint");
  require(visible_2d.size() == k, "visibility mask must have one entry per joint");
  require(observed_2d.allFinite(), "observed_2d has non-finite entries");
  bool full_3d = false;
  if (observed_3d) {
    require(observed_3d->rows() == static_cast<Eigen::Index>(k), "observed_3d must have one row per joint");
    require(visible_3d.size() == k, "3D visibility mask must have one entry per joint");
    require(observed_3d->allFinite(), "observed_3d has non-finite entries");
    full_3d = std::all_of(visible_3d.begin(), visible_3d.end(), [](bool b) { return b; });
  }
  require(std::isfinite(lambda_2d) && lambda_2d >= 0 && std::isfinite(lambda_3d) && lambda_3d >= 0,
          "loss weights must be finite and nonnegative");
  const auto visible = std::count(visible_2d.begin(), visible_2d.end(), true);
  if (visible < 4 && !full_3d)
    fail(ErrorKind::UnderConstrained, "only " + std::to_string(visible) +
                                          " visible 2D joints and no complete 3D observations (need 4)");
}

LossTerms loss(const FitProblem& problem, const CodeSet& codes, const Camera& camera) {
  return evaluate(problem, codes, camera, nullptr, nullptr).terms;
}

LossTerms loss_and_gradient(const FitProblem& problem, const CodeSet& codes, const Camera& camera,
                            LossGradient& grad) {
  return evaluate(problem, codes, camera, &grad, nullptr).terms;
}

Pose pose_from_codes(const FitProblem& problem, const CodeSet& codes) {
  require(codes.size() == problem.dictionaries.size(), "code count does not match dictionary count");
  Pose pose;
  pose.rotations.reserve(codes.size());
  for (std::size_t j = 0; j < codes.size(); ++j) {
    const SimplexPoint code = sparsemax(codes[j]);
    pose.rotations.push_back(
        nlerp(std::span<const double>(code.p.data(), code.p.size()), problem.dictionaries[j].atoms));
  }
  return pose;
}

FitResult fit(const FitProblem& problem, const FitConfig& config) {
  problem.validate();
  require(config.restarts >= 1, "fit needs at least one restart");
  require(config.max_iters >= 0, "max_iters must be nonnegative");
  require(config.init_logit_scale > 0 && std::isfinite(config.init_logit_scale), "init_logit_scale must be positive");

  std::vector<RunOutcome> runs(static_cast<std::size_t>(config.restarts));
  parallel_for(runs.size(), [&](std::size_t r) { runs[r] = run_restart(problem, config, static_cast<int>(r)); });

  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].loss < runs[best].loss) best = r;
  if (!std::isfinite(runs[best].loss)) fail(ErrorKind::Numeric, "every fit restart ended at a non-finite loss");

  std::vector<double> losses;
  for (const auto& r : runs) losses.push_back(r.loss);
  FitResult res = finish(problem, std::move(runs[best]));
  res.restart = static_cast<int>(best);
  res.restart_losses = std::move(losses);
  return res;
}

FitResult refine(const FitProblem& problem, CodeSet codes, Camera camera, int max_iters) {
  problem.validate();
  require(max_iters >= 0, "max_iters must be nonnegative");
  FitResult res = finish(problem, descend(problem, std::move(codes), camera, max_iters));
  res.restart_losses = {res.losses.total};
  return res;
}

double procrustes_mean_error(const Keypoints3& predicted, const Keypoints3& reference) {
  require(predicted.rows() == reference.rows() && predicted.rows() > 0, "Procrustes needs matching nonempty point sets");
  const auto n = static_cast<double>(predicted.rows());
  const Eigen::RowVector3d mp = predicted.colwise().mean();
  const Eigen::RowVector3d mr = reference.colwise().mean();
  const Keypoints3 p = predicted.rowwise() - mp;
  const Keypoints3 r = reference.rowwise() - mr;
  const Eigen::Matrix3d cov = r.transpose() * p / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d[2] = -1.0;
  const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double var = p.squaredNorm() / n;
  const double s = var > 0 ? svd.singularValues().dot(d) / var : 1.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    total += (s * rot * p.row(i).transpose() - r.row(i).transpose()).norm();
  return total / n;
}

FitProblem problem_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& s) {
    const std::filesystem::path p(s);
    return p.is_absolute() ? p : base_dir / p;
  };
  FitProblem prob;
  try {
    const auto& sk = j.value("skeleton", nlohmann::json("default"));
    if (sk.is_string())
      prob.skeleton = sk.get<std::string>() == "default" ? default_skeleton() : load_skeleton(resolve(sk.get<std::string>()));
    else
      prob.skeleton = Skeleton::from_json(sk);
    for (const auto& d : j.at("dictionaries"))
      prob.dictionaries.push_back(d.is_string() ? load_dictionary(resolve(d.get<std::string>())) : dictionary_from_json(d));
    const std::size_t k = prob.skeleton.size();
    prob.observed_2d = read_points<2>(j.at("keypoints_2d"));
    prob.visible_2d = read_mask(j, "visibility", k);
    if (j.contains("keypoints_3d") && !j.at("keypoints_3d").is_null()) {
      prob.observed_3d = read_points<3>(j.at("keypoints_3d"));
      prob.visible_3d = read_mask(j, "visibility_3d", k);
    }
    prob.lambda_2d = j.value("lambda_2d", 1.0);
    prob.lambda_3d = j.value("lambda_3d", 1.0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed fit problem: ") + e.what());
  }
  try {
    prob.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidInput) fail(ErrorKind::Data, e.what());
    throw;
  }
  return prob;
}

FitProblem load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read problem file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
  return problem_from_json(j, path.parent_path());
}

nlohmann::json to_json(const FitResult& result, const FitProblem& problem) {
  nlohmann::json codes = nlohmann::json::array(), coeffs = nlohmann::json::array(), pose = nlohmann::json::array();
  for (const auto& c : result.codes) {
    codes.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    const SimplexPoint p = sparsemax(c);
    coeffs.push_back(std::vector<double>(p.p.data(), p.p.data() + p.p.size()));
  }
  for (const auto& q : result.pose.rotations) pose.push_back({q.w(), q.x(), q.y(), q.z()});
  const Keypoints3 x3 = forward_kinematics(problem.skeleton, result.pose, result.camera.rotation());
  const Keypoints2 x2 = project(forward_kinematics(problem.skeleton, result.pose), result.camera);
  nlohmann::json k3 = nlohmann::json::array(), k2 = nlohmann::json::array();
  for (Eigen::Index i = 0; i < x3.rows(); ++i) {
    k3.push_back({x3(i, 0), x3(i, 1), x3(i, 2)});
    k2.push_back({x2(i, 0), x2(i, 1)});
  }
  return {
      {"joint_names", problem.skeleton.articulated_names()},
      {"codes", codes},
      {"coefficients", coeffs},
      {"pose", pose},
      {"camera",
       {{"scale", result.camera.scale},
        {"translation", {result.camera.translation.x(), result.camera.translation.y()}},
        {"r6", result.camera.r6}}},
      {"losses", {{"total", result.losses.total}, {"l2d", result.losses.l2d}, {"l3d", result.losses.l3d}}},
      {"iterations", result.iterations},
      {"restart", result.restart},
      {"restart_losses", result.restart_losses},
      {"keypoints_3d", k3},
      {"keypoints_2d", k2},
  };
}

}  // namespace kinedict
