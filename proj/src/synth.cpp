#include "kinedict/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kinedict/error.hpp"
#include "kinedict/quat.hpp"

namespace kinedict {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::vector<std::string> joint_names(int joints) {
  std::vector<std::string> names;
  for (int j = 0; j < joints; ++j) names.push_back("joint" + std::to_string(j));
  return names;
}

nlohmann::json quat_list(const std::vector<Eigen::Vector4d>& qs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& q : qs) out.push_back({q[0], q[1], q[2], q[3]});
  return out;
}

nlohmann::json rows_json(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    out.push_back(row);
  }
  return out;
}

}  // namespace

Eigen::Vector4d random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::Vector4d v;
  do {
    for (auto& x : v) x = normal(rng);
  } while (v.norm() < 1e-6);
  return UnitQuaternion::from_vector(v).coeffs();
}

Eigen::Vector4d perturb(const Eigen::Vector4d& q, double rms_rad, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, rms_rad / std::sqrt(3.0));
  const Eigen::Vector3d delta(normal(rng), normal(rng), normal(rng));
  return (UnitQuaternion::from_vector(q) * from_rotation_vector(delta)).coeffs();
}

SynthOutput synth_clusters(const ClusterParams& p, std::uint64_t seed) {
  require(p.clusters >= 1 && p.samples >= 1 && p.joints >= 1, "clusters, samples and joints must be positive");
  require(std::isfinite(p.spread_deg) && p.spread_deg >= 0, "spread must be finite and nonnegative");
  require(p.center_max_deg > 0 && p.center_max_deg <= 180, "center_max_deg must lie in (0, 180]");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::MatrixXd> blocks;
  nlohmann::json joints = nlohmann::json::array();
  for (int j = 0; j < p.joints; ++j) {
    std::vector<Eigen::Vector4d> centers;
    for (int c = 0; c < p.clusters; ++c) {
      if (p.center_max_deg >= 180.0) {
        centers.push_back(random_quaternion(rng));
        continue;
      }
      std::normal_distribution<double> normal;
      std::uniform_real_distribution<double> angle(0.0, p.center_max_deg * kDegToRad);
      Eigen::Vector3d axis;
      do {
        axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
      } while (axis.norm() < 1e-6);
      centers.push_back(from_axis_angle({axis, angle(rng)}).coeffs());
    }
    Eigen::MatrixXd block(4, p.samples);
    std::vector<int> label(static_cast<std::size_t>(p.samples));
    std::uniform_int_distribution<int> pick(0, p.clusters - 1);
    for (int s = 0; s < p.samples; ++s) {
      label[static_cast<std::size_t>(s)] = pick(rng);
      block.col(s) = perturb(centers[static_cast<std::size_t>(label[static_cast<std::size_t>(s)])],
                             p.spread_deg * kDegToRad, rng);
    }
    blocks.push_back(std::move(block));
    joints.push_back({{"centers", quat_list(centers)}, {"labels", label}});
  }
  SynthOutput out{make_rotation_dataset(joint_names(p.joints), std::move(blocks)), {}};
  out.truth = {{"generator", "clusters"},
               {"seed", seed},
               {"clusters", p.clusters},
               {"samples", p.samples},
               {"spread_deg", p.spread_deg},
               {"center_max_deg", p.center_max_deg},
               {"joints", joints}};
  return out;
}

SynthOutput synth_arcs(const ArcParams& p, std::uint64_t seed) {
  require(p.arcs >= 1 && p.samples >= 1 && p.joints >= 1, "arcs, samples and joints must be positive");
  require(std::isfinite(p.arc_deg) && p.arc_deg >= 0 && p.arc_deg <= 180, "arc length must lie in [0, 180] degrees");
  require(std::isfinite(p.jitter_deg) && p.jitter_deg >= 0, "jitter must be finite and nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::MatrixXd> blocks;
  nlohmann::json joints = nlohmann::json::array();
  for (int j = 0; j < p.joints; ++j) {
    std::vector<Eigen::Vector4d> starts, ends;
    for (int a = 0; a < p.arcs; ++a) {
      const Eigen::Vector4d q0 = random_quaternion(rng);
      Eigen::Vector3d axis;
      do {
        axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
      } while (axis.norm() < 1e-6);
      const UnitQuaternion step = from_axis_angle({axis, p.arc_deg * kDegToRad});
      starts.push_back(q0);
      ends.push_back((UnitQuaternion::from_vector(q0) * step).coeffs());
    }
    Eigen::MatrixXd block(4, p.samples);
    std::vector<int> label(static_cast<std::size_t>(p.samples));
    std::uniform_int_distribution<int> pick(0, p.arcs - 1);
    for (int s = 0; s < p.samples; ++s) {
      const int a = pick(rng);
      label[static_cast<std::size_t>(s)] = a;
      const double t = unit(rng);
      const UnitQuaternion q = slerp(t, UnitQuaternion::from_vector(starts[static_cast<std::size_t>(a)]),
                                     UnitQuaternion::from_vector(ends[static_cast<std::size_t>(a)]));
      block.col(s) = p.jitter_deg > 0 ? perturb(q.coeffs(), p.jitter_deg * kDegToRad, rng) : q.coeffs();
    }
    blocks.push_back(std::move(block));
    joints.push_back({{"starts", quat_list(starts)}, {"ends", quat_list(ends)}, {"labels", label}});
  }
  SynthOutput out{make_rotation_dataset(joint_names(p.joints), std::move(blocks)), {}};
  out.truth = {{"generator", "arcs"},   {"seed", seed},         {"arcs", p.arcs},  {"samples", p.samples},
               {"arc_deg", p.arc_deg}, {"jitter_deg", p.jitter_deg}, {"joints", joints}};
  return out;
}

SynthOutput synth_planted_euclidean(const PlantedParams& p, std::uint64_t seed) {
  require(p.dim >= 1 && p.atoms >= 1 && p.samples >= 1, "dim, atoms and samples must be positive");
  require(p.support >= 1 && p.support <= p.atoms, "support must lie in [1, atoms]");
  require(std::isfinite(p.noise) && p.noise >= 0, "noise must be finite and nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::exponential_distribution<double> expo(1.0);
  Eigen::MatrixXd d(p.dim, p.atoms);
  for (Eigen::Index c = 0; c < d.cols(); ++c) {
    do {
      for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, c) = normal(rng);
    } while (d.col(c).norm() < 1e-6);
    d.col(c).normalize();
  }
  Eigen::MatrixXd x(p.dim, p.samples);
  Eigen::MatrixXd codes = Eigen::MatrixXd::Zero(p.atoms, p.samples);
  std::vector<int> idx(static_cast<std::size_t>(p.atoms));
  for (int s = 0; s < p.samples; ++s) {
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < p.support; ++k) {
      std::uniform_int_distribution<int> pick(k, p.atoms - 1);
      std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    double total = 0.0;
    for (int k = 0; k < p.support; ++k) {
      const double w = p.support == 1 ? 1.0 : expo(rng);
      codes(idx[static_cast<std::size_t>(k)], s) = w;
      total += w;
    }
    codes.col(s) /= total;
    x.col(s) = d * codes.col(s);
    if (p.noise > 0)
      for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, s) += p.noise * normal(rng);
  }
  SynthOutput out{make_vector_dataset(x), {}};
  out.truth = {{"generator", "planted-euclidean"},
               {"seed", seed},
               {"dim", p.dim},
               {"atoms", p.atoms},
               {"samples", p.samples},
               {"support", p.support},
               {"noise", p.noise},
               {"dictionary", rows_json(d)}};
  return out;
}

SynthProblem synth_problem(const std::vector<Dictionary>& dictionaries, const ProblemParams& params,
                           std::uint64_t seed) {
  require(params.support >= 1, "support must be positive");
  require(params.image_size > 0, "image size must be positive");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  SynthProblem sp;
  sp.problem.dictionaries = dictionaries;
  const std::size_t k = sp.problem.skeleton.size();
  require(dictionaries.size() + 1 == k, "need one dictionary per articulated joint");
  for (const Dictionary& d : dictionaries) {
    const auto n = static_cast<int>(d.size());
    const int support = std::min(params.support, n);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Eigen::VectorXd code = Eigen::VectorXd::Zero(n);
    double total = 0.0;
    for (int s = 0; s < support; ++s) {
      std::uniform_int_distribution<int> pick(s, n - 1);
      std::swap(idx[static_cast<std::size_t>(s)], idx[static_cast<std::size_t>(pick(rng))]);
      const double w = expo(rng) + 0.05;
      code[idx[static_cast<std::size_t>(s)]] = w;
      total += w;
    }
    sp.codes.push_back(code / total);
  }

  const Eigen::Matrix3d r = from_axis_angle({Eigen::Vector3d::UnitX(), std::numbers::pi}).to_matrix() *
                            from_axis_angle({Eigen::Vector3d::UnitY(), unit(rng) * std::numbers::pi / 4}).to_matrix() *
                            from_axis_angle({Eigen::Vector3d::UnitX(), unit(rng) * std::numbers::pi / 12}).to_matrix();
  const Keypoints3 body = forward_kinematics(sp.problem.skeleton, pose_from_codes(sp.problem, sp.codes));
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = -lo;
  for (Eigen::Index i = 0; i < body.rows(); ++i) {
    const Eigen::Vector2d y = (r * body.row(i).transpose()).head<2>();
    lo = lo.cwiseMin(y);
    hi = hi.cwiseMax(y);
  }
  const double s = 0.8 * params.image_size / std::max((hi - lo).maxCoeff(), 1e-9);
  const Eigen::Vector2d t = Eigen::Vector2d::Constant(params.image_size / 2) - s * 0.5 * (lo + hi);
  sp.camera = Camera::from_rotation(s, t, r);

  sp.problem.observed_2d = project(body, sp.camera);
  sp.problem.visible_2d.assign(k, true);
  sp.points_3d = forward_kinematics(sp.problem.skeleton, pose_from_codes(sp.problem, sp.codes), sp.camera.rotation());
  if (params.with_3d) {
    sp.problem.observed_3d = sp.points_3d;
    sp.problem.visible_3d.assign(k, true);
  }
  sp.problem.validate();
  return sp;
}

nlohmann::json problem_to_json(const FitProblem& problem, const std::vector<std::string>& dictionary_paths) {
  nlohmann::json dicts = nlohmann::json::array();
  if (dictionary_paths.empty()) {
    for (const auto& d : problem.dictionaries) dicts.push_back(to_json(d));
  } else {
    require(dictionary_paths.size() == problem.dictionaries.size(), "one dictionary path per joint");
    for (const auto& p : dictionary_paths) dicts.push_back(p);
  }
  nlohmann::json j = {{"skeleton", problem.skeleton.to_json()},
                      {"dictionaries", dicts},
                      {"keypoints_2d", rows_json(problem.observed_2d)},
                      {"visibility", problem.visible_2d},
                      {"lambda_2d", problem.lambda_2d},
                      {"lambda_3d", problem.lambda_3d}};
  if (problem.observed_3d) {
    j["keypoints_3d"] = rows_json(*problem.observed_3d);
    j["visibility_3d"] = problem.visible_3d;
  }
  return j;
}

}  // namespace kinedict
