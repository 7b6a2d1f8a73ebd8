// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "kinedict/cluster.hpp"
#include "kinedict/fitting.hpp"
#include "kinedict/kinematics.hpp"
#include "kinedict/obdl.hpp"
#include "kinedict/quat.hpp"
#include "kinedict/simplex.hpp"
#include "kinedict/synth.hpp"
#include "oracles.hpp"

using namespace kinedict;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (auto& v : z) v = normal(rng);
  return z;
}

Outcome sparsemax_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(2, 8);
  double worst = 0.0;
  bool invariants = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::VectorXd z = random_vector(rng, dim(rng));
    const SimplexPoint p = sparsemax(z);
    worst = std::max(worst, (p.p - oracle::simplex_projection(z)).cwiseAbs().maxCoeff());
    invariants = invariants && (p.p.array() >= 0.0).all() && std::abs(p.p.sum() - 1.0) <= 1e-12;
  }
  const double t = seconds_since(t0);
  return {worst < 1e-8 && invariants && t < 5.0,
          "max |p - oracle| = " + fmt("%.2e", worst) + ", invariants " + (invariants ? "hold" : "violated") +
              ", " + fmt("%.2f s", t)};
}

Outcome jacobian_fd() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(2, 8);
  const double h = 1e-6;
  int points = 0;
  double worst = 0.0;
  while (points < 200) {
    const Eigen::VectorXd z = random_vector(rng, dim(rng));
    const auto support = sparsemax(z).support();
    bool stable = true;
    Eigen::MatrixXd fd(z.size(), z.size());
    for (Eigen::Index i = 0; i < z.size() && stable; ++i) {
      Eigen::VectorXd zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const SimplexPoint pp = sparsemax(zp), pm = sparsemax(zm);
      stable = pp.support() == support && pm.support() == support;
      fd.col(i) = (pp.p - pm.p) / (2 * h);
    }
    if (!stable) continue;
    ++points;
    const Eigen::MatrixXd j = sparsemax_jacobian(z);
    worst = std::max(worst, (j - fd).norm() / std::max(j.norm(), 1e-12));
  }
  return {worst < 1e-5, "max relative error " + fmt("%.2e", worst) + " over 200 support-stable points"};
}

Outcome lerp_vs_slerp() {
  std::mt19937_64 rng(3);
  const UnitQuaternion q1 = UnitQuaternion::from_vector(random_quaternion(rng));
  std::normal_distribution<double> normal;
  Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
  axis.normalize();
  std::vector<double> dev;
  for (int deg = 1; deg <= 30; ++deg) {
    const UnitQuaternion q2 = q1 * from_axis_angle({axis, deg * std::numbers::pi / 180.0});
    const Eigen::Matrix4Xd atoms = to_columns(std::vector<UnitQuaternion>{q1, q2});
    double worst = 0.0;
    for (int g = 0; g <= 20; ++g) {
      const double x1 = g / 20.0;
      const double w[2] = {x1, 1.0 - x1};
      const UnitQuaternion n = nlerp(std::span<const double>(w, 2), atoms);
      worst = std::max(worst, geodesic_distance(n, slerp(x1, q1, q2)) * 180.0 / std::numbers::pi);
    }
    dev.push_back(worst);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < dev.size(); ++i) monotone = monotone && dev[i] >= dev[i - 1];
  return {dev[9] < 0.05 && monotone,
          "max deviation at 10 deg " + fmt("%.4f deg", dev[9]) + ", at 30 deg " + fmt("%.4f deg", dev[29]) +
              (monotone ? ", non-decreasing" : ", NOT monotone")};
}

Outcome update_fixed_point() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Dictionary d = random_dictionary(4, 16, AtomMode::Quaternion, rng);
    const Eigen::MatrixXd before = d.atoms;
    LearnerState state = make_learner(d, 0.9, 5);
    update_dictionary(state, before);
    worst = std::max(worst, (state.dict.atoms - before).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "max atom change " + fmt("%.2e", worst)};
}

Outcome obdl_clusters() {
  const auto t0 = std::chrono::steady_clock::now();
  ClusterParams cp;
  cp.clusters = 8;
  cp.spread_deg = 2.0;
  cp.samples = 1000;
  const SynthOutput so = synth_clusters(cp, 11);
  LearnConfig lc;
  lc.atoms = 8;
  lc.steps = 200;
  lc.batch_size = 64;
  lc.seed = 12;
  const Dictionary d = learn(so.data.joints[0], lc);
  const Dictionary again = learn(so.data.joints[0], lc);
  const double t = seconds_since(t0);
  double worst = 0.0;
  for (const auto& c : so.truth["joints"][0]["centers"]) {
    const UnitQuaternion center = UnitQuaternion::from_wxyz(c[0], c[1], c[2], c[3]);
    double best = std::numbers::pi;
    for (Eigen::Index j = 0; j < d.size(); ++j) best = std::min(best, geodesic_distance(center, d.quaternion(j)));
    worst = std::max(worst, best * 180.0 / std::numbers::pi);
  }
  const bool same = d.atoms == again.atoms;
  return {worst <= 3.0 && same && t < 30.0, "worst center-to-atom " + fmt("%.3f deg", worst) +
                                                (same ? ", deterministic" : ", NOT deterministic") +
                                                ", " + fmt("%.2f s", t / 2) + " per run"};
}

Outcome euclidean_planted() {
  PlantedParams pp;
  pp.dim = 10;
  pp.atoms = 12;
  pp.support = 3;
  pp.noise = 0.01;
  pp.samples = 2000;
  const SynthOutput so = synth_planted_euclidean(pp, 21);
  Eigen::MatrixXd truth(pp.dim, pp.atoms);
  for (int r = 0; r < pp.dim; ++r)
    for (int c = 0; c < pp.atoms; ++c) truth(r, c) = so.truth["dictionary"][r][c];
  LearnConfig lc;
  lc.atoms = pp.atoms;
  lc.mode = AtomMode::Euclidean;
  lc.batch_size = 128;
  lc.steps = 200;
  lc.seed = 22;
  const Dictionary d = learn(so.data.joints[0], lc);
  const Eigen::MatrixXd cosines = (truth.transpose() * d.atoms).cwiseAbs();
  const double mean = oracle::best_assignment_mean(cosines);
  return {mean >= 0.95, "mean matched |cosine| " + fmt("%.4f", mean)};
}

Outcome coverage_direction() {
  int wins = 0;
  std::string ratios;
  for (int seed = 0; seed < 10; ++seed) {
    ArcParams ap;
    ap.arcs = 4;
    ap.arc_deg = 60.0;
    ap.samples = 1200;
    const SynthOutput so = synth_arcs(ap, 100 + static_cast<std::uint64_t>(seed));
    const Eigen::MatrixXd& all = so.data.joints[0];
    Eigen::MatrixXd train(4, all.cols() / 2 + all.cols() % 2), test(4, all.cols() / 2);
    for (Eigen::Index c = 0; c < all.cols(); ++c) (c % 2 ? test : train).col(c / 2) = all.col(c);
    LearnConfig lc;
    lc.atoms = 16;
    lc.batch_size = 64;
    lc.steps = 200;
    lc.seed = 200 + static_cast<std::uint64_t>(seed);
    const Dictionary ob = learn(train, lc);
    const Dictionary km = kmeans_quat(train, 16, 300 + static_cast<std::uint64_t>(seed));
    CoverageConfig cc;
    cc.threshold_deg = 5.0;
    const double a = coverage(ob, test, cc).ratio;
    const double b = coverage(km, test, cc).ratio;
    wins += a >= b;
    ratios += (seed ? " " : "") + fmt("%.3f", a) + "/" + fmt("%.3f", b);
  }
  return {wins >= 8, "OBDL >= k-means in " + std::to_string(wins) + "/10 seeds (obdl/kmeans: " + ratios + ")"};
}

Outcome fk_oracle() {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Pose pose;
    std::vector<Eigen::Vector4d> raw;
    for (std::size_t j = 0; j + 1 < skel.size(); ++j) {
      raw.push_back(random_quaternion(rng));
      pose.rotations.push_back(UnitQuaternion::from_vector(raw.back()));
    }
    const Eigen::Matrix3d root = oracle::rotation(random_quaternion(rng));
    const Keypoints3 a = forward_kinematics(skel, pose, root);
    const Keypoints3 b = oracle::forward_kinematics(skel, raw, root);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, "max coordinate difference " + fmt("%.2e", worst) + " over 100 poses"};
}

Outcome weak_perspective() {
  Keypoints3 x(1, 3);
  x << 1, 2, 3;
  const Keypoints2 y = project(x, Camera::from_rotation(2.0, {1.0, 1.0}, Eigen::Matrix3d::Identity()));
  const bool example = y(0, 0) == 3.0 && y(0, 1) == 5.0;

  // Dyadic data and signed-permutation rotations keep every operation exact.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> small(-64, 64);
  std::uniform_int_distribution<int> eighth(0, 8);
  std::vector<int> perm{0, 1, 2};
  bool affine = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
    for (int c = 0; c < 3; ++c) r(perm[static_cast<std::size_t>(c)], c) = small(rng) < 0 ? -1.0 : 1.0;
    if (r.determinant() < 0) r.col(2) = -r.col(2);
    const Camera cam = Camera::from_rotation(small(rng) / 4.0 + 32.0, {small(rng) / 8.0, small(rng) / 8.0}, r);
    Keypoints3 a(24, 3), b(24, 3);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (int c = 0; c < 3; ++c) {
        a(i, c) = small(rng) / 16.0;
        b(i, c) = small(rng) / 16.0;
      }
    const double alpha = eighth(rng) / 8.0;
    const Keypoints2 lhs = project(alpha * a + (1 - alpha) * b, cam);
    const Keypoints2 rhs = alpha * project(a, cam) + (1 - alpha) * project(b, cam);
    affine = affine && lhs == rhs;
  }
  return {example && affine, std::string("(1,2,3), s=2, t=(1,1) -> (") + fmt("%g", y(0, 0)) + "," +
                                 fmt("%g", y(0, 1)) + "); affinity " + (affine ? "exact" : "NOT exact") +
                                 " on 100 cases"};
}

Outcome fit_self_consistency() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(10);
  const std::size_t k = default_skeleton().size();
  double worst = 0.0, mean = 0.0;
  bool constraints = true;
  for (int problem = 0; problem < 20; ++problem) {
    std::vector<Dictionary> dicts;
    for (std::size_t j = 0; j + 1 < k; ++j) dicts.push_back(oracle::cone_dictionary(8, 60.0, rng));
    const SynthProblem sp = synth_problem(dicts, {}, 1000 + static_cast<std::uint64_t>(problem));
    FitConfig fc;
    fc.seed = 2000 + static_cast<std::uint64_t>(problem);
    const FitResult res = fit(sp.problem, fc);
    for (std::size_t j = 0; j < res.codes.size(); ++j) {
      const SimplexPoint p = sparsemax(res.codes[j]);
      constraints = constraints && (p.p.array() >= 0.0).all() && std::abs(p.p.sum() - 1.0) <= 1e-12;
      constraints = constraints && res.pose.rotations[j] == UnitQuaternion::from_vector(
                                                               reconstruct(sp.problem.dictionaries[j], p));
    }
    const Keypoints3 pred = forward_kinematics(sp.problem.skeleton, res.pose, res.camera.rotation());
    const double err = procrustes_mean_error(pred, sp.points_3d) * 1000.0;
    worst = std::max(worst, err);
    mean += err / 20.0;
  }
  const double t = seconds_since(t0);
  return {worst < 5.0 && constraints && t < 60.0,
          "worst PA error " + fmt("%.3f mm", worst) + ", mean " + fmt("%.3f mm", mean) + ", simplex " +
              (constraints ? "held" : "VIOLATED") + ", " + fmt("%.1f s", t) + " for 20 problems"};
}

int run(const std::string& cmd) {
  return std::system((cmd + " >/dev/null 2>&1").c_str());
}

std::map<std::string, std::string> snapshot_json(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "kinedict_acceptance_cli";
  const std::string cli = KINEDICT_CLI;
  const std::string d = dir.string();
  const std::vector<std::string> steps = {
      cli + " --seed 5 synth --generator clusters --joints 23 --samples 300 --clusters 6 --spread-deg 8"
            " --center-max-deg 60 --out " + d + "/data",
      cli + " --seed 6 learn --data " + d + "/data/data.csv --all-joints --atoms 8 --batch-size 32 --steps 30"
            " --out " + d + "/dicts",
      cli + " --seed 7 coverage --data " + d + "/data/data.csv --all-joints --dictionaries " + d +
          "/dicts/dictionaries.json --out " + d + "/coverage.json",
      cli + " --seed 8 synth --generator problem --dictionaries " + d + "/dicts/dictionaries.json --count 1 --out " +
          d + "/problems",
      cli + " --seed 9 fit --problem " + d + "/problems/problem_0.json --restarts 2 --max-iters 100 --out " + d +
          "/fit.json",
  };
  std::map<std::string, std::string> runs[2];
  for (auto& snap : runs) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& s : steps)
      if (run(s) != 0) return {false, "command failed: " + s};
    snap = snapshot_json(dir);
  }
  fs::remove_all(dir);
  const bool same = runs[0] == runs[1] && !runs[0].empty();
  return {same, std::to_string(runs[0].size()) + " JSON artifacts " + (same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sparsemax matches support-enumeration oracle", sparsemax_oracle},
      {"sparsemax Jacobian matches central differences", jacobian_fd},
      {"nlerp approximates slerp", lerp_vs_slerp},
      {"dictionary update fixed point at reset state", update_fixed_point},
      {"OBDL recovers planted quaternion clusters", obdl_clusters},
      {"Euclidean planted dictionary recovery", euclidean_planted},
      {"OBDL coverage >= k-means coverage on arcs", coverage_direction},
      {"FK matches homogeneous-matrix oracle", fk_oracle},
      {"weak-perspective projection exactness", weak_perspective},
      {"fitting self-consistency", fit_self_consistency},
      {"CLI pipeline determinism", cli_determinism},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
