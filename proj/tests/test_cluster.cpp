#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "kinedict/cluster.hpp"
#include "kinedict/error.hpp"
#include "kinedict/obdl.hpp"
#include "kinedict/synth.hpp"

using namespace kinedict;

namespace {

Eigen::Vector4d rot(const Eigen::Vector3d& axis, double deg) {
  return from_axis_angle({axis.normalized(), deg * std::numbers::pi / 180.0}).coeffs();
}

double inertia_oracle(const Eigen::MatrixXd& centers, const Eigen::MatrixXd& data) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < data.cols(); ++k) {
    double best = INFINITY;
    for (Eigen::Index j = 0; j < centers.cols(); ++j) {
      const double c = std::min(1.0, std::abs(centers.col(j).dot(data.col(k))));
      best = std::min(best, 2.0 * std::acos(c));
    }
    total += best * best;
  }
  return total;
}

// Plain Lloyd iterations from random distinct samples, best of `restarts` by geodesic inertia.
double lloyd_oracle(const Eigen::MatrixXd& data, Eigen::Index k, int restarts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.cols() - 1);
  double best = INFINITY;
  for (int r = 0; r < restarts; ++r) {
    Eigen::MatrixXd centers(4, k);
    for (Eigen::Index j = 0; j < k; ++j) centers.col(j) = data.col(pick(rng));
    for (int it = 0; it < 100; ++it) {
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(4, k);
      for (Eigen::Index s = 0; s < data.cols(); ++s) {
        const Eigen::VectorXd dots = centers.transpose() * data.col(s);
        Eigen::Index a = 0;
        dots.cwiseAbs().maxCoeff(&a);
        sums.col(a) += dots[a] < 0 ? Eigen::Vector4d(-data.col(s)) : Eigen::Vector4d(data.col(s));
      }
      for (Eigen::Index j = 0; j < k; ++j)
        if (sums.col(j).norm() > 0) centers.col(j) = sums.col(j).normalized();
    }
    best = std::min(best, inertia_oracle(centers, data));
  }
  return best;
}

}  // namespace

TEST_CASE("k-means on distinct points returns those points") {
  Eigen::MatrixXd data(4, 4);
  data << rot({0, 0, 1}, 10), rot({0, 1, 0}, 80), rot({1, 0, 0}, 150), rot({1, 1, 1}, 45);
  const Dictionary d = kmeans_quat(data, 4, 3);
  CHECK(d.provenance.method == "kmeans");
  for (Eigen::Index s = 0; s < 4; ++s) {
    double best = INFINITY;
    for (Eigen::Index j = 0; j < 4; ++j) best = std::min(best, (d.atoms.col(j) - data.col(s)).norm());
    CHECK(best < 1e-12);
  }
}

TEST_CASE("antipodal copies of one rotation collapse to one centroid") {
  std::mt19937_64 rng(41);
  const Eigen::Vector4d center = rot({1, 2, 0}, 60);
  Eigen::MatrixXd data(4, 40);
  for (Eigen::Index s = 0; s < 40; ++s) {
    const Eigen::Vector4d q = perturb(center, 0.2 * std::numbers::pi / 180.0, rng);
    data.col(s) = UnitQuaternion::from_vector(s % 2 ? Eigen::Vector4d(-q) : q).coeffs();
  }
  const Dictionary d = kmeans_quat(data, 1, 5);
  CHECK(geodesic_distance(d.quaternion(0), UnitQuaternion::from_vector(center)) < 0.01);
}

TEST_CASE("k-means inertia is close to a multi-restart Lloyd oracle") {
  ClusterParams cp;
  cp.clusters = 8;
  cp.samples = 400;
  const SynthOutput so = synth_clusters(cp, 11);
  const Eigen::MatrixXd& data = so.data.joints[0];
  const Dictionary d = kmeans_quat(data, 8, 12);
  const double ours = geodesic_inertia(d, data);
  CHECK(ours == doctest::Approx(inertia_oracle(d.atoms, data)).epsilon(1e-9));
  const double oracle = lloyd_oracle(data, 8, 50, 13);
  CHECK(ours <= 1.05 * oracle);
}

TEST_CASE("Lloyd objective never increases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ArcParams ap;
    ap.samples = 300;
    ap.jitter_deg = 3.0;
    const SynthOutput so = synth_arcs(ap, 70 + seed);
    const KMeansResult r = kmeans_quat_detailed(so.data.joints[0], 6, seed);
    REQUIRE(!r.objective_history.empty());
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
      CHECK(r.objective_history[i] <= r.objective_history[i - 1] + 1e-12);
    CHECK(r.assignment.size() == 300);
  }
}

TEST_CASE("k-means argument checks and oversized requests") {
  Eigen::MatrixXd data(4, 2);
  data << rot({0, 0, 1}, 10), rot({0, 1, 0}, 80);
  CHECK_THROWS_AS(kmeans_quat(data, 0, 1), Error);
  const Dictionary d = kmeans_quat(data, 3, 1);
  CHECK(d.size() == 3);
  CHECK(d.provenance.duplicate_atoms);
}

TEST_CASE("coverage is one when every sample is an atom") {
  std::mt19937_64 rng(42);
  const Dictionary d = random_dictionary(4, 10, AtomMode::Quaternion, rng);
  for (double threshold : {0.0, 1.0, 5.0}) {
    CoverageConfig cc;
    cc.threshold_deg = threshold;
    const CoverageReport r = coverage(d, d.atoms, cc);
    CHECK(r.ratio == 1.0);
    CHECK(r.per_sample_errors_deg.size() == 10);
  }
}

TEST_CASE("coverage ratio counts errors under the threshold") {
  ArcParams ap;
  ap.samples = 120;
  ap.jitter_deg = 4.0;
  const SynthOutput so = synth_arcs(ap, 43);
  const Dictionary d = kmeans_quat(so.data.joints[0].leftCols(60), 6, 44);
  const Eigen::MatrixXd held = so.data.joints[0].rightCols(60);
  double previous = -1.0;
  for (double threshold : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    CoverageConfig cc;
    cc.threshold_deg = threshold;
    const CoverageReport r = coverage(d, held, cc);
    const auto under = std::count_if(r.per_sample_errors_deg.begin(), r.per_sample_errors_deg.end(),
                                     [&](double e) { return e <= threshold; });
    CHECK(r.ratio == static_cast<double>(under) / 60.0);
    CHECK(r.ratio >= previous);
    previous = r.ratio;
  }
}

TEST_CASE("coverage ignores atom order and atom signs") {
  Eigen::MatrixXd atoms(4, 4);
  atoms << rot({0, 0, 1}, 0), rot({0, 0, 1}, 30), rot({1, 0, 0}, 30), rot({0, 1, 0}, 30);
  Dictionary d;
  d.atoms = atoms;
  Eigen::MatrixXd data(4, 6);
  data << atoms.col(1), atoms.col(3), UnitQuaternion::from_vector(atoms.col(0) + atoms.col(2)).coeffs(),
      rot({1, 1, 0}, 120), rot({0, 1, 1}, -140), rot({1, 0, 1}, 170);
  const CoverageReport base = coverage(d, data, CoverageConfig{});

  Dictionary permuted = d;
  permuted.atoms << atoms.col(2), atoms.col(0), atoms.col(3), atoms.col(1);
  CHECK(coverage(permuted, data, CoverageConfig{}).ratio == base.ratio);

  Dictionary flipped = d;
  flipped.atoms.col(1) *= -1.0;
  flipped.atoms.col(3) *= -1.0;
  const CoverageReport f = coverage(flipped, data, CoverageConfig{});
  CHECK(f.ratio == base.ratio);
  CHECK(f.per_sample_errors_deg == base.per_sample_errors_deg);
  CHECK(base.ratio == doctest::Approx(0.5));
}

TEST_CASE("coverage report serialization") {
  CoverageReport r;
  r.method = "obdl";
  r.atoms = 3;
  r.threshold_deg = 5.0;
  r.ratio = 0.5;
  r.per_sample_errors_deg = {1.0, 9.0};
  const nlohmann::json j = to_json(r);
  CHECK(j["N"] == 3);
  CHECK(j["ratio"] == 0.5);
  const std::string csv = coverage_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.rfind("index,error_deg\n", 0) == 0);
}
