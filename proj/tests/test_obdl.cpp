#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "kinedict/error.hpp"
#include "kinedict/obdl.hpp"
#include "kinedict/synth.hpp"
#include "oracles.hpp"

using namespace kinedict;

namespace {

Dictionary quat_dictionary(std::initializer_list<Eigen::Vector4d> atoms) {
  Dictionary d;
  d.atoms.resize(4, static_cast<Eigen::Index>(atoms.size()));
  Eigen::Index j = 0;
  for (const auto& a : atoms) d.atoms.col(j++) = UnitQuaternion::from_vector(a).coeffs();
  return d;
}

Eigen::Vector4d rot(const Eigen::Vector3d& axis, double deg) {
  return from_axis_angle({axis.normalized(), deg * std::numbers::pi / 180.0}).coeffs();
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (auto& v : m.reshaped()) v = normal(rng);
  return m;
}

double naive_objective(const Eigen::MatrixXd& d, const Eigen::MatrixXd& codes, const Eigen::MatrixXd& data) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < data.cols(); ++k)
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      double rec = 0.0;
      for (Eigen::Index j = 0; j < d.cols(); ++j) rec += d(r, j) * codes(j, k);
      total += 0.5 * (data(r, k) - rec) * (data(r, k) - rec);
    }
  return total;
}

double surrogate(const Eigen::MatrixXd& d, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double first = 0.0, second = 0.0;
  for (Eigen::Index i = 0; i < d.cols(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      double dot = 0.0;
      for (Eigen::Index r = 0; r < d.rows(); ++r) dot += d(r, i) * d(r, j);
      first += dot * a(j, i);
    }
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    for (Eigen::Index r = 0; r < d.rows(); ++r) second += d(r, j) * b(r, j);
  return 0.5 * first - second;
}

}  // namespace

TEST_CASE("batch objective examples") {
  const Dictionary d = quat_dictionary({rot({0, 0, 1}, 0), rot({0, 0, 1}, 60), rot({1, 0, 0}, 60)});
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(3, 2);
  logits(1, 0) = 10.0;
  logits(2, 1) = 10.0;
  Eigen::MatrixXd data(4, 2);
  data << d.atoms.col(1), d.atoms.col(2);
  CHECK(batch_objective(d, logits, data) == 0.0);

  Dictionary e;
  e.mode = AtomMode::Euclidean;
  e.atoms = Eigen::MatrixXd::Identity(5, 3);
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd w = gaussian(3, 6, rng);
  const Eigen::MatrixXd x = gaussian(5, 6, rng);
  Eigen::MatrixXd codes(3, 6);
  for (Eigen::Index k = 0; k < 6; ++k) codes.col(k) = oracle::simplex_projection(w.col(k));
  CHECK(batch_objective(e, w, x) == doctest::Approx(naive_objective(e.atoms, codes, x)).epsilon(1e-10));

  Dictionary one = quat_dictionary({rot({0, 1, 0}, 30)});
  const Eigen::Vector4d theta = rot({1, 1, 0}, 50);
  const double expected = 0.5 * (theta - one.atoms.col(0)).squaredNorm();
  for (double z : {-4.0, 0.0, 3.5}) CHECK(batch_objective(one, Eigen::MatrixXd::Constant(1, 1, z), theta) == expected);

  CHECK_THROWS_AS(batch_objective(one, Eigen::MatrixXd::Zero(2, 1), theta), Error);
  CHECK_THROWS_AS(batch_objective(one, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(3, 1)), Error);
}

TEST_CASE("code for a data column equal to an atom concentrates on that atom") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const Dictionary d = quat_dictionary({rot({0, 0, 1}, 0), rot({0, 0, 1}, 90), rot({1, 0, 0}, 90), rot({0, 1, 0}, 90)});
    const Eigen::Index j = trial % 4;
    LearnerState state = make_learner(d, 0.9, static_cast<std::uint64_t>(trial));
    const CodeBatch cb = update_codes(state, d.atoms.col(j), InnerLoopConfig{});
    CHECK(cb.codes(j, 0) >= 0.99);

    // exhaustive grid over the simplex with spacing 0.01
    double best = INFINITY;
    Eigen::Vector4d best_code;
    for (int a = 0; a <= 100; ++a)
      for (int b = 0; a + b <= 100; ++b)
        for (int c = 0; a + b + c <= 100; ++c) {
          const Eigen::Vector4d g(a / 100.0, b / 100.0, c / 100.0, (100 - a - b - c) / 100.0);
          const double v = (d.atoms * g - d.atoms.col(j)).squaredNorm();
          if (v < best) {
            best = v;
            best_code = g;
          }
        }
    CHECK(best_code[j] >= 0.99);
    CHECK((d.atoms * cb.codes.col(0) - d.atoms.col(j)).squaredNorm() <= best + 1e-12);
  }
}

TEST_CASE("code optimization is deterministic and never increases the objective") {
  std::mt19937_64 rng(23);
  Dictionary d;
  d.mode = AtomMode::Euclidean;
  d.atoms = gaussian(6, 5, rng).colwise().normalized();
  Eigen::MatrixXd data = gaussian(6, 4, rng);
  data.col(3) = data.col(1);
  Eigen::MatrixXd w = gaussian(5, 4, rng);
  w.col(3) = w.col(1);
  const CodeBatch cb = optimize_codes(d, data, w, InnerLoopConfig{});
  CHECK(cb.codes.col(3) == cb.codes.col(1));
  CHECK(naive_objective(d.atoms, cb.codes, data) <= batch_objective(d, w, data) + 1e-12);
  for (Eigen::Index k = 0; k < 4; ++k) {
    CHECK((cb.codes.col(k).array() >= 0.0).all());
    CHECK(std::abs(cb.codes.col(k).sum() - 1.0) <= 1e-12);
  }
  const CodeBatch again = optimize_codes(d, data, w, InnerLoopConfig{});
  CHECK(again.codes == cb.codes);
}

TEST_CASE("history accumulation follows the momentum formula") {
  std::mt19937_64 rng(24);
  const Dictionary d = quat_dictionary({rot({0, 0, 1}, 10), rot({0, 1, 0}, 20), rot({1, 0, 0}, 30)});
  const Eigen::MatrixXd data = d.atoms;
  Eigen::MatrixXd codes = Eigen::MatrixXd::Identity(3, 3);
  codes(0, 1) = 0.25;
  codes(1, 1) = 0.75;

  LearnerState erased = make_learner(d, 0.0, 1);
  accumulate_history(erased, codes, data);
  CHECK(erased.A == codes * codes.transpose());
  CHECK(erased.step == 1);

  LearnerState s = make_learner(d, 0.9, 1);
  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(3, 1);
  one_hot(2, 0) = 1.0;
  const Eigen::MatrixXd a0 = s.A, b0 = s.B;
  accumulate_history(s, one_hot, data.col(0));
  Eigen::MatrixXd da = Eigen::MatrixXd::Zero(3, 3);
  da(2, 2) = 0.1;
  CHECK((s.A - (0.9 * a0 + da)).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::MatrixXd db = Eigen::MatrixXd::Zero(4, 3);
  db.col(2) = 0.1 * data.col(0);
  CHECK((s.B - (0.9 * b0 + db)).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(make_learner(d, 1.0, 1), Error);
  CHECK_THROWS_AS(make_learner(d, -0.1, 1), Error);
  CHECK_THROWS_AS(accumulate_history(s, Eigen::MatrixXd::Zero(2, 1), data.col(0)), Error);
}

TEST_CASE("dictionary update at the reset state is a fixed point") {
  std::mt19937_64 rng(25);
  const Dictionary d = random_dictionary(4, 6, AtomMode::Quaternion, rng);
  LearnerState s = make_learner(d, 0.9, 3);
  update_dictionary(s, Eigen::MatrixXd());
  CHECK((s.dict.atoms - d.atoms).cwiseAbs().maxCoeff() <= 1e-12);

  const Dictionary single = quat_dictionary({rot({0, 0, 1}, 80)});
  LearnerState t = make_learner(single, 0.5, 3);
  const Eigen::Vector4d theta = rot({1, 2, 3}, 40);
  t.A = Eigen::MatrixXd::Ones(1, 1);
  t.B = theta;
  update_dictionary(t, Eigen::MatrixXd());
  CHECK((t.dict.atoms.col(0) - theta).norm() < 1e-12);
}

TEST_CASE("dictionary sweep does not increase the surrogate") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + trial % 3;
    const Dictionary d = random_dictionary(4, n, AtomMode::Quaternion, rng);
    LearnerState s = make_learner(d, 0.5, 4);
    const Eigen::MatrixXd data = align_signs(d, random_dictionary(4, 16, AtomMode::Quaternion, rng).atoms);
    Eigen::MatrixXd codes(n, 16);
    const Eigen::MatrixXd w = gaussian(n, 16, rng);
    for (Eigen::Index k = 0; k < 16; ++k) codes.col(k) = oracle::simplex_projection(w.col(k));
    accumulate_history(s, codes, data);
    const double before = surrogate(s.dict.atoms, s.A, s.B);
    update_dictionary(s, data);
    CHECK(surrogate(s.dict.atoms, s.A, s.B) <= before + 1e-10);
    s.dict.validate();
    CHECK((s.A - s.A.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("dead atoms are re-seeded from the pool") {
  std::mt19937_64 rng(27);
  const Dictionary d = random_dictionary(4, 3, AtomMode::Quaternion, rng);
  LearnerState s = make_learner(d, 0.9, 5);
  s.A(1, 1) = 0.0;
  const Eigen::Vector4d pool = rot({0, 1, 1}, 25);
  update_dictionary(s, pool);
  CHECK(s.dict.atoms.col(1) == pool);
  CHECK(s.A(1, 1) == 1.0);
  CHECK(s.B.col(1) == pool);
}

TEST_CASE("duplicate atoms are replaced by the worst reconstructed sample") {
  const Dictionary d = quat_dictionary({rot({0, 0, 1}, 10), rot({0, 0, 1}, 10), rot({1, 0, 0}, 40)});
  LearnerState s = make_learner(d, 0.9, 6);
  Eigen::MatrixXd data(4, 2);
  data << rot({0, 0, 1}, 10), rot({0, 1, 0}, 70);
  Eigen::MatrixXd codes = Eigen::MatrixXd::Zero(3, 2);
  codes(0, 0) = 1.0;
  codes(2, 1) = 1.0;
  const auto replaced = reseed_duplicates(s, data, codes);
  CHECK(replaced == std::vector<Eigen::Index>{1});
  CHECK(s.dict.atoms.col(1) == data.col(1));
  CHECK(s.A.row(1) == Eigen::RowVector3d(0, 1, 0));
}

TEST_CASE("sign alignment meets the nearest atom on its side") {
  const Dictionary d = quat_dictionary({rot({0, 0, 1}, 170), rot({1, 0, 0}, 20)});
  Eigen::MatrixXd data(4, 2);
  data << rot({0, 0, 1}, -175), rot({1, 0, 0}, 25);
  const Eigen::MatrixXd aligned = align_signs(d, data);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const Eigen::VectorXd dots = d.atoms.transpose() * aligned.col(k);
    Eigen::Index nearest = 0;
    dots.cwiseAbs().maxCoeff(&nearest);
    CHECK(dots[nearest] > 0.0);
    CHECK(aligned.col(k).cwiseAbs() == data.col(k).cwiseAbs());
  }
  CHECK(aligned.col(0) == -data.col(0));
}

TEST_CASE("learning a single repeated rotation") {
  const Eigen::Vector4d theta = UnitQuaternion::from_vector(rot({1, -1, 2}, 70)).coeffs();
  const Eigen::MatrixXd data = theta.replicate(1, 50);
  LearnConfig lc;
  lc.atoms = 1;
  lc.steps = 20;
  lc.seed = 7;
  const Dictionary d = learn(data, lc);
  CHECK(geodesic_distance(d.quaternion(0), UnitQuaternion::from_vector(theta)) * 180.0 / std::numbers::pi < 0.1);
}

TEST_CASE("learning is deterministic and keeps dictionary invariants") {
  ClusterParams cp;
  cp.clusters = 4;
  cp.samples = 200;
  const SynthOutput so = synth_clusters(cp, 31);
  LearnConfig lc;
  lc.atoms = 6;
  lc.batch_size = 16;
  lc.steps = 25;
  lc.seed = 32;
  lc.joint_label = "knee";
  const Dictionary a = learn(so.data.joints[0], lc);
  const Dictionary b = learn(so.data.joints[0], lc);
  CHECK(a.atoms == b.atoms);
  CHECK_NOTHROW(a.validate());
  CHECK(a.provenance.method == "obdl");
  CHECK(a.provenance.steps == 25);
  CHECK(a.provenance.batch_size == 16);
  CHECK(a.provenance.momentum == 0.9);
  CHECK(a.joint_label == "knee");
  CHECK_FALSE(a.provenance.duplicate_atoms);

  lc.atoms = 3;
  const Dictionary dup = learn(Eigen::MatrixXd(so.data.joints[0].leftCols(1)).replicate(1, 5), lc);
  CHECK(dup.provenance.duplicate_atoms);

  CHECK_THROWS_AS(learn(Eigen::MatrixXd(4, 0), lc), Error);
  Eigen::MatrixXd noncanonical = so.data.joints[0].leftCols(3);
  noncanonical.col(1) *= -1.0;
  CHECK_THROWS_AS(learn(noncanonical, lc), Error);
}

TEST_CASE("held-out objective trends down while learning") {
  std::vector<std::vector<double>> curves;
  const std::vector<long> checkpoints{2, 8, 32, 96};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ArcParams ap;
    ap.samples = 600;
    const SynthOutput so = synth_arcs(ap, 40 + seed);
    const Eigen::MatrixXd train = so.data.joints[0].leftCols(500);
    const Eigen::MatrixXd held = so.data.joints[0].rightCols(100);
    std::mt19937_64 rng(50 + seed);
    const Eigen::MatrixXd w = gaussian(8, 100, rng);
    std::vector<double> curve;
    for (long t : checkpoints) {
      LearnConfig lc;
      lc.atoms = 8;
      lc.batch_size = 32;
      lc.steps = t;
      lc.seed = 60 + seed;
      const Dictionary d = learn(train, lc);
      const Eigen::MatrixXd aligned = align_signs(d, held);
      const CodeBatch cb = optimize_codes(d, aligned, w, InnerLoopConfig{});
      curve.push_back(naive_objective(d.atoms, cb.codes, aligned) / 100.0);
    }
    curves.push_back(curve);
  }
  for (std::size_t c = 1; c < checkpoints.size(); ++c) {
    std::vector<double> prev, cur;
    for (const auto& curve : curves) {
      prev.push_back(curve[c - 1]);
      cur.push_back(curve[c]);
    }
    std::nth_element(prev.begin(), prev.begin() + 2, prev.end());
    std::nth_element(cur.begin(), cur.begin() + 2, cur.end());
    CHECK(cur[2] <= prev[2] + 1e-3);
  }
}

TEST_CASE("euclidean reconstructions stay in the hull") {
  std::mt19937_64 rng(28);
  const Dictionary d = random_dictionary(10, 6, AtomMode::Euclidean, rng);
  CHECK_NOTHROW(d.validate());
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd z = gaussian(6, 1, rng);
    const Eigen::VectorXd p = oracle::simplex_projection(z);
    CHECK((reconstruct_logits(d, z) - d.atoms * p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("reconstruct examples") {
  const Dictionary q = quat_dictionary({rot({0, 0, 1}, 10), rot({0, 1, 0}, 50), rot({1, 0, 0}, 90)});
  SimplexPoint one_hot{Eigen::Vector3d(0, 0, 1)};
  CHECK(reconstruct(q, one_hot) == q.atoms.col(2));
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector4d r = reconstruct_logits(q, gaussian(3, 1, rng));
    CHECK(std::abs(r.norm() - 1.0) < 1e-12);
    CHECK(canonical_sign(r) == r);
  }

  Dictionary e;
  e.mode = AtomMode::Euclidean;
  e.atoms = Eigen::MatrixXd::Identity(4, 2);
  const Eigen::VectorXd out = reconstruct(e, SimplexPoint{Eigen::Vector2d(0.5, 0.5)});
  CHECK(out == Eigen::Vector4d(0.5, 0.5, 0, 0));
}

TEST_CASE("dictionary JSON round trip is lossless") {
  std::mt19937_64 rng(30);
  Dictionary d = random_dictionary(4, 7, AtomMode::Quaternion, rng);
  d.joint_label = "left_elbow";
  d.provenance.seed = 99;
  d.provenance.momentum = 0.9;
  d.provenance.inner.max_steps = 123;
  const Dictionary back = dictionary_from_json(nlohmann::json::parse(to_json(d).dump()));
  CHECK(back.atoms == d.atoms);
  CHECK(back.joint_label == d.joint_label);
  CHECK(back.provenance.seed == 99);
  CHECK(back.provenance.inner.max_steps == 123);

  const Dictionary e = random_dictionary(10, 3, AtomMode::Euclidean, rng);
  CHECK(dictionary_from_json(to_json(e)).atoms == e.atoms);
  CHECK(dictionary_from_json(to_json(e)).mode == AtomMode::Euclidean);

  nlohmann::json broken = to_json(d);
  broken["atoms"][0] = 5.0;
  CHECK_THROWS_AS(dictionary_from_json(broken), Error);
}

TEST_CASE("default dictionary size and batch") {
  const LearnConfig lc;
  CHECK(lc.atoms == 128);
  CHECK(lc.batch_size == 512);
  CHECK(lc.momentum >= 0.0);
  CHECK(lc.momentum < 1.0);
}
