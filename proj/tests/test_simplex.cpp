#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "kinedict/error.hpp"
#include "kinedict/simplex.hpp"
#include "oracles.hpp"

using namespace kinedict;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

void check_simplex(const SimplexPoint& p) {
  CHECK((p.p.array() >= 0.0).all());
  CHECK(std::abs(p.p.sum() - 1.0) <= 1e-12);
}

}  // namespace

TEST_CASE("sparsemax examples") {
  CHECK(sparsemax(vec({0.5, 0.5})).p == vec({0.5, 0.5}));
  for (double c : {-3.0, 0.0, 0.25, 7.0}) {
    const SimplexPoint p = sparsemax(vec({c, c, c}));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(p.p[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  const Eigen::VectorXd a = vec({1.1, 1.0, -5.0});
  CHECK((sparsemax(a).p - oracle::simplex_projection(a)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sparsemax(a).p - vec({0.55, 0.45, 0.0})).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(sparsemax(a).p[2] == 0.0);
  CHECK(sparsemax(vec({2.0, 0.0})).p == vec({1.0, 0.0}));
  CHECK(oracle::simplex_projection(vec({2.0, 0.0})) == vec({1.0, 0.0}));
}

TEST_CASE("sparsemax rejects empty and non-finite input") {
  CHECK_THROWS_AS(sparsemax(Eigen::VectorXd()), Error);
  CHECK_THROWS_AS(sparsemax(vec({1.0, NAN})), Error);
  CHECK_THROWS_AS(sparsemax(vec({INFINITY, 0.0})), Error);
}

TEST_CASE("support holds exactly the positive entries") {
  const SimplexPoint p = sparsemax(vec({0.3, 2.0, 1.8, -1.0}));
  CHECK(p.support() == std::vector<Eigen::Index>{1, 2});
}

TEST_CASE("sparsemax is the closest simplex point") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> size(1, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng);
    Eigen::VectorXd z(n);
    for (auto& v : z) v = 2.0 * normal(rng);
    const SimplexPoint p = sparsemax(z);
    check_simplex(p);
    const double d = (p.p - z).norm();
    for (int i = 0; i < n; ++i) CHECK(d <= (Eigen::VectorXd::Unit(n, i) - z).norm() + 1e-12);
    for (const Eigen::VectorXd& c : oracle::simplex_candidates(z)) CHECK(d <= (c - z).norm() + 1e-12);
  }
}

TEST_CASE("sparsemax invariances") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd z(6);
    for (auto& v : z) v = normal(rng);
    const Eigen::VectorXd p = sparsemax(z).p;

    const double c = 10.0 * normal(rng);
    CHECK((sparsemax((z.array() + c).matrix()).p - p).cwiseAbs().maxCoeff() <= 1e-12);

    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::VectorXd zp(6), pp(6);
    for (int i = 0; i < 6; ++i) {
      zp[i] = z[perm[static_cast<std::size_t>(i)]];
      pp[i] = p[perm[static_cast<std::size_t>(i)]];
    }
    CHECK((sparsemax(zp).p - pp).cwiseAbs().maxCoeff() <= 1e-15);

    CHECK((sparsemax(p).p - p).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("ties are broken deterministically") {
  const SimplexPoint a = sparsemax(vec({1.0, 1.0, 1.0, 1.0}));
  const SimplexPoint b = sparsemax(vec({1.0, 1.0, 1.0, 1.0}));
  CHECK(a.p == b.p);
  CHECK(a.p == Eigen::VectorXd::Constant(4, 0.25));
}

TEST_CASE("jacobian examples") {
  Eigen::MatrixXd full(2, 2);
  full << 0.5, -0.5, -0.5, 0.5;
  CHECK(sparsemax_jacobian(vec({0.3, 0.1})) == full);
  CHECK(sparsemax_jacobian(vec({2.0, 0.0})) == Eigen::MatrixXd::Zero(2, 2));
}

TEST_CASE("jacobian matches central differences") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal;
  constexpr double h = 1e-6;
  int tested = 0;
  while (tested < 200) {
    Eigen::VectorXd z(8);
    for (auto& v : z) v = normal(rng);
    const auto support = sparsemax(z).support();
    bool stable = true;
    Eigen::MatrixXd fd(8, 8);
    for (int i = 0; i < 8 && stable; ++i) {
      Eigen::VectorXd up = z, down = z;
      up[i] += h;
      down[i] -= h;
      const SimplexPoint pu = sparsemax(up), pd = sparsemax(down);
      stable = pu.support() == support && pd.support() == support;
      fd.col(i) = (pu.p - pd.p) / (2 * h);
    }
    if (!stable) continue;
    ++tested;
    const Eigen::MatrixXd j = sparsemax_jacobian(z);
    CHECK((j - fd).norm() <= 1e-5 * std::max(j.norm(), 1.0));
    CHECK((j - j.transpose()).norm() == 0.0);
  }
}

TEST_CASE("backward pass equals the Jacobian transpose product") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd z(7), g(7);
    for (auto& v : z) v = normal(rng);
    for (auto& v : g) v = normal(rng);
    const Eigen::VectorXd expected = sparsemax_jacobian(z).transpose() * g;
    CHECK((sparsemax_backward(sparsemax(z), g) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}
