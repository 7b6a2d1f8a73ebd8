#include "kinedict/obdl.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "kinedict/error.hpp"
#include "kinedict/parallel.hpp"

namespace kinedict {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 40;

struct ColumnState {
  Eigen::VectorXd w;
  SimplexPoint p;
  double f = 0.0;
};

class ColumnSolver {
 public:
  ColumnSolver(const Eigen::MatrixXd& dict, double lipschitz, const InnerLoopConfig& config)
      : dict_(dict), inv_lipschitz_(1.0 / lipschitz), config_(config) {}

  ColumnState solve(const Eigen::VectorXd& x, Eigen::VectorXd w0) const {
    ColumnState cur = evaluate(x, std::move(w0));
    double step = inv_lipschitz_;
    for (int it = 0; it < config_.max_steps && cur.f > 0.0; ++it) {
      const Eigen::VectorXd grad_code = dict_.transpose() * (dict_ * cur.p.p - x);
      const Eigen::VectorXd grad_logits = sparsemax_backward(cur.p, grad_code);
      const double gn2 = grad_logits.squaredNorm();

      ColumnState best = cur;
      if (gn2 > 0.0) {
        double t = std::min(2.0 * step, 1e3 * inv_lipschitz_);
        for (int k = 0; k < kMaxHalvings; ++k, t *= 0.5) {
          ColumnState cand = evaluate(x, cur.w - t * grad_logits);
          if (cand.f <= cur.f - kArmijo * t * gn2) {
            best = std::move(cand);
            step = t;
            break;
          }
        }
      }
      if (best.f >= cur.f * (1.0 - config_.rel_tol)) {
        // Logit descent stalled: take a 1/L projected-gradient step on the code.
        ColumnState cand = evaluate(x, cur.p.p - inv_lipschitz_ * grad_code);
        if (cand.f < best.f) best = std::move(cand);
      }
      if (!(best.f < cur.f)) break;
      const double rel = (cur.f - best.f) / cur.f;
      cur = std::move(best);
      if (rel < config_.rel_tol) break;
    }
    return cur;
  }

  ColumnState evaluate(const Eigen::VectorXd& x, Eigen::VectorXd w) const {
    ColumnState s;
    s.p = sparsemax(w);
    s.w = std::move(w);
    s.f = 0.5 * (dict_ * s.p.p - x).squaredNorm();
    return s;
  }

 private:
  const Eigen::MatrixXd& dict_;
  double inv_lipschitz_;
  InnerLoopConfig config_;
};

double lipschitz_constant(const Eigen::MatrixXd& dict) {
  const Eigen::MatrixXd gram = dict * dict.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  return std::max(eig.eigenvalues().maxCoeff(), 1e-12);
}

void check_dims(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data) {
  require(data.rows() == dict.dim(), "data dimension does not match dictionary atom dimension");
}

Eigen::VectorXd normalized_atom(const Eigen::VectorXd& v, AtomMode mode) {
  if (mode == AtomMode::Quaternion) return UnitQuaternion::from_vector(v).coeffs();
  return v / v.norm();
}

Eigen::VectorXd gaussian_direction(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() < 1e-6);
  return v;
}

std::size_t distinct_columns(const Eigen::Ref<const Eigen::MatrixXd>& data) {
  std::set<std::vector<double>> seen;
  for (Eigen::Index c = 0; c < data.cols(); ++c) seen.emplace(data.col(c).data(), data.col(c).data() + data.rows());
  return seen.size();
}

}  // namespace

void reset_atom_history(LearnerState& state, Eigen::Index j) {
  state.A.row(j).setZero();
  state.A.col(j).setZero();
  state.A(j, j) = 1.0;
  state.B.col(j) = state.dict.atoms.col(j);
}

std::vector<Eigen::Index> reseed_duplicates(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& data,
                                            const Eigen::Ref<const Eigen::MatrixXd>& codes) {
  Dictionary& dict = state.dict;
  const Eigen::Index n = dict.size();
  std::vector<Eigen::Index> replaced;
  if (n < 2 || data.cols() == 0) return replaced;

  // Worst-represented samples first.
  const Eigen::VectorXd residual = (data - dict.atoms * codes).colwise().squaredNorm().transpose();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return residual[a] > residual[b]; });

  std::size_t next = 0;
  for (Eigen::Index j = 1; j < n && next < order.size(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      if (std::abs(dict.atoms.col(i).dot(dict.atoms.col(j))) < state.duplicate_cosine) continue;
      dict.atoms.col(j) = normalized_atom(data.col(order[next++]), dict.mode);
      reset_atom_history(state, j);
      replaced.push_back(j);
      break;
    }
  }
  return replaced;
}

LearnerState make_learner(Dictionary initial, double momentum, std::uint64_t seed) {
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  initial.validate();
  LearnerState s;
  const Eigen::Index n = initial.size();
  s.A = Eigen::MatrixXd::Identity(n, n);
  s.B = initial.atoms;
  s.dict = std::move(initial);
  s.momentum = momentum;
  s.rng.seed(seed);
  return s;
}

double batch_objective(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& logits,
                       const Eigen::Ref<const Eigen::MatrixXd>& data) {
  check_dims(dict, data);
  require(logits.rows() == dict.size() && logits.cols() == data.cols(), "logit shape does not match N x b");
  double total = 0.0;
  for (Eigen::Index k = 0; k < data.cols(); ++k)
    total += 0.5 * (data.col(k) - dict.atoms * sparsemax(logits.col(k)).p).squaredNorm();
  return total;
}

CodeBatch optimize_codes(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data,
                         Eigen::MatrixXd initial_logits, const InnerLoopConfig& config) {
  check_dims(dict, data);
  require(initial_logits.rows() == dict.size() && initial_logits.cols() == data.cols(),
          "logit shape does not match N x b");
  require(config.max_steps >= 0, "inner max_steps must be nonnegative");

  const Eigen::MatrixXd atoms = dict.atoms;
  const ColumnSolver solver(atoms, lipschitz_constant(atoms), config);
  CodeBatch out;
  out.logits = std::move(initial_logits);
  out.codes.resize(dict.size(), data.cols());
  parallel_for(static_cast<std::size_t>(data.cols()), [&](std::size_t k) {
    const auto col = static_cast<Eigen::Index>(k);
    ColumnState s = solver.solve(data.col(col), out.logits.col(col));
    out.logits.col(col) = s.w;
    out.codes.col(col) = s.p.p;
  });
  return out;
}

CodeBatch update_codes(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& data,
                       const InnerLoopConfig& config) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd w(state.dict.size(), data.cols());
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(state.rng);
  return optimize_codes(state.dict, data, std::move(w), config);
}

void accumulate_history(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& codes,
                        const Eigen::Ref<const Eigen::MatrixXd>& data) {
  check_dims(state.dict, data);
  require(codes.rows() == state.dict.size() && codes.cols() == data.cols(), "code shape does not match N x b");
  const double eta = state.momentum;
  state.A = eta * state.A + (1.0 - eta) * (codes * codes.transpose());
  state.B = eta * state.B + (1.0 - eta) * (data * codes.transpose());
  ++state.step;
}

void update_dictionary(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& reseed_pool) {
  Dictionary& dict = state.dict;
  const Eigen::Index n = dict.size();
  require(state.A.rows() == n && state.A.cols() == n, "history A has the wrong shape");
  require(state.B.rows() == dict.dim() && state.B.cols() == n, "history B has the wrong shape");
  require(reseed_pool.cols() == 0 || reseed_pool.rows() == dict.dim(), "re-seed pool has the wrong dimension");

  auto reseed = [&](Eigen::Index j) {
    Eigen::VectorXd v;
    if (reseed_pool.cols() > 0) {
      std::uniform_int_distribution<Eigen::Index> pick(0, reseed_pool.cols() - 1);
      v = reseed_pool.col(pick(state.rng));
    } else {
      v = gaussian_direction(dict.dim(), state.rng);
    }
    dict.atoms.col(j) = normalized_atom(v, dict.mode);
    reset_atom_history(state, j);
  };

  for (Eigen::Index j = 0; j < n; ++j) {
    const double ajj = state.A(j, j);
    if (!(ajj >= state.dead_atom_threshold)) {
      reseed(j);
      continue;
    }
    const Eigen::VectorXd u = (state.B.col(j) - dict.atoms * state.A.col(j)) / ajj + dict.atoms.col(j);
    if (!u.allFinite() || u.norm() < 1e-9) {
      reseed(j);
      continue;
    }
    const Eigen::VectorXd unit = u / u.norm();
    dict.atoms.col(j) = normalized_atom(unit, dict.mode);
    if (dict.mode == AtomMode::Quaternion && dict.atoms.col(j).dot(unit) < 0.0) {
      // Canonicalization negated the atom; negate its history too.
      const double diag = state.A(j, j);
      state.A.row(j) *= -1.0;
      state.A.col(j) *= -1.0;
      state.A(j, j) = diag;
      state.B.col(j) *= -1.0;
    }
  }
}

Eigen::MatrixXd align_signs(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data) {
  check_dims(dict, data);
  Eigen::MatrixXd out = data;
  if (dict.mode != AtomMode::Quaternion) return out;
  const Eigen::MatrixXd dots = dict.atoms.transpose() * data;
  for (Eigen::Index k = 0; k < data.cols(); ++k) {
    Eigen::Index nearest = 0;
    dots.col(k).cwiseAbs().maxCoeff(&nearest);
    if (dots(nearest, k) < 0.0) out.col(k) *= -1.0;
  }
  return out;
}

Dictionary random_dictionary(Eigen::Index dim, Eigen::Index atoms, AtomMode mode, std::mt19937_64& rng) {
  require(atoms >= 1, "dictionary needs at least one atom");
  require(mode != AtomMode::Quaternion || dim == 4, "quaternion dictionaries have 4-dimensional atoms");
  Dictionary d;
  d.mode = mode;
  d.atoms.resize(dim, atoms);
  for (Eigen::Index j = 0; j < atoms; ++j) d.atoms.col(j) = normalized_atom(gaussian_direction(dim, rng), mode);
  return d;
}

void require_canonical_quaternions(const Eigen::Ref<const Eigen::MatrixXd>& data) {
  require(data.rows() == 4, "quaternion data must have 4 rows");
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    const Eigen::Vector4d v = data.col(c);
    require(v.allFinite() && std::abs(v.norm() - 1.0) <= 1e-9 && canonical_sign(v) == v,
            "quaternion sample " + std::to_string(c) + " is not a canonical unit quaternion");
  }
}

Dictionary learn(const Eigen::Ref<const Eigen::MatrixXd>& data, const LearnConfig& config) {
  require(data.cols() >= 1, "cannot learn a dictionary from empty data");
  require(config.atoms >= 1, "dictionary needs at least one atom");
  require(config.batch_size >= 1, "batch size must be positive");
  require(config.steps >= 0, "step count must be nonnegative");
  if (config.mode == AtomMode::Quaternion) require_canonical_quaternions(data);
  require(data.allFinite(), "data has non-finite entries");

  std::mt19937_64 rng(config.seed);
  Dictionary d0 = random_dictionary(data.rows(), config.atoms, config.mode, rng);
  d0.joint_label = config.joint_label;
  LearnerState state = make_learner(std::move(d0), config.momentum, rng());

  std::uniform_int_distribution<Eigen::Index> pick(0, data.cols() - 1);
  Eigen::MatrixXd batch(data.rows(), config.batch_size);
  for (long t = 0; t < config.steps; ++t) {
    for (Eigen::Index k = 0; k < config.batch_size; ++k) batch.col(k) = data.col(pick(state.rng));
    batch = align_signs(state.dict, batch);
    const CodeBatch codes = update_codes(state, batch, config.inner);
    accumulate_history(state, codes.codes, batch);
    update_dictionary(state, batch);
    reseed_duplicates(state, batch, codes.codes);
  }

  Dictionary out = std::move(state.dict);
  out.provenance.method = "obdl";
  out.provenance.seed = config.seed;
  out.provenance.batch_size = static_cast<long>(config.batch_size);
  out.provenance.steps = config.steps;
  out.provenance.momentum = config.momentum;
  out.provenance.inner = config.inner;
  out.provenance.duplicate_atoms = static_cast<std::size_t>(config.atoms) > distinct_columns(data);
  return out;
}

}  // namespace kinedict
