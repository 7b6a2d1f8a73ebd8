#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

#include "kinedict/dictionary.hpp"

namespace kinedict {

/// Online learner state: the dictionary plus momentum-averaged history matrices
/// A (N x N, code second moments) and B (d x N, data-code cross moments).
struct LearnerState {
  Dictionary dict;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double momentum = 0.9;
  long step = 0;
  double dead_atom_threshold = 1e-8;
  /// Atom pairs with |cosine| at or above this are treated as duplicates.
  double duplicate_cosine = 0.9999;
  std::mt19937_64 rng;
};

/// Reset state: A = I, B = D.
LearnerState make_learner(Dictionary initial, double momentum, std::uint64_t seed);

/// Logits W (N x b) and their column-wise sparsemax codes.
struct CodeBatch {
  Eigen::MatrixXd logits;
  Eigen::MatrixXd codes;
};

/// 1/2 ||data - D f(W)||_F^2 with f the column-wise sparsemax.
double batch_objective(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& logits,
                       const Eigen::Ref<const Eigen::MatrixXd>& data);

/// Optimizes codes column by column starting from `initial_logits`. Each column runs gradient
/// descent on the logits through the sparsemax Jacobian with Armijo backtracking. When that
/// stalls (for instance a single-atom support, where the Jacobian vanishes) a projected
/// gradient step on the code itself is tried before declaring convergence. The objective never
/// increases.
CodeBatch optimize_codes(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data,
                         Eigen::MatrixXd initial_logits, const InnerLoopConfig& config);

/// Draws W from a standard Gaussian using the state's generator, then runs optimize_codes.
CodeBatch update_codes(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& data,
                       const InnerLoopConfig& config);

/// A <- eta A + (1 - eta) sum_k g_k g_k^T;  B <- eta B + (1 - eta) sum_k x_k g_k^T;  t <- t + 1.
void accumulate_history(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& codes,
                        const Eigen::Ref<const Eigen::MatrixXd>& data);

/// One block-coordinate sweep over the columns, warm-started from the current dictionary.
/// Columns with A[j,j] below the dead-atom threshold, or whose update collapses to zero
/// length, are re-seeded from a random column of `reseed_pool`.
void update_dictionary(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& reseed_pool);

/// Quaternion mode: negates each sample whose nearest atom (largest |<x, d_j>|) has a negative
/// inner product with it, so samples near the w = 0 boundary meet the dictionary on one side.
/// Euclidean mode: returns data unchanged.
Eigen::MatrixXd align_signs(const Dictionary& dict, const Eigen::Ref<const Eigen::MatrixXd>& data);

/// Restores atom j's history to the reset state (A row/column = e_j, B column = d_j), so a
/// re-seeded atom is not pulled back by statistics gathered for its previous position.
void reset_atom_history(LearnerState& state, Eigen::Index j);

/// Replaces the later atom of every near-duplicate pair with the worst-reconstructed sample of
/// the batch (largest residual under `codes`). Returns the replaced column indices.
std::vector<Eigen::Index> reseed_duplicates(LearnerState& state, const Eigen::Ref<const Eigen::MatrixXd>& data,
                                            const Eigen::Ref<const Eigen::MatrixXd>& codes);

struct LearnConfig {
  Eigen::Index atoms = 128;
  Eigen::Index batch_size = 512;
  long steps = 200;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  AtomMode mode = AtomMode::Quaternion;
  InnerLoopConfig inner;
  std::string joint_label;
};

/// Random unit-norm columns drawn from a Gaussian (canonicalized in quaternion mode).
Dictionary random_dictionary(Eigen::Index dim, Eigen::Index atoms, AtomMode mode, std::mt19937_64& rng);

/// Full learner loop over `data` (one sample per column). Deterministic for a fixed seed.
Dictionary learn(const Eigen::Ref<const Eigen::MatrixXd>& data, const LearnConfig& config);

/// Checks that every column is a canonical unit quaternion.
void require_canonical_quaternions(const Eigen::Ref<const Eigen::MatrixXd>& data);

}  // namespace kinedict
