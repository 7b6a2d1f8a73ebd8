#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "kinedict/quat.hpp"
#include "kinedict/simplex.hpp"

namespace kinedict {

enum class AtomMode { Quaternion, Euclidean };

std::string to_string(AtomMode mode);
AtomMode atom_mode_from_string(const std::string& s);

/// Settings for the per-column code optimization (gradient descent through sparsemax).
struct InnerLoopConfig {
  int max_steps = 200;
  double rel_tol = 1e-7;
};

struct Provenance {
  std::string method = "obdl";
  std::uint64_t seed = 0;
  long batch_size = 0;
  long steps = 0;
  double momentum = 0.0;
  InnerLoopConfig inner;
  /// Set when more atoms were requested than distinct samples were available.
  bool duplicate_atoms = false;
};

/// N atoms stored as the columns of a d x N matrix. In quaternion mode d = 4 and every column
/// is a canonical unit quaternion; in Euclidean mode every column has unit L2 norm.
struct Dictionary {
  Eigen::MatrixXd atoms;
  AtomMode mode = AtomMode::Quaternion;
  std::string joint_label;
  Provenance provenance;

  Eigen::Index size() const { return atoms.cols(); }
  Eigen::Index dim() const { return atoms.rows(); }
  UnitQuaternion quaternion(Eigen::Index j) const;

  /// Throws InvalidInput if any dictionary invariant is violated.
  void validate() const;
};

/// d-vector recovered from a code: nlerp over atoms in quaternion mode, the plain linear
/// combination D p in Euclidean mode.
Eigen::VectorXd reconstruct(const Dictionary& dict, const SimplexPoint& code);
Eigen::VectorXd reconstruct_logits(const Dictionary& dict, const Eigen::Ref<const Eigen::VectorXd>& logits);

/// JSON layout: {mode, joint_label, d, N, atoms, provenance}; `atoms` is the d x N matrix
/// flattened row-major (entry (r, c) at index r * N + c).
nlohmann::json to_json(const Dictionary& dict);
Dictionary dictionary_from_json(const nlohmann::json& j);

void save_dictionary(const Dictionary& dict, const std::filesystem::path& path);
Dictionary load_dictionary(const std::filesystem::path& path);

}  // namespace kinedict
