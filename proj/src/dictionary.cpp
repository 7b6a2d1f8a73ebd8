#include "kinedict/dictionary.hpp"

#include <cmath>
#include <fstream>

#include "kinedict/error.hpp"

namespace kinedict {

std::string to_string(AtomMode mode) { return mode == AtomMode::Quaternion ? "quaternion" : "euclidean"; }

AtomMode atom_mode_from_string(const std::string& s) {
  if (s == "quaternion") return AtomMode::Quaternion;
  if (s == "euclidean") return AtomMode::Euclidean;
  fail(ErrorKind::InvalidInput, "unknown atom mode '" + s + "'");
}

UnitQuaternion Dictionary::quaternion(Eigen::Index j) const {
  require(mode == AtomMode::Quaternion, "dictionary is not in quaternion mode");
  return UnitQuaternion::from_vector(atoms.col(j));
}

void Dictionary::validate() const {
  require(atoms.cols() >= 1, "dictionary needs at least one atom");
  require(atoms.rows() >= 1, "dictionary atoms need at least one dimension");
  require(atoms.allFinite(), "dictionary has non-finite entries");
  if (mode == AtomMode::Quaternion) require(atoms.rows() == 4, "quaternion dictionary atoms must be 4-vectors");
  for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
    require(std::abs(atoms.col(j).norm() - 1.0) <= 1e-9, "dictionary atom " + std::to_string(j) + " is not unit length");
    if (mode == AtomMode::Quaternion)
      require(canonical_sign(atoms.col(j)) == Eigen::Vector4d(atoms.col(j)),
              "dictionary atom " + std::to_string(j) + " is not canonical");
  }
}

Eigen::VectorXd reconstruct(const Dictionary& dict, const SimplexPoint& code) {
  require(code.size() == dict.size(), "code length does not match dictionary size");
  if (dict.mode == AtomMode::Quaternion) {
    return nlerp(std::span<const double>(code.p.data(), static_cast<std::size_t>(code.p.size())), dict.atoms)
        .coeffs();
  }
  return dict.atoms * code.p;
}

Eigen::VectorXd reconstruct_logits(const Dictionary& dict, const Eigen::Ref<const Eigen::VectorXd>& logits) {
  return reconstruct(dict, sparsemax(logits));
}

nlohmann::json to_json(const Dictionary& dict) {
  nlohmann::json atoms = nlohmann::json::array();
  for (Eigen::Index r = 0; r < dict.atoms.rows(); ++r)
    for (Eigen::Index c = 0; c < dict.atoms.cols(); ++c) atoms.push_back(dict.atoms(r, c));
  const Provenance& p = dict.provenance;
  return {
      {"mode", to_string(dict.mode)},
      {"joint_label", dict.joint_label},
      {"d", dict.atoms.rows()},
      {"N", dict.atoms.cols()},
      {"atoms", std::move(atoms)},
      {"provenance",
       {{"method", p.method},
        {"seed", p.seed},
        {"batch_size", p.batch_size},
        {"steps", p.steps},
        {"momentum", p.momentum},
        {"inner", {{"max_steps", p.inner.max_steps}, {"rel_tol", p.inner.rel_tol}}},
        {"duplicate_atoms", p.duplicate_atoms}}},
  };
}

Dictionary dictionary_from_json(const nlohmann::json& j) {
  Dictionary dict;
  try {
    dict.mode = atom_mode_from_string(j.at("mode").get<std::string>());
    dict.joint_label = j.value("joint_label", std::string{});
    const auto d = j.at("d").get<Eigen::Index>();
    const auto n = j.at("N").get<Eigen::Index>();
    const auto& atoms = j.at("atoms");
    if (d < 1 || n < 1 || static_cast<Eigen::Index>(atoms.size()) != d * n)
      fail(ErrorKind::Data, "dictionary 'atoms' length does not equal d * N");
    dict.atoms.resize(d, n);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < n; ++c) dict.atoms(r, c) = atoms.at(static_cast<std::size_t>(r * n + c)).get<double>();
    if (j.contains("provenance")) {
      const auto& p = j.at("provenance");
      dict.provenance.method = p.value("method", std::string{"obdl"});
      dict.provenance.seed = p.value("seed", std::uint64_t{0});
      dict.provenance.batch_size = p.value("batch_size", 0L);
      dict.provenance.steps = p.value("steps", 0L);
      dict.provenance.momentum = p.value("momentum", 0.0);
      if (p.contains("inner")) {
        dict.provenance.inner.max_steps = p.at("inner").value("max_steps", 200);
        dict.provenance.inner.rel_tol = p.at("inner").value("rel_tol", 1e-7);
      }
      dict.provenance.duplicate_atoms = p.value("duplicate_atoms", false);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed dictionary JSON: ") + e.what());
  }
  try {
    dict.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Data, e.what());
  }
  return dict;
}

void save_dictionary(const Dictionary& dict, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Data, "cannot write " + path.string());
  out << to_json(dict).dump(2) << '\n';
}

Dictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
  return dictionary_from_json(j);
}

}  // namespace kinedict
