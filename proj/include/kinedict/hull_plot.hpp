#pragma once

#include <Eigen/Core>
#include <string>

#include "kinedict/dictionary.hpp"

namespace kinedict {

/// Orthonormal 2D PCA frame for a set of 4D points (columns).
struct PcaFrame {
  Eigen::Vector4d mean;
  Eigen::Matrix<double, 4, 2> basis;

  Eigen::Vector2d project(const Eigen::Vector4d& x) const { return basis.transpose() * (x - mean); }
};
PcaFrame fit_pca(const Eigen::Ref<const Eigen::Matrix4Xd>& points);

/// Flips every column onto the hemisphere of the dominant direction of the whole set.
Eigen::Matrix4Xd sign_align(const Eigen::Ref<const Eigen::Matrix4Xd>& points);

/// Counter-clockwise convex hull (monotone chain); returns point indices.
std::vector<Eigen::Index> convex_hull_2d(const Eigen::Ref<const Eigen::Matrix2Xd>& points);

struct HullPlot {
  /// Empty when the dictionary has fewer than 3 atoms.
  std::string svg;
  /// Header, then one row per atom, then one row per sample.
  std::string csv;
  Eigen::Matrix2Xd atom_xy;
  Eigen::Matrix2Xd sample_xy;
  std::vector<Eigen::Index> hull;
  std::vector<Eigen::Index> active;
};

/// Atoms and samples projected to the PCA plane of their sign-aligned coordinates. Atoms in the
/// support of `code` are highlighted and nlerp(code) is drawn as the reconstruction. An empty
/// code draws no active atoms.
HullPlot hull_plot(const Dictionary& dict, const Eigen::Ref<const Eigen::Matrix4Xd>& samples, const SimplexPoint& code);

}  // namespace kinedict
