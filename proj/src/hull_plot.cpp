#include "kinedict/hull_plot.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>

#include "kinedict/error.hpp"

namespace kinedict {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace

Eigen::Matrix4Xd sign_align(const Eigen::Ref<const Eigen::Matrix4Xd>& points) {
  Eigen::Matrix4Xd out = points;
  if (points.cols() == 0) return out;
  const Eigen::Matrix4d scatter = points * points.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(scatter);
  const Eigen::Vector4d ref = es.eigenvectors().col(3);
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    if (out.col(c).dot(ref) < 0) out.col(c) = -out.col(c);
  return out;
}

PcaFrame fit_pca(const Eigen::Ref<const Eigen::Matrix4Xd>& points) {
  require(points.cols() >= 1, "PCA needs at least one point");
  PcaFrame f;
  f.mean = points.rowwise().mean();
  const Eigen::Matrix4Xd centered = points.colwise() - f.mean;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(centered * centered.transpose());
  f.basis.col(0) = es.eigenvectors().col(3);
  f.basis.col(1) = es.eigenvectors().col(2);
  return f;
}

std::vector<Eigen::Index> convex_hull_2d(const Eigen::Ref<const Eigen::Matrix2Xd>& points) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return points(0, a) < points(0, b) || (points(0, a) == points(0, b) && points(1, a) < points(1, b));
  });
  if (idx.size() < 3) return idx;
  std::vector<Eigen::Index> hull(2 * idx.size());
  std::size_t k = 0;
  for (Eigen::Index i : idx) {
    while (k >= 2 && cross(points.col(hull[k - 2]), points.col(hull[k - 1]), points.col(i)) <= 0) --k;
    hull[k++] = i;
  }
  for (std::size_t t = k + 1, j = idx.size() - 1; j-- > 0;) {
    const Eigen::Index i = idx[j];
    while (k >= t && cross(points.col(hull[k - 2]), points.col(hull[k - 1]), points.col(i)) <= 0) --k;
    hull[k++] = i;
  }
  hull.resize(k - 1);
  return hull;
}

HullPlot hull_plot(const Dictionary& dict, const Eigen::Ref<const Eigen::Matrix4Xd>& samples, const SimplexPoint& code) {
  require(dict.mode == AtomMode::Quaternion, "hull plots need a quaternion dictionary");
  require(code.size() == 0 || code.size() == dict.size(), "code length does not match the dictionary");
  const Eigen::Index n = dict.size();
  const Eigen::Index m = samples.cols();

  Eigen::Matrix4Xd all(4, n + m);
  all.leftCols(n) = dict.atoms;
  all.rightCols(m) = samples;
  all = sign_align(all);
  const PcaFrame frame = fit_pca(all);

  HullPlot plot;
  plot.atom_xy.resize(2, n);
  plot.sample_xy.resize(2, m);
  for (Eigen::Index j = 0; j < n; ++j) plot.atom_xy.col(j) = frame.project(all.col(j));
  for (Eigen::Index s = 0; s < m; ++s) plot.sample_xy.col(s) = frame.project(all.col(n + s));
  if (code.size() > 0) plot.active = code.support();

  std::ostringstream csv;
  csv << "kind,index,pc1,pc2,w,x,y,z\n";
  for (Eigen::Index j = 0; j < n; ++j) {
    csv << "atom," << j << ',' << num(plot.atom_xy(0, j)) << ',' << num(plot.atom_xy(1, j));
    for (int r = 0; r < 4; ++r) csv << ',' << num(dict.atoms(r, j));
    csv << '\n';
  }
  for (Eigen::Index s = 0; s < m; ++s) {
    csv << "sample," << s << ',' << num(plot.sample_xy(0, s)) << ',' << num(plot.sample_xy(1, s));
    for (int r = 0; r < 4; ++r) csv << ',' << num(samples(r, s));
    csv << '\n';
  }
  plot.csv = csv.str();
  if (n < 3) return plot;

  plot.hull = convex_hull_2d(plot.atom_xy);

  std::optional<Eigen::Vector2d> recon;
  if (!plot.active.empty()) {
    Eigen::Vector4d q = nlerp(std::span<const double>(code.p.data(), code.p.size()), dict.atoms).coeffs();
    // same hemisphere as the aligned atoms
    const Eigen::Index lead = plot.active.front();
    if (q.dot(all.col(lead)) < 0) q = -q;
    recon = frame.project(q);
  }

  Eigen::Vector2d lo = plot.atom_xy.rowwise().minCoeff(), hi = plot.atom_xy.rowwise().maxCoeff();
  if (m > 0) {
    lo = lo.cwiseMin(plot.sample_xy.rowwise().minCoeff());
    hi = hi.cwiseMax(plot.sample_xy.rowwise().maxCoeff());
  }
  const double size = 480.0, margin = 20.0;
  const double span = std::max((hi - lo).maxCoeff(), 1e-12);
  auto sx = [&](const Eigen::Vector2d& p) { return margin + (p.x() - lo.x()) / span * (size - 2 * margin); };
  auto sy = [&](const Eigen::Vector2d& p) { return size - margin - (p.y() - lo.y()) / span * (size - 2 * margin); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n"
      << "  <rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  svg << "  <polygon class=\"hull\" fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < plot.hull.size(); ++i) {
    const Eigen::Vector2d p = plot.atom_xy.col(plot.hull[i]);
    svg << (i ? " " : "") << px(sx(p)) << ',' << px(sy(p));
  }
  svg << "\"/>\n";
  for (Eigen::Index s = 0; s < m; ++s) {
    const Eigen::Vector2d p = plot.sample_xy.col(s);
    svg << "  <circle class=\"sample\" cx=\"" << px(sx(p)) << "\" cy=\"" << px(sy(p))
        << "\" r=\"1.5\" fill=\"gray\"/>\n";
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const bool active = std::find(plot.active.begin(), plot.active.end(), j) != plot.active.end();
    const Eigen::Vector2d p = plot.atom_xy.col(j);
    svg << "  <circle class=\"atom" << (active ? " active" : "") << "\" data-index=\"" << j << "\" cx=\""
        << px(sx(p)) << "\" cy=\"" << px(sy(p)) << "\" r=\"4\" fill=\"" << (active ? "red" : "blue") << "\"/>\n";
  }
  if (recon) {
    svg << "  <circle class=\"reconstruction\" cx=\"" << px(sx(*recon)) << "\" cy=\"" << px(sy(*recon))
        << "\" r=\"5\" fill=\"none\" stroke=\"green\" stroke-width=\"2\"/>\n";
  }
  svg << "</svg>\n";
  plot.svg = svg.str();
  return plot;
}

}  // namespace kinedict
