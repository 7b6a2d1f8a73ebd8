#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

namespace kinedict {

enum class DatasetFormat { CsvAxisAngle, CsvQuat, Jsonl, CsvVec };

std::string to_string(DatasetFormat f);
DatasetFormat dataset_format_from_string(const std::string& s);

/// Frames of per-joint records. For rotation formats each joint block is a 4 x frames matrix of
/// canonical quaternions (w, x, y, z); csv-vec data is a single d x frames block named "vec".
struct PoseDataset {
  std::vector<std::string> joint_names;
  std::vector<std::string> frame_ids;
  std::vector<Eigen::MatrixXd> joints;
  DatasetFormat format = DatasetFormat::CsvQuat;

  std::size_t frames() const { return frame_ids.size(); }
  bool is_rotation() const { return format != DatasetFormat::CsvVec; }
  /// Column block of one joint; throws InvalidInput for unknown names.
  const Eigen::MatrixXd& joint(const std::string& name) const;
  /// All joint blocks side by side (d x frames*joints).
  Eigen::MatrixXd pooled() const;
};

/// Reads a dataset file.
///   csv-axisangle: frame_id, then one rotation vector (axis * angle, radians) per joint
///   csv-quat:      frame_id, then w,x,y,z per joint
///   csv-vec:       frame_id, then the entries of one real vector
///   jsonl:         one object per line {"frame": id, "quaternions": [[w,x,y,z], ...]}; an optional
///                  "joint_names" array on the first line names the joints
/// A leading CSV line that does not parse as numbers is a header; joint names are taken from it.
/// Errors carry "path:line:column".
PoseDataset ingest(const std::filesystem::path& path, DatasetFormat format);

/// Writes csv-quat (or csv-vec for vector data) with a header and 17 significant digits.
void export_csv(const PoseDataset& data, const std::filesystem::path& path);

/// Builds a rotation dataset from per-joint 4 x frames blocks; frame ids are 0..frames-1.
PoseDataset make_rotation_dataset(std::vector<std::string> names, std::vector<Eigen::MatrixXd> blocks);
PoseDataset make_vector_dataset(const Eigen::MatrixXd& columns);

}  // namespace kinedict
