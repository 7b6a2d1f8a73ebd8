#include "kinedict/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "kinedict/error.hpp"
#include "kinedict/quat.hpp"

namespace kinedict {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] void bad(const std::filesystem::path& path, std::size_t line, std::size_t col, const std::string& msg) {
  fail(ErrorKind::Data, path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
}

std::string strip_suffix(const std::string& s) {
  const auto us = s.rfind('_');
  return us == std::string::npos || us == 0 ? s : s.substr(0, us);
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void assemble(PoseDataset& ds, const std::vector<std::vector<double>>& rows, Eigen::Index width) {
  const auto frames = static_cast<Eigen::Index>(rows.size());
  const std::size_t nj = ds.joint_names.size();
  ds.joints.assign(nj, Eigen::MatrixXd(width, frames));
  for (Eigen::Index f = 0; f < frames; ++f)
    for (std::size_t j = 0; j < nj; ++j)
      for (Eigen::Index r = 0; r < width; ++r)
        ds.joints[j](r, f) = rows[static_cast<std::size_t>(f)][j * static_cast<std::size_t>(width) + static_cast<std::size_t>(r)];
}

PoseDataset ingest_csv(const std::filesystem::path& path, std::istream& in, DatasetFormat format) {
  PoseDataset ds;
  ds.format = format;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t expected = 0;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto fields = split_csv(line);
    if (first) {
      first = false;
      bool numeric = fields.size() >= 2;
      double tmp;
      for (std::size_t i = 1; i < fields.size() && numeric; ++i) numeric = parse_double(fields[i], tmp);
      if (!numeric) {
        header = fields;
        continue;
      }
    }
    if (fields.size() < 2) bad(path, lineno, 1, "expected a frame id followed by values");
    const std::size_t values = fields.size() - 1;
    if (expected == 0) {
      if (format == DatasetFormat::CsvAxisAngle && values % 3 != 0)
        bad(path, lineno, fields.size(), "csv-axisangle rows need 3 values per joint, got " + std::to_string(values));
      if (format == DatasetFormat::CsvQuat && values % 4 != 0)
        bad(path, lineno, fields.size(), "csv-quat rows need 4 values per joint, got " + std::to_string(values));
      expected = values;
    } else if (values != expected) {
      bad(path, lineno, std::min(values, expected) + 2,
          "expected " + std::to_string(expected) + " values, got " + std::to_string(values));
    }
    std::vector<double> row;
    row.reserve(values);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v;
      if (!parse_double(fields[i], v) || !std::isfinite(v)) bad(path, lineno, i + 1, "not a finite number: '" + fields[i] + "'");
      row.push_back(v);
    }
    if (format == DatasetFormat::CsvQuat || format == DatasetFormat::CsvAxisAngle) {
      const std::size_t w = format == DatasetFormat::CsvQuat ? 4 : 3;
      std::vector<double> quats;
      for (std::size_t j = 0; j < values / w; ++j) {
        try {
          Eigen::Vector4d q;
          if (w == 4) {
            q = UnitQuaternion::from_wxyz(row[4 * j], row[4 * j + 1], row[4 * j + 2], row[4 * j + 3]).coeffs();
          } else {
            q = from_rotation_vector(Eigen::Vector3d(row[3 * j], row[3 * j + 1], row[3 * j + 2])).coeffs();
          }
          quats.insert(quats.end(), q.data(), q.data() + 4);
        } catch (const Error& e) {
          bad(path, lineno, 2 + j * w, e.what());
        }
      }
      row = std::move(quats);
    }
    ds.frame_ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorKind::Data, path.string() + ": no data rows");

  if (format == DatasetFormat::CsvVec) {
    ds.joint_names = {"vec"};
    assemble(ds, rows, static_cast<Eigen::Index>(expected));
    return ds;
  }
  const std::size_t w = format == DatasetFormat::CsvQuat ? 4 : 3;
  const std::size_t nj = expected / w;
  if (header.size() == expected + 1) {
    for (std::size_t j = 0; j < nj; ++j) ds.joint_names.push_back(strip_suffix(header[1 + j * w]));
  } else {
    for (std::size_t j = 0; j < nj; ++j) ds.joint_names.push_back("joint" + std::to_string(j));
  }
  assemble(ds, rows, 4);
  return ds;
}

PoseDataset ingest_jsonl(const std::filesystem::path& path, std::istream& in) {
  PoseDataset ds;
  ds.format = DatasetFormat::Jsonl;
  std::vector<std::vector<double>> rows;
  std::size_t nj = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      bad(path, lineno, e.byte, "invalid JSON");
    }
    if (!j.is_object() || !j.contains("quaternions") || !j["quaternions"].is_array())
      bad(path, lineno, 1, "expected an object with a \"quaternions\" array");
    const auto& qs = j["quaternions"];
    if (rows.empty()) {
      nj = qs.size();
      if (nj == 0) bad(path, lineno, 1, "frame has no joints");
      if (j.contains("joint_names")) {
        try {
          ds.joint_names = j["joint_names"].get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception&) {
          bad(path, lineno, 1, "joint_names must be an array of strings");
        }
        if (ds.joint_names.size() != nj) bad(path, lineno, 1, "joint_names length differs from the quaternion count");
      }
    } else if (qs.size() != nj) {
      bad(path, lineno, 1, "expected " + std::to_string(nj) + " joints, got " + std::to_string(qs.size()));
    }
    std::vector<double> row;
    for (std::size_t k = 0; k < qs.size(); ++k) {
      const auto& q = qs[k];
      if (!q.is_array() || q.size() != 4) bad(path, lineno, 1, "joint " + std::to_string(k) + " is not a 4-array");
      try {
        const auto v = UnitQuaternion::from_wxyz(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                                 q[3].get<double>()).coeffs();
        row.insert(row.end(), v.data(), v.data() + 4);
      } catch (const nlohmann::json::exception&) {
        bad(path, lineno, 1, "joint " + std::to_string(k) + " has non-numeric entries");
      } catch (const Error& e) {
        bad(path, lineno, 1, "joint " + std::to_string(k) + ": " + e.what());
      }
    }
    if (j.contains("frame"))
      ds.frame_ids.push_back(j["frame"].is_string() ? j["frame"].get<std::string>() : j["frame"].dump());
    else
      ds.frame_ids.push_back(std::to_string(rows.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorKind::Data, path.string() + ": no data rows");
  if (ds.joint_names.empty())
    for (std::size_t k = 0; k < nj; ++k) ds.joint_names.push_back("joint" + std::to_string(k));
  assemble(ds, rows, 4);
  return ds;
}

}  // namespace

std::string to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::CsvAxisAngle: return "csv-axisangle";
    case DatasetFormat::CsvQuat: return "csv-quat";
    case DatasetFormat::Jsonl: return "jsonl";
    case DatasetFormat::CsvVec: return "csv-vec";
  }
  return "?";
}

DatasetFormat dataset_format_from_string(const std::string& s) {
  if (s == "csv-axisangle") return DatasetFormat::CsvAxisAngle;
  if (s == "csv-quat") return DatasetFormat::CsvQuat;
  if (s == "jsonl") return DatasetFormat::Jsonl;
  if (s == "csv-vec") return DatasetFormat::CsvVec;
  fail(ErrorKind::InvalidInput, "unknown dataset format '" + s + "' (csv-axisangle, csv-quat, jsonl, csv-vec)");
}

const Eigen::MatrixXd& PoseDataset::joint(const std::string& name) const {
  for (std::size_t j = 0; j < joint_names.size(); ++j)
    if (joint_names[j] == name) return joints[j];
  fail(ErrorKind::InvalidInput, "dataset has no joint '" + name + "'");
}

Eigen::MatrixXd PoseDataset::pooled() const {
  if (joints.empty()) return {};
  Eigen::MatrixXd out(joints[0].rows(), joints[0].cols() * static_cast<Eigen::Index>(joints.size()));
  for (std::size_t j = 0; j < joints.size(); ++j)
    out.middleCols(static_cast<Eigen::Index>(j) * joints[0].cols(), joints[0].cols()) = joints[j];
  return out;
}

PoseDataset ingest(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read " + path.string());
  if (format == DatasetFormat::Jsonl) return ingest_jsonl(path, in);
  return ingest_csv(path, in, format);
}

void export_csv(const PoseDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Data, "cannot write " + path.string());
  out << "frame_id";
  if (data.is_rotation()) {
    for (const auto& n : data.joint_names)
      for (const char* c : {"_w", "_x", "_y", "_z"}) out << ',' << n << c;
  } else {
    for (Eigen::Index r = 0; r < data.joints.at(0).rows(); ++r) out << ",v" << r;
  }
  out << '\n';
  for (std::size_t f = 0; f < data.frames(); ++f) {
    out << data.frame_ids[f];
    for (const auto& block : data.joints)
      for (Eigen::Index r = 0; r < block.rows(); ++r) out << ',' << fmt17(block(r, static_cast<Eigen::Index>(f)));
    out << '\n';
  }
  if (!out) fail(ErrorKind::Data, "write failed for " + path.string());
}

PoseDataset make_rotation_dataset(std::vector<std::string> names, std::vector<Eigen::MatrixXd> blocks) {
  require(!blocks.empty() && names.size() == blocks.size(), "need one name per joint block");
  PoseDataset ds;
  ds.format = DatasetFormat::CsvQuat;
  for (const auto& b : blocks) require(b.rows() == 4 && b.cols() == blocks[0].cols(), "joint blocks must be 4 x frames");
  ds.joint_names = std::move(names);
  ds.joints = std::move(blocks);
  for (Eigen::Index f = 0; f < ds.joints[0].cols(); ++f) ds.frame_ids.push_back(std::to_string(f));
  return ds;
}

PoseDataset make_vector_dataset(const Eigen::MatrixXd& columns) {
  PoseDataset ds;
  ds.format = DatasetFormat::CsvVec;
  ds.joint_names = {"vec"};
  ds.joints = {columns};
  for (Eigen::Index f = 0; f < columns.cols(); ++f) ds.frame_ids.push_back(std::to_string(f));
  return ds;
}

}  // namespace kinedict
