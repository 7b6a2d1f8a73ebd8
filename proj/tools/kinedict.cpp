// kinedict command-line front end.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "kinedict/cluster.hpp"
#include "kinedict/dataset.hpp"
#include "kinedict/error.hpp"
#include "kinedict/fitting.hpp"
#include "kinedict/hull_plot.hpp"
#include "kinedict/obdl.hpp"
#include "kinedict/parallel.hpp"
#include "kinedict/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kinedict;

namespace {

// JSON config: top-level keys are global options, nested objects hold subcommand options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string key(std::string k) {
    std::replace(k.begin(), k.end(), '_', '-');
    return k;
  }
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void collect(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [k, v] : j.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(k);
        collect(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key(k);
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs = {scalar(v)};
      }
      out.push_back(std::move(item));
    }
  }
};

struct Run {
  std::string command;
  std::uint64_t seed = 0;
};

json provenance(const Run& run) { return {{"command", run.command}, {"seed", run.seed}, {"version", KINEDICT_VERSION}}; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Data, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Data, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
}

void need(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::InvalidInput, flag + " is required");
}

// A dictionary list is {"dictionaries": [paths]} (or a bare array), relative to the list file.
std::vector<fs::path> read_dictionary_list(const fs::path& path) {
  const json j = read_json(path);
  const json& arr = j.is_array() ? j : j.value("dictionaries", json::array());
  std::vector<fs::path> out;
  try {
    for (const auto& p : arr) {
      const fs::path rel(p.get<std::string>());
      out.push_back(rel.is_absolute() ? rel : path.parent_path() / rel);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
  if (out.empty()) fail(ErrorKind::Data, path.string() + " lists no dictionaries");
  return out;
}

struct Selection {
  std::string name;
  Eigen::MatrixXd data;
};

std::vector<Selection> select_joints(const PoseDataset& ds, const std::string& joint, bool all) {
  std::vector<Selection> out;
  if (all) {
    for (std::size_t j = 0; j < ds.joint_names.size(); ++j) out.push_back({ds.joint_names[j], ds.joints[j]});
  } else if (!joint.empty()) {
    out.push_back({joint, ds.joint(joint)});
  } else {
    if (ds.joint_names.size() != 1)
      fail(ErrorKind::InvalidInput, "dataset has " + std::to_string(ds.joint_names.size()) +
                                        " joints; pass --joint NAME or --all-joints");
    out.push_back({ds.joint_names[0], ds.joints[0]});
  }
  return out;
}

struct DataOptions {
  std::string path;
  std::string format = "csv-quat";
  std::string joint;
  bool all_joints = false;

  void add(CLI::App* app) {
    app->add_option("--data", path, "Pose dataset file");
    app->add_option("--format", format, "csv-axisangle | csv-quat | jsonl | csv-vec")->capture_default_str();
    app->add_option("--joint", joint, "Joint to use (default: the only joint)");
    app->add_flag("--all-joints", all_joints, "Process every joint separately");
  }
  PoseDataset load() const {
    need(path, "--data");
    return ingest(path, dataset_format_from_string(format));
  }
};

// Writes one dictionary per selection; several joints go to OUT/<joint>.json plus a list file.
void write_dictionaries(const std::vector<Dictionary>& dicts, const std::string& out, bool many, const Run& run) {
  need(out, "--out");
  if (!many) {
    json j = to_json(dicts.front());
    j["run"] = provenance(run);
    write_json(out, j);
    return;
  }
  json list = json::array();
  for (const Dictionary& d : dicts) {
    json j = to_json(d);
    j["run"] = provenance(run);
    write_json(fs::path(out) / (d.joint_label + ".json"), j);
    list.push_back(d.joint_label + ".json");
  }
  write_json(fs::path(out) / "dictionaries.json", {{"dictionaries", list}, {"run", provenance(run)}});
}

const char* kInspectFooter = R"(Rotation encodings:
  csv-axisangle  frame_id, then one rotation vector per joint: the unit rotation axis scaled
                 by the angle in radians, so (0, 0, 1.5708) is a quarter turn about z.
  csv-quat       frame_id, then w,x,y,z per joint.
  jsonl          {"frame": id, "quaternions": [[w,x,y,z], ...]} per line.
  csv-vec        frame_id, then one real vector (Euclidean atoms).
All rotations are stored as unit quaternions on the w >= 0 hemisphere.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse quaternion dictionaries for skeletal pose priors"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.set_version_flag("--version", KINEDICT_VERSION);

  Run run;
  {
    std::string cmd = "kinedict";
    for (int i = 1; i < argc; ++i) cmd += std::string(" ") + argv[i];
    run.command = cmd;
  }
  app.add_option("--seed", run.seed, "Random seed")->capture_default_str();

  // learn
  auto* learn_cmd = app.add_subcommand("learn", "Learn a dictionary with online block-coordinate updates");
  DataOptions learn_data;
  learn_data.add(learn_cmd);
  LearnConfig lc;
  std::string learn_mode, learn_out;
  learn_cmd->add_option("--atoms", lc.atoms, "Dictionary size")->capture_default_str();
  learn_cmd->add_option("--batch-size", lc.batch_size, "Mini-batch size")->capture_default_str();
  learn_cmd->add_option("--steps", lc.steps, "Number of mini-batch steps")->capture_default_str();
  learn_cmd->add_option("--momentum", lc.momentum, "History forgetting factor in [0, 1)")->capture_default_str();
  learn_cmd->add_option("--inner-steps", lc.inner.max_steps, "Code solver step cap")->capture_default_str();
  learn_cmd->add_option("--inner-tol", lc.inner.rel_tol, "Code solver relative tolerance")->capture_default_str();
  learn_cmd->add_option("--mode", learn_mode, "quaternion | euclidean (default from data format)");
  learn_cmd->add_option("--out", learn_out, "Output file (directory with --all-joints)");

  // kmeans
  auto* km_cmd = app.add_subcommand("kmeans", "Spherical k-means baseline dictionary");
  DataOptions km_data;
  km_data.add(km_cmd);
  long km_atoms = 128;
  int km_iters = 100;
  std::string km_out;
  km_cmd->add_option("--atoms", km_atoms, "Number of clusters")->capture_default_str();
  km_cmd->add_option("--max-iters", km_iters, "Lloyd iteration cap")->capture_default_str();
  km_cmd->add_option("--out", km_out, "Output file (directory with --all-joints)");

  // coverage
  auto* cov_cmd = app.add_subcommand("coverage", "Ratio of held-out samples a dictionary reconstructs");
  DataOptions cov_data;
  cov_data.add(cov_cmd);
  CoverageConfig cc;
  std::string cov_dict, cov_list, cov_out, cov_csv;
  cov_cmd->add_option("--dictionary", cov_dict, "Dictionary file");
  cov_cmd->add_option("--dictionaries", cov_list, "Dictionary list, one per joint (with --all-joints)");
  cov_cmd->add_option("--threshold-deg", cc.threshold_deg, "Geodesic threshold in degrees")->capture_default_str();
  cov_cmd->add_option("--restarts", cc.restarts, "Code solver restarts per sample")->capture_default_str();
  cov_cmd->add_option("--out", cov_out, "Report JSON");
  cov_cmd->add_option("--csv", cov_csv, "Per-sample errors CSV");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Recover pose codes and camera from keypoints");
  FitConfig fc;
  std::string fit_problem, fit_out;
  fit_cmd->add_option("--problem", fit_problem, "Problem JSON");
  fit_cmd->add_option("--restarts", fc.restarts, "Random restarts")->capture_default_str();
  fit_cmd->add_option("--max-iters", fc.max_iters, "Optimizer iterations per restart")->capture_default_str();
  fit_cmd->add_option("--out", fit_out, "Result JSON");

  // synth
  auto* syn_cmd = app.add_subcommand("synth", "Generate synthetic data with ground truth");
  std::string generator = "clusters", syn_out, syn_dicts;
  ClusterParams cp;
  ArcParams ap;
  PlantedParams pp;
  ProblemParams prp;
  int samples = 1000, joints = 1, count = 1;
  syn_cmd->add_option("--generator", generator, "clusters | arcs | planted-euclidean | problem")->capture_default_str();
  syn_cmd->add_option("--samples", samples, "Samples per joint")->capture_default_str();
  syn_cmd->add_option("--joints", joints, "Independent joints")->capture_default_str();
  syn_cmd->add_option("--clusters", cp.clusters, "Cluster count")->capture_default_str();
  syn_cmd->add_option("--spread-deg", cp.spread_deg, "RMS geodesic spread around each center")->capture_default_str();
  syn_cmd->add_option("--center-max-deg", cp.center_max_deg, "Largest center rotation angle (180 = uniform)")
      ->capture_default_str();
  syn_cmd->add_option("--arcs", ap.arcs, "Arc count")->capture_default_str();
  syn_cmd->add_option("--arc-deg", ap.arc_deg, "Geodesic length of each arc")->capture_default_str();
  syn_cmd->add_option("--jitter-deg", ap.jitter_deg, "RMS jitter off the arc")->capture_default_str();
  syn_cmd->add_option("--dim", pp.dim, "Vector dimension")->capture_default_str();
  syn_cmd->add_option("--atoms", pp.atoms, "Hidden dictionary size")->capture_default_str();
  syn_cmd->add_option("--support", pp.support, "Active atoms per sample")->capture_default_str();
  syn_cmd->add_option("--noise", pp.noise, "Gaussian noise standard deviation")->capture_default_str();
  syn_cmd->add_option("--dictionaries", syn_dicts, "Dictionary list for the problem generator");
  syn_cmd->add_option("--count", count, "Problems to generate")->capture_default_str();
  syn_cmd->add_flag("--with-3d,!--no-3d", prp.with_3d, "Include 3D observations in generated problems")->capture_default_str();
  syn_cmd->add_option("--out", syn_out, "Output directory");

  // plot-hull
  auto* plot_cmd = app.add_subcommand("plot-hull", "Project atoms and samples to 2D and draw the hull");
  DataOptions plot_data;
  plot_data.add(plot_cmd);
  std::string plot_dict, plot_out;
  long plot_sample = 0;
  long plot_max = 500;
  int plot_restarts = 4;
  plot_cmd->add_option("--dictionary", plot_dict, "Quaternion dictionary file");
  plot_cmd->add_option("--sample", plot_sample, "Sample whose code is highlighted")->capture_default_str();
  plot_cmd->add_option("--max-samples", plot_max, "Samples drawn")->capture_default_str();
  plot_cmd->add_option("--restarts", plot_restarts, "Code solver restarts")->capture_default_str();
  plot_cmd->add_option("--out", plot_out, "Output prefix (writes .svg, .csv and .json)");

  // inspect
  auto* insp_cmd = app.add_subcommand("inspect", "Summarize a dataset, dictionary or problem file");
  DataOptions insp_data;
  insp_data.add(insp_cmd);
  std::string insp_dict, insp_problem;
  insp_cmd->add_option("--dictionary", insp_dict, "Dictionary file");
  insp_cmd->add_option("--problem", insp_problem, "Problem file");
  insp_cmd->footer(kInspectFooter);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (learn_cmd->parsed()) {
      const PoseDataset ds = learn_data.load();
      lc.seed = run.seed;
      lc.mode = learn_mode.empty() ? (ds.is_rotation() ? AtomMode::Quaternion : AtomMode::Euclidean)
                                   : atom_mode_from_string(learn_mode);
      std::vector<Dictionary> dicts;
      const auto sel = select_joints(ds, learn_data.joint, learn_data.all_joints);
      for (const auto& s : sel) {
        lc.joint_label = s.name;
        dicts.push_back(learn(s.data, lc));
      }
      write_dictionaries(dicts, learn_out, learn_data.all_joints, run);
    } else if (km_cmd->parsed()) {
      const PoseDataset ds = km_data.load();
      require(ds.is_rotation(), "k-means needs quaternion data");
      std::vector<Dictionary> dicts;
      for (const auto& s : select_joints(ds, km_data.joint, km_data.all_joints)) {
        Dictionary d = kmeans_quat(s.data, km_atoms, run.seed, km_iters);
        d.joint_label = s.name;
        dicts.push_back(std::move(d));
      }
      write_dictionaries(dicts, km_out, km_data.all_joints, run);
    } else if (cov_cmd->parsed()) {
      const PoseDataset ds = cov_data.load();
      require(ds.is_rotation(), "coverage needs quaternion data");
      cc.seed = run.seed;
      const auto sel = select_joints(ds, cov_data.joint, cov_data.all_joints);
      std::vector<fs::path> paths;
      if (!cov_list.empty()) {
        paths = read_dictionary_list(cov_list);
      } else {
        need(cov_dict, "--dictionary");
        paths = {cov_dict};
      }
      if (paths.size() != sel.size())
        fail(ErrorKind::InvalidInput, std::to_string(paths.size()) + " dictionaries for " +
                                          std::to_string(sel.size()) + " joints");
      json reports = json::array();
      std::string csv = "joint,index,error_deg\n";
      double mean = 0.0;
      for (std::size_t i = 0; i < sel.size(); ++i) {
        const Dictionary d = load_dictionary(paths[i]);
        const CoverageReport rep = coverage(d, sel[i].data, cc);
        json r = to_json(rep);
        r["joint"] = sel[i].name;
        reports.push_back(r);
        mean += rep.ratio / static_cast<double>(sel.size());
        for (std::size_t k = 0; k < rep.per_sample_errors_deg.size(); ++k) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.17g", rep.per_sample_errors_deg[k]);
          csv += sel[i].name + "," + std::to_string(k) + "," + buf + "\n";
        }
      }
      const json out = {{"joints", reports}, {"mean_ratio", mean}, {"provenance", provenance(run)}};
      if (cov_out.empty())
        std::cout << out.dump(2) << "\n";
      else
        write_json(cov_out, out);
      if (!cov_csv.empty()) write_text(cov_csv, csv);
    } else if (fit_cmd->parsed()) {
      need(fit_problem, "--problem");
      const FitProblem problem = load_problem(fit_problem);
      fc.seed = run.seed;
      const FitResult res = fit(problem, fc);
      json out = to_json(res, problem);
      out["provenance"] = provenance(run);
      if (fit_out.empty())
        std::cout << out.dump(2) << "\n";
      else
        write_json(fit_out, out);
    } else if (syn_cmd->parsed()) {
      need(syn_out, "--out");
      const fs::path dir(syn_out);
      if (generator == "problem") {
        need(syn_dicts, "--dictionaries");
        require(count >= 1, "--count must be positive");
        const auto paths = read_dictionary_list(syn_dicts);
        std::vector<Dictionary> dicts;
        std::vector<std::string> rel;
        fs::create_directories(dir);
        for (const auto& p : paths) {
          dicts.push_back(load_dictionary(p));
          rel.push_back(fs::relative(fs::absolute(p), fs::absolute(dir)).generic_string());
        }
        for (int i = 0; i < count; ++i) {
          const SynthProblem sp = synth_problem(dicts, prp, mix_seed(run.seed, static_cast<std::uint64_t>(i)));
          json pj = problem_to_json(sp.problem, rel);
          pj["provenance"] = provenance(run);
          write_json(dir / ("problem_" + std::to_string(i) + ".json"), pj);
          json codes = json::array();
          for (const auto& c : sp.codes) codes.push_back(std::vector<double>(c.data(), c.data() + c.size()));
          json k3 = json::array();
          for (Eigen::Index r = 0; r < sp.points_3d.rows(); ++r)
            k3.push_back({sp.points_3d(r, 0), sp.points_3d(r, 1), sp.points_3d(r, 2)});
          write_json(dir / ("truth_" + std::to_string(i) + ".json"),
                     {{"generator", "problem"},
                      {"codes", codes},
                      {"camera",
                       {{"scale", sp.camera.scale},
                        {"translation", {sp.camera.translation.x(), sp.camera.translation.y()}},
                        {"r6", sp.camera.r6}}},
                      {"keypoints_3d", k3},
                      {"provenance", provenance(run)}});
        }
      } else {
        SynthOutput so;
        if (generator == "clusters") {
          cp.samples = samples;
          cp.joints = joints;
          so = synth_clusters(cp, run.seed);
        } else if (generator == "arcs") {
          ap.samples = samples;
          ap.joints = joints;
          so = synth_arcs(ap, run.seed);
        } else if (generator == "planted-euclidean") {
          pp.samples = samples;
          so = synth_planted_euclidean(pp, run.seed);
        } else {
          fail(ErrorKind::InvalidInput, "unknown generator '" + generator + "'");
        }
        fs::create_directories(dir);
        export_csv(so.data, dir / "data.csv");
        so.truth["format"] = to_string(so.data.format);
        so.truth["provenance"] = provenance(run);
        write_json(dir / "truth.json", so.truth);
      }
    } else if (plot_cmd->parsed()) {
      need(plot_dict, "--dictionary");
      need(plot_out, "--out");
      const Dictionary d = load_dictionary(plot_dict);
      const PoseDataset ds = plot_data.load();
      const auto sel = select_joints(ds, plot_data.joint, false);
      const Eigen::MatrixXd& x = sel.front().data;
      require(plot_sample >= 0 && plot_sample < x.cols(), "--sample is out of range");
      require(plot_max >= 1, "--max-samples must be positive");
      CoverageConfig pc;
      pc.restarts = plot_restarts;
      pc.seed = run.seed;
      const SampleFit sf = fit_sample(d, x.col(plot_sample), pc, mix_seed(run.seed, 0));
      const Eigen::Index shown = std::min<Eigen::Index>(plot_max, x.cols());
      const HullPlot hp = hull_plot(d, x.leftCols(shown), sf.code);
      write_text(plot_out + ".csv", hp.csv);
      if (!hp.svg.empty()) write_text(plot_out + ".svg", hp.svg);
      write_json(plot_out + ".json",
                 {{"sample", plot_sample},
                  {"code", std::vector<double>(sf.code.p.data(), sf.code.p.data() + sf.code.size())},
                  {"active", hp.active},
                  {"hull", hp.hull},
                  {"error_deg", sf.error_deg},
                  {"svg", !hp.svg.empty()},
                  {"provenance", provenance(run)}});
    } else if (insp_cmd->parsed()) {
      json out;
      if (!insp_dict.empty()) {
        const Dictionary d = load_dictionary(insp_dict);
        out = {{"kind", "dictionary"}, {"mode", to_string(d.mode)}, {"joint_label", d.joint_label},
               {"d", d.dim()},          {"N", d.size()},            {"method", d.provenance.method}};
      } else if (!insp_problem.empty()) {
        const FitProblem p = load_problem(insp_problem);
        out = {{"kind", "problem"},
               {"joints", p.skeleton.size()},
               {"visible_2d", std::count(p.visible_2d.begin(), p.visible_2d.end(), true)},
               {"has_3d", p.observed_3d.has_value()}};
      } else {
        const PoseDataset ds = insp_data.load();
        out = {{"kind", "dataset"},
               {"format", to_string(ds.format)},
               {"frames", ds.frames()},
               {"joints", ds.joint_names},
               {"dim", ds.joints.front().rows()}};
      }
      std::cout << out.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "kinedict: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::InvalidInput: return 1;
      case ErrorKind::Data:
      case ErrorKind::UnderConstrained: return 2;
      case ErrorKind::DegenerateCombination:
      case ErrorKind::Numeric: return 3;
    }
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "kinedict: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kinedict: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
