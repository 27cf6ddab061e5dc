#include "handfit/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>

#include "handfit/text.hpp"

namespace handfit {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw FormatError(where + ": unknown key '" + key + "'");
    }
  }
}

double finite_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw FormatError(where + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw FormatError(where + ": non-finite coordinate");
  return d;
}

ordered_json points_json(const PointsD& p) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) a.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return a;
}

PointsD points_from_json(const json& a, const std::string& where) {
  if (!a.is_array()) throw FormatError(where + ": expected an array of points");
  PointsD p(a.size(), 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_array() || a[i].size() != 3) throw FormatError(where + ": point " + std::to_string(i) + " is not [x,y,z]");
    for (int c = 0; c < 3; ++c) p(i, c) = finite_number(a[i][c], where);
  }
  return p;
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const json& a, const std::string& where) {
  if (!a.is_array()) throw FormatError(where + ": expected an array");
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = finite_number(a[i], where);
  return v;
}

template <typename F>
void for_each_line(const std::string& text, const std::string& source, F&& f) {
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed JSON (" + e.what() + ")");
    }
    try {
      f(j, where);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

ordered_json hyper_json(const AdamHyper& h) {
  return {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"epsilon", h.epsilon}};
}

void hyper_from_json(const json& j, AdamHyper& h, const std::string& where) {
  check_keys(j, {"lr", "beta1", "beta2", "epsilon"}, where);
  if (j.contains("lr")) h.lr = j["lr"].get<double>();
  if (j.contains("beta1")) h.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) h.beta2 = j["beta2"].get<double>();
  if (j.contains("epsilon")) h.epsilon = j["epsilon"].get<double>();
}

ordered_json stage_json(const StageConfig& s) {
  return {{"max_iters", s.max_iters}, {"rel_tol", s.rel_tol}, {"patience", s.patience}};
}

void stage_from_json(const json& j, StageConfig& s, const std::string& where) {
  check_keys(j, {"max_iters", "rel_tol", "patience"}, where);
  if (j.contains("max_iters")) s.max_iters = j["max_iters"].get<int>();
  if (j.contains("rel_tol")) s.rel_tol = j["rel_tol"].get<double>();
  if (j.contains("patience")) s.patience = j["patience"].get<int>();
}

std::string frame_file(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "meshes/frame_%04d.obj", k);
  return buf;
}

}  // namespace

ConventionTable::ConventionTable() { table_["native"] = {"native", {}}; }

ConventionTable ConventionTable::parse(const std::string& json_text) {
  ConventionTable t;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("conventions: malformed JSON (") + e.what() + ")");
  }
  check_keys(j, {"conventions"}, "conventions");
  if (!j.contains("conventions") || !j["conventions"].is_object()) {
    throw FormatError("conventions: missing 'conventions' object");
  }
  for (const auto& [name, entry] : j["conventions"].items()) {
    const std::string where = "conventions." + name;
    check_keys(entry, {"joints", "description"}, where);
    KeypointConvention c{name, {}};
    if (entry.contains("joints")) {
      if (!entry["joints"].is_array()) throw FormatError(where + ".joints: expected an array of names");
      c.joints = entry["joints"].get<std::vector<std::string>>();
      if (c.joints.empty()) throw FormatError(where + ".joints: empty");
    }
    t.table_[name] = std::move(c);
  }
  return t;
}

ConventionTable ConventionTable::load(const std::string& path) { return parse(read_file(path)); }

bool ConventionTable::contains(const std::string& name) const { return table_.count(name) > 0; }

const KeypointConvention& ConventionTable::at(const std::string& name) const {
  const auto it = table_.find(name);
  if (it == table_.end()) throw FormatError("unknown keypoint convention '" + name + "'");
  return it->second;
}

std::optional<int> ConventionTable::size_of(const std::string& name) const {
  const auto& c = at(name);
  if (c.joints.empty()) return std::nullopt;
  return static_cast<int>(c.joints.size());
}

KeypointMapping ConventionTable::mapping(const std::string& name, const HandModel& model) const {
  const auto& c = at(name);
  KeypointMapping m;
  if (c.joints.empty()) {
    for (int j = 0; j < model.skeleton_size(); ++j) m.push_back(j);
    return m;
  }
  for (const auto& joint : c.joints) {
    const auto it = std::find(model.joint_names.begin(), model.joint_names.end(), joint);
    if (it == model.joint_names.end()) {
      throw InvariantError("convention '" + name + "' names joint '" + joint + "' which model '" + model.name +
                           "' does not have");
    }
    m.push_back(static_cast<int>(it - model.joint_names.begin()));
  }
  return m;
}

std::vector<KeypointFrame> parse_keypoints_text(const std::string& text, const ConventionTable& conventions,
                                                const std::string& source) {
  std::vector<KeypointFrame> frames;
  for_each_line(text, source, [&](const json& j, const std::string& where) {
    check_keys(j, {"t", "pts", "mask", "convention", "units"}, where);
    if (!j.contains("t") || !j.contains("pts")) throw FormatError(where + ": 't' and 'pts' are required");
    KeypointFrame f;
    f.timestamp = finite_number(j["t"], where + ": t");
    f.convention = j.value("convention", std::string("native"));
    if (!conventions.contains(f.convention)) {
      throw FormatError(where + ": unknown convention '" + f.convention + "'");
    }
    double unit = 1;
    const std::string units = j.value("units", std::string("mm"));
    if (units == "m") {
      unit = 1000;
    } else if (units == "cm") {
      unit = 10;
    } else if (units != "mm") {
      throw FormatError(where + ": unknown units '" + units + "'");
    }
    const json& pts = j["pts"];
    if (!pts.is_array() || pts.empty()) throw FormatError(where + ": 'pts' must be a non-empty array");
    const auto n = static_cast<int>(pts.size());
    if (const auto expected = conventions.size_of(f.convention); expected && *expected != n) {
      throw FormatError(where + ": " + std::to_string(n) + " points but convention '" + f.convention + "' has " +
                        std::to_string(*expected));
    }
    std::vector<bool> mask(n, true);
    if (j.contains("mask")) {
      if (!j["mask"].is_array() || static_cast<int>(j["mask"].size()) != n) {
        throw FormatError(where + ": 'mask' must have one boolean per point");
      }
      for (int i = 0; i < n; ++i) {
        if (!j["mask"][i].is_boolean()) throw FormatError(where + ": mask entries must be booleans");
        mask[i] = j["mask"][i].get<bool>();
      }
    }
    f.keypoints = PointsD::Zero(n, 3);
    for (int i = 0; i < n; ++i) {
      if (pts[i].is_null()) {
        if (j.contains("mask") && mask[i]) throw FormatError(where + ": point " + std::to_string(i) + " is null but unmasked");
        mask[i] = false;
        continue;
      }
      if (!pts[i].is_array() || pts[i].size() != 3) {
        throw FormatError(where + ": point " + std::to_string(i) + " is not [x,y,z]");
      }
      for (int c = 0; c < 3; ++c) f.keypoints(i, c) = unit * finite_number(pts[i][c], where);
    }
    f.mask = std::move(mask);
    frames.push_back(std::move(f));
  });
  return frames;
}

std::vector<KeypointFrame> parse_keypoints(const std::string& path, const ConventionTable& conventions) {
  return parse_keypoints_text(read_file(path), conventions, path);
}

std::string format_keypoints(const std::vector<KeypointFrame>& frames) {
  std::string out;
  for (const auto& f : frames) {
    ordered_json j;
    j["t"] = f.timestamp;
    ordered_json pts = ordered_json::array();
    ordered_json mask = ordered_json::array();
    for (int i = 0; i < f.size(); ++i) {
      const bool on = f.mask.empty() || f.mask[i];
      if (on) {
        pts.push_back({f.keypoints(i, 0), f.keypoints(i, 1), f.keypoints(i, 2)});
      } else {
        pts.push_back(nullptr);
      }
      mask.push_back(on);
    }
    j["pts"] = pts;
    j["mask"] = mask;
    j["convention"] = f.convention.empty() ? "native" : f.convention;
    out += j.dump() + "\n";
  }
  return out;
}

std::string format_obj(const Mesh& mesh) {
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.vertices.rows()) * 40 + static_cast<std::size_t>(mesh.faces.rows()) * 16);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    out += "v " + format_double(mesh.vertices(i, 0)) + " " + format_double(mesh.vertices(i, 1)) + " " +
           format_double(mesh.vertices(i, 2)) + "\n";
  }
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
    out += "f " + std::to_string(mesh.faces(f, 0) + 1) + " " + std::to_string(mesh.faces(f, 1) + 1) + " " +
           std::to_string(mesh.faces(f, 2) + 1) + "\n";
  }
  return out;
}

Mesh parse_obj(const std::string& text) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector3i> faces;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> tok;
    for (auto t : split(line, ' '))
      if (!trim(t).empty()) tok.push_back(trim(t));
    const std::string where = "OBJ line " + std::to_string(line_no) + ": ";
    try {
      if (tok[0] == "v") {
        if (tok.size() < 4) throw FormatError("vertex needs 3 coordinates");
        verts.emplace_back(parse_double(tok[1]), parse_double(tok[2]), parse_double(tok[3]));
      } else if (tok[0] == "f") {
        if (tok.size() < 4) throw FormatError("face needs at least 3 vertices");
        std::vector<int> idx;
        for (std::size_t k = 1; k < tok.size(); ++k) {
          const long v = parse_long(tok[k].substr(0, tok[k].find('/')));
          const long resolved = v < 0 ? static_cast<long>(verts.size()) + v : v - 1;
          if (v == 0 || resolved < 0 || resolved >= static_cast<long>(verts.size())) {
            throw FormatError("face index " + std::to_string(v) + " out of range");
          }
          idx.push_back(static_cast<int>(resolved));
        }
        for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.emplace_back(idx[0], idx[k], idx[k + 1]);
      }
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  }
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) m.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();
  m.edges = mesh_edges(m.faces);
  return m;
}

void export_obj(const Mesh& mesh, const std::string& path) { write_file(path, format_obj(mesh)); }

Mesh import_obj(const std::string& path) { return parse_obj(read_file(path)); }

ordered_json state_to_json(const HandPoseState& s) {
  ordered_json j;
  j["theta"] = points_json(s.theta);
  j["beta"] = vector_json(s.beta);
  j["wrist_rotation"] = vector_json(s.wrist_rotation);
  j["wrist_translation"] = vector_json(s.wrist_translation);
  return j;
}

HandPoseState state_from_json(const json& j) {
  const Eigen::VectorXd r = vector_from_json(j.at("wrist_rotation"), "wrist_rotation");
  const Eigen::VectorXd t = vector_from_json(j.at("wrist_translation"), "wrist_translation");
  if (r.size() != 3 || t.size() != 3) throw FormatError("wrist_rotation and wrist_translation need 3 entries");
  HandPoseState s;
  s.theta = points_from_json(j.at("theta"), "theta");
  s.beta = vector_from_json(j.at("beta"), "beta");
  s.wrist_rotation = r;
  s.wrist_translation = t;
  return s;
}

std::string format_states(const std::vector<StateRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["frame"] = r.frame;
    j["t"] = r.timestamp;
    j["ok"] = r.ok;
    j["error"] = r.error;
    const ordered_json state = state_to_json(r.state);
    for (const auto& [k, v] : state.items()) j[k] = v;
    j["energy"] = {{"e_key", r.energy.e_key}, {"e_reg", r.energy.e_reg}, {"e_smooth", r.energy.e_smooth},
                   {"total", r.energy.total}};
    j["iterations"] = {{"coarse", r.coarse_iterations}, {"fine", r.fine_iterations}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<StateRecord> parse_states(const std::string& text, const std::string& source) {
  std::vector<StateRecord> out;
  for_each_line(text, source, [&](const json& j, const std::string& where) {
    check_keys(j, {"frame", "t", "ok", "error", "theta", "beta", "wrist_rotation", "wrist_translation", "energy",
                   "iterations"},
               where);
    StateRecord r;
    r.frame = j.value("frame", static_cast<int>(out.size()));
    r.timestamp = j.value("t", 0.0);
    r.ok = j.value("ok", true);
    r.error = j.value("error", std::string());
    try {
      r.state = state_from_json(j);
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (j.contains("energy")) {
      const auto& e = j["energy"];
      r.energy = {e.at("e_key").get<double>(), e.at("e_reg").get<double>(), e.at("e_smooth").get<double>(),
                  e.at("total").get<double>()};
    }
    if (j.contains("iterations")) {
      r.coarse_iterations = j["iterations"].value("coarse", 0);
      r.fine_iterations = j["iterations"].value("fine", 0);
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<StateRecord> state_records(const FitReport& report, const std::vector<KeypointFrame>& frames) {
  std::vector<StateRecord> out;
  for (std::size_t k = 0; k < report.frames.size(); ++k) {
    const FrameFit& f = report.frames[k];
    out.push_back({static_cast<int>(k), k < frames.size() ? frames[k].timestamp : 0.0, f.ok, f.error, f.state,
                   f.energy, f.coarse.iterations, f.fine.iterations});
  }
  return out;
}

std::string format_skeletons(const std::vector<SkeletonRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["frame"] = r.frame;
    j["convention"] = r.skeleton.convention;
    j["names"] = r.skeleton.names;
    j["joints"] = points_json(r.skeleton.joints);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<SkeletonRecord> parse_skeletons(const std::string& text, const std::string& source) {
  std::vector<SkeletonRecord> out;
  for_each_line(text, source, [&](const json& j, const std::string& where) {
    check_keys(j, {"frame", "convention", "names", "joints"}, where);
    SkeletonRecord r;
    r.frame = j.value("frame", static_cast<int>(out.size()));
    r.skeleton.convention = j.value("convention", std::string());
    r.skeleton.names = j.value("names", std::vector<std::string>{});
    r.skeleton.joints = points_from_json(j.at("joints"), where);
    if (!r.skeleton.names.empty() && r.skeleton.names.size() != static_cast<std::size_t>(r.skeleton.joints.rows())) {
      throw FormatError(where + ": names and joints differ in length");
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::string format_trace(const FitReport& report) {
  std::string out = "frame,stage,iteration,e_key,e_reg,e_smooth,total\n";
  auto rows = [&](std::size_t frame, const char* stage, const std::vector<EnergyBreakdown>& trace) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const auto& e = trace[i];
      out += std::to_string(frame) + "," + stage + "," + std::to_string(i) + "," + format_double(e.e_key) + "," +
             format_double(e.e_reg) + "," + format_double(e.e_smooth) + "," + format_double(e.total) + "\n";
    }
  };
  for (std::size_t k = 0; k < report.frames.size(); ++k) {
    rows(k, "coarse", report.frames[k].coarse.trace);
    rows(k, "fine", report.frames[k].fine.trace);
  }
  return out;
}

ordered_json fit_config_to_json(const FitConfig& c) {
  ordered_json j;
  j["weights"] = {{"lambda_reg", c.weights.lambda_reg},
                  {"lambda_smooth", c.weights.lambda_smooth},
                  {"edge_counting", c.weights.edge_counting == EdgeCounting::Directed ? "directed" : "undirected"}};
  j["coarse"] = stage_json(c.coarse);
  j["coarse_rotation"] = hyper_json(c.coarse_rotation);
  j["fine"] = stage_json(c.fine);
  j["fine_pose_shape"] = hyper_json(c.fine_pose_shape);
  j["fine_rotation"] = hyper_json(c.fine_rotation);
  j["schedule"] = c.schedule == FineSchedule::Alternating ? "alternating" : "block";
  j["block_steps"] = c.block_steps;
  j["warm_start"] = c.warm_start;
  j["warm_restart_mse"] = c.warm_restart_mse;
  j["lock_shape"] = c.lock_shape;
  j["optimize_translation"] = c.optimize_translation;
  j["gradient_mode"] = c.gradient_mode == GradientMode::AnalyticAdjoint ? "analytic" : "dual";
  j["initial_pose"] = points_json(c.initial_pose);
  j["mean_shape"] = vector_json(c.mean_shape);
  return j;
}

void fit_config_from_json(const json& j, FitConfig& c) {
  check_keys(j,
             {"weights", "coarse", "coarse_rotation", "fine", "fine_pose_shape", "fine_rotation", "schedule",
              "block_steps", "warm_start", "warm_restart_mse", "lock_shape", "optimize_translation", "gradient_mode", "initial_pose",
              "mean_shape"},
             "fit");
  try {
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      check_keys(w, {"lambda_reg", "lambda_smooth", "edge_counting"}, "fit.weights");
      if (w.contains("lambda_reg")) c.weights.lambda_reg = w["lambda_reg"].get<double>();
      if (w.contains("lambda_smooth")) c.weights.lambda_smooth = w["lambda_smooth"].get<double>();
      if (w.contains("edge_counting")) {
        const auto e = w["edge_counting"].get<std::string>();
        if (e != "directed" && e != "undirected") throw FormatError("fit.weights.edge_counting: unknown value '" + e + "'");
        c.weights.edge_counting = e == "directed" ? EdgeCounting::Directed : EdgeCounting::Undirected;
      }
    }
    if (j.contains("coarse")) stage_from_json(j["coarse"], c.coarse, "fit.coarse");
    if (j.contains("fine")) stage_from_json(j["fine"], c.fine, "fit.fine");
    if (j.contains("coarse_rotation")) hyper_from_json(j["coarse_rotation"], c.coarse_rotation, "fit.coarse_rotation");
    if (j.contains("fine_pose_shape")) hyper_from_json(j["fine_pose_shape"], c.fine_pose_shape, "fit.fine_pose_shape");
    if (j.contains("fine_rotation")) hyper_from_json(j["fine_rotation"], c.fine_rotation, "fit.fine_rotation");
    if (j.contains("schedule")) {
      const auto s = j["schedule"].get<std::string>();
      if (s != "alternating" && s != "block") throw FormatError("fit.schedule: unknown value '" + s + "'");
      c.schedule = s == "alternating" ? FineSchedule::Alternating : FineSchedule::Block;
    }
    if (j.contains("block_steps")) c.block_steps = j["block_steps"].get<int>();
    if (j.contains("warm_start")) c.warm_start = j["warm_start"].get<bool>();
    if (j.contains("warm_restart_mse")) c.warm_restart_mse = j["warm_restart_mse"].get<double>();
    if (j.contains("lock_shape")) c.lock_shape = j["lock_shape"].get<bool>();
    if (j.contains("optimize_translation")) c.optimize_translation = j["optimize_translation"].get<bool>();
    if (j.contains("gradient_mode")) {
      const auto g = j["gradient_mode"].get<std::string>();
      if (g != "analytic" && g != "dual") throw FormatError("fit.gradient_mode: unknown value '" + g + "'");
      c.gradient_mode = g == "analytic" ? GradientMode::AnalyticAdjoint : GradientMode::ForwardDual;
    }
    if (j.contains("initial_pose")) c.initial_pose = points_from_json(j["initial_pose"], "fit.initial_pose");
    if (j.contains("mean_shape")) c.mean_shape = vector_from_json(j["mean_shape"], "fit.mean_shape");
  } catch (const json::exception& e) {
    throw FormatError(std::string("fit config: ") + e.what());
  }
  check_fit_config(c);
}

ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["model"] = c.model_path;
  j["input"] = c.input_path;
  j["conventions"] = c.conventions_path;
  j["regressor"] = c.regressor_path;
  j["fused_spec"] = c.fused_spec_path;
  j["reference"] = c.reference_path;
  j["output_dir"] = c.output_dir;
  j["write_meshes"] = c.write_meshes;
  j["seed"] = c.seed;
  j["fit"] = fit_config_to_json(c.fit);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j,
             {"model", "input", "conventions", "regressor", "fused_spec", "reference", "output_dir", "write_meshes",
              "seed", "fit"},
             "config");
  RunConfig c;
  try {
    c.model_path = j.value("model", std::string());
    c.input_path = j.value("input", std::string());
    c.conventions_path = j.value("conventions", std::string());
    c.regressor_path = j.value("regressor", std::string());
    c.fused_spec_path = j.value("fused_spec", std::string());
    c.reference_path = j.value("reference", std::string());
    c.output_dir = j.value("output_dir", std::string());
    c.write_meshes = j.value("write_meshes", false);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (j.contains("fit")) fit_config_from_json(j["fit"], c.fit);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

void validate_run_config(const RunConfig& c) {
  auto required = [](const std::string& value, const char* field) {
    if (value.empty()) throw InvariantError(std::string("config: '") + field + "' is required");
    if (!fs::exists(value)) throw InvariantError(std::string("config: '") + field + "' file not found: " + value);
  };
  auto optional = [](const std::string& value, const char* field) {
    if (!value.empty() && !fs::exists(value)) {
      throw InvariantError(std::string("config: '") + field + "' file not found: " + value);
    }
  };
  required(c.model_path, "model");
  required(c.input_path, "input");
  optional(c.conventions_path, "conventions");
  optional(c.regressor_path, "regressor");
  optional(c.fused_spec_path, "fused_spec");
  optional(c.reference_path, "reference");
  if (c.output_dir.empty()) throw InvariantError("config: 'output_dir' is required");
  check_fit_config(c.fit);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PipelineResult run_pipeline(const RunConfig& config) {
  validate_run_config(config);
  PipelineResult result;
  fs::create_directories(config.output_dir);
  std::map<std::string, std::string> written;  // relative path -> content hash
  auto emit = [&](const std::string& rel, const std::string& content) {
    const fs::path p = fs::path(config.output_dir) / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file(p.string(), content);
    written[rel] = fnv1a_hex(content) + " " + std::to_string(content.size());
  };
  std::string stage = "load";
  std::string failure;
  auto write_manifest = [&]() {
    ordered_json m;
    ordered_json cfg = run_config_to_json(config);
    cfg.erase("output_dir");
    m["tool"] = "handfit";
    m["version"] = "0.1.0";
    m["config_hash"] = fnv1a_hex(cfg.dump());
    m["seed"] = config.seed;
    m["config"] = cfg;
    m["frames"] = result.report.frames.size();
    m["failed_frames"] = result.report.failed();
    if (!failure.empty()) m["error"] = failure;
    ordered_json files = ordered_json::array();
    for (const auto& [rel, tag] : written) {
      const auto space = tag.find(' ');
      files.push_back({{"path", rel}, {"fnv1a", tag.substr(0, space)}, {"bytes", std::stoull(tag.substr(space + 1))}});
    }
    m["files"] = files;
    const std::string text = m.dump(2) + "\n";
    write_file((fs::path(config.output_dir) / "manifest.json").string(), text);
    result.files.clear();
    for (const auto& [rel, tag] : written) result.files.push_back(rel);
    result.files.push_back("manifest.json");
    std::sort(result.files.begin(), result.files.end());
  };

  try {
    const HandModel model = load_model(config.model_path);
    const ConventionTable conventions =
        config.conventions_path.empty() ? ConventionTable() : ConventionTable::load(config.conventions_path);
    std::optional<MlpRegressor> regressor;
    if (!config.regressor_path.empty()) regressor = load_regressor(config.regressor_path);
    std::optional<FusedSkeletonSpec> spec;
    if (!config.fused_spec_path.empty()) spec = load_fused_spec(config.fused_spec_path);

    stage = "parse";
    const std::vector<KeypointFrame> frames = parse_keypoints(config.input_path, conventions);
    if (frames.empty()) throw InvariantError("input has no frames");
    FitConfig fit = config.fit;
    if (fit.mapping.empty()) {
      const std::string& conv = frames.front().convention;
      for (const auto& f : frames)
        if (f.convention != conv) throw InvariantError("frames mix keypoint conventions; one convention per run");
      fit.mapping = conventions.mapping(conv, model);
    }

    stage = "fit";
    result.report = fit_sequence(model, frames, fit);
    emit("states.jsonl", format_states(state_records(result.report, frames)));
    emit("trace.csv", format_trace(result.report));
    std::vector<HandFrame> predicted;
    std::vector<SkeletonRecord> coarse_records;
    for (std::size_t k = 0; k < result.report.frames.size(); ++k) {
      auto [mesh, skeleton] = forward(model, result.report.frames[k].state);
      coarse_records.push_back({static_cast<int>(k), skeleton});
      predicted.push_back({skeleton, mesh});
    }
    emit("skeleton.jsonl", format_skeletons(coarse_records));
    if (config.write_meshes) {
      for (std::size_t k = 0; k < predicted.size(); ++k) emit(frame_file(static_cast<int>(k)), format_obj(predicted[k].mesh));
    }

    if (regressor) {
      stage = "derive-joints";
      if (!regressor->source_convention.empty() && regressor->source_convention != model.name) {
        throw InvariantError("regressor expects meshes of '" + regressor->source_convention + "', model is '" +
                             model.name + "'");
      }
      std::vector<SkeletonRecord> fine_records, fused_records;
      for (std::size_t k = 0; k < predicted.size(); ++k) {
        fine_records.push_back({static_cast<int>(k), predict_joints(*regressor, predicted[k].mesh)});
      }
      emit("fine_joints.jsonl", format_skeletons(fine_records));
      stage = "fuse";
      if (!spec) spec = default_fused_spec(model, regressor->joint_names, regressor->target_convention);
      for (std::size_t k = 0; k < predicted.size(); ++k) {
        fused_records.push_back(
            {static_cast<int>(k), fuse_skeletons(predicted[k].skeleton, fine_records[k].skeleton, *spec)});
      }
      emit("fused.jsonl", format_skeletons(fused_records));
    }

    if (!config.reference_path.empty()) {
      stage = "eval";
      const auto refs = parse_states(read_file(config.reference_path), config.reference_path);
      std::vector<HandFrame> reference;
      for (const auto& r : refs) {
        auto [mesh, skeleton] = forward(model, r.state);
        reference.push_back({skeleton, mesh});
      }
      result.eval = evaluate(predicted, reference);
      emit("metrics.json", report_json(*result.eval));
      emit("metrics.csv", report_csv_header() + report_csv_row(fs::path(config.input_path).stem().string(), *result.eval));
    }
  } catch (const Error& e) {
    failure = stage + ": " + e.what();
    write_manifest();
    throw Error(failure);
  } catch (const fs::filesystem_error& e) {
    failure = stage + ": " + e.what();
    write_manifest();
    throw IoError(failure);
  }
  write_manifest();
  return result;
}

}  // namespace handfit
