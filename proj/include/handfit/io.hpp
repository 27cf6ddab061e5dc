#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handfit/energy.hpp"
#include "handfit/fitter.hpp"
#include "handfit/metrics.hpp"
#include "handfit/unified.hpp"

namespace handfit {

// Keypoint orderings by name. An entry lists, per keypoint, the skeleton joint
// name it observes; "native" (no joint list) means the model's own skeleton order.
struct KeypointConvention {
  std::string name;
  std::vector<std::string> joints;  // empty for native
};

class ConventionTable {
 public:
  ConventionTable();  // just "native"
  static ConventionTable parse(const std::string& json_text);
  static ConventionTable load(const std::string& path);

  bool contains(const std::string& name) const;
  const KeypointConvention& at(const std::string& name) const;
  // Expected keypoint count, or nullopt for native.
  std::optional<int> size_of(const std::string& name) const;
  KeypointMapping mapping(const std::string& name, const HandModel& model) const;

 private:
  std::map<std::string, KeypointConvention> table_;
};

// One frame per line: {"t", "pts", "mask"?, "convention"?, "units"?}. Masked
// points may be null. Coordinates are converted to millimetres.
std::vector<KeypointFrame> parse_keypoints_text(const std::string& text, const ConventionTable& conventions,
                                                const std::string& source = "<memory>");
std::vector<KeypointFrame> parse_keypoints(const std::string& path, const ConventionTable& conventions);
std::string format_keypoints(const std::vector<KeypointFrame>& frames);

std::string format_obj(const Mesh& mesh);
Mesh parse_obj(const std::string& text);
void export_obj(const Mesh& mesh, const std::string& path);
Mesh import_obj(const std::string& path);

nlohmann::ordered_json state_to_json(const HandPoseState& s);
HandPoseState state_from_json(const nlohmann::json& j);

struct StateRecord {
  int frame = 0;
  double timestamp = 0;
  bool ok = true;
  std::string error;
  HandPoseState state;
  EnergyBreakdown energy;
  int coarse_iterations = 0;
  int fine_iterations = 0;
};

std::string format_states(const std::vector<StateRecord>& records);
std::vector<StateRecord> parse_states(const std::string& text, const std::string& source = "<memory>");
std::vector<StateRecord> state_records(const FitReport& report, const std::vector<KeypointFrame>& frames);

struct SkeletonRecord {
  int frame = 0;
  Skeleton skeleton;
};

std::string format_skeletons(const std::vector<SkeletonRecord>& records);
std::vector<SkeletonRecord> parse_skeletons(const std::string& text, const std::string& source = "<memory>");

// frame,stage,iteration,e_key,e_reg,e_smooth,total
std::string format_trace(const FitReport& report);

struct RunConfig {
  std::string model_path;
  std::string input_path;
  std::string conventions_path;  // empty = built-in native only
  std::string regressor_path;    // optional
  std::string fused_spec_path;   // optional; default spec when a regressor is given
  std::string reference_path;    // optional ground-truth states JSONL
  std::string output_dir;
  bool write_meshes = false;
  std::uint64_t seed = 0;
  FitConfig fit;
};

nlohmann::ordered_json fit_config_to_json(const FitConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void fit_config_from_json(const nlohmann::json& j, FitConfig& c);

nlohmann::ordered_json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
// Checks required paths exist; throws InvariantError naming the field.
void validate_run_config(const RunConfig& c);

// 64-bit FNV-1a, hex.
std::string fnv1a_hex(const std::string& bytes);

struct PipelineResult {
  FitReport report;
  std::optional<EvalReport> eval;
  std::vector<std::string> files;  // relative to output_dir, sorted
};

// parse -> fit_sequence -> predict_joints -> fuse_skeletons -> evaluate, writing
// states.jsonl, trace.csv, skeleton.jsonl, [fine_joints.jsonl, fused.jsonl],
// [meshes/frame_NNNN.obj], [metrics.json, metrics.csv] and manifest.json.
// Stage failures are rethrown as "<stage>: message" after flushing outputs.
PipelineResult run_pipeline(const RunConfig& config);

}  // namespace handfit
