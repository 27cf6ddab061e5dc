#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "handfit/hand_model.hpp"
#include "handfit/optim.hpp"
#include "handfit/uhm.hpp"

namespace handfit {

// y ≈ scale · rotation · x + translation, mapping source-model coordinates
// into the target model's frame.
struct AlignmentMap {
  double scale = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::string source_convention;
  std::string target_convention;
  double residual_rms = 0;

  PointsD apply(const PointsD& points) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  AlignmentMap inverse() const;
};

void check_alignment(const AlignmentMap& a);

using Correspondences = std::vector<std::pair<int, int>>;  // (source vertex, target vertex)

// Closed-form similarity Procrustes; needs ≥ 3 non-collinear source points.
AlignmentMap align_models(const Mesh& source, const Mesh& target, const Correspondences& pairs,
                          const std::string& source_convention = "", const std::string& target_convention = "");

// "source,target" integer rows, '#' comments, optional "source,target" header.
Correspondences parse_correspondences(const std::string& text);
std::string format_correspondences(const Correspondences& pairs);

// Rigid canonical frame of a mesh: vertices driven only by the root joint are
// Kabsch-aligned onto their centred rest positions, then divided by the hand
// length. Empty anchors = identity with unit scale.
struct Canonicalizer {
  std::vector<int> anchor_ids;
  PointsD anchor_rest;  // centred
  double scale = 1;

  bool identity() const { return anchor_ids.empty(); }
  // rotation R and offset t with canonical = (R·p + t) / scale
  std::pair<Eigen::Matrix3d, Eigen::Vector3d> frame(const PointsD& vertices) const;
};

Canonicalizer make_canonicalizer(const HandModel& model);

struct TrainingSet {
  Eigen::MatrixXd inputs;   // n × 3V, raw coarse vertices (mm)
  Eigen::MatrixXd targets;  // n × 3J', fine skeleton in the coarse frame (mm)
  std::vector<HandPoseState> coarse_states;
  std::vector<HandPoseState> fine_states;
  Canonicalizer canonicalizer;
  std::string source_convention;
  std::string target_convention;
  std::vector<std::string> joint_names;

  int size() const { return static_cast<int>(inputs.rows()); }
};

struct SampleBounds {
  double theta_max = 0.6;
  double beta_sigma = 1.0;
};

// Coarse state carried over to the fine model: each coarse chain joint's
// rotation goes to the fine joint nearest to it along the same chain, axes
// rotated into the fine frame; shared β prefix.
HandPoseState map_state(const HandModel& coarse, const HandModel& fine, const AlignmentMap& fine_to_coarse,
                        const HandPoseState& coarse_state);

TrainingSet build_training_set(const HandModel& coarse, const HandModel& fine, const AlignmentMap& fine_to_coarse,
                               int n_samples, std::uint64_t seed, const SampleBounds& bounds = {});

struct MlpLayer {
  Eigen::MatrixXd weight;  // out × in
  Eigen::VectorXd bias;
};

struct TrainConfig {
  double lr = 2e-3;
  int epochs = 80;
  int batch = 64;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double lr_decay = 0.97;  // per epoch
};

struct TrainInfo {
  std::uint64_t seed = 0;
  int epochs = 0;
  std::vector<double> train_loss;  // per epoch, mean squared joint error (mm²)
  std::vector<double> val_loss;    // [0] before training
  double best_val_loss = 0;
  int best_epoch = 0;
  double val_mean_error = 0;  // mm
  double lipschitz = 0;       // mm out per mm in, spectral-norm product
  int train_count = 0;
  int val_count = 0;
};

struct MlpRegressor {
  std::vector<MlpLayer> layers;
  std::string activation = "relu";
  Canonicalizer canonicalizer;
  // network sees (x − input_mean) / input_std and emits (y − output_mean) / output_std
  Eigen::VectorXd input_mean, input_std, output_mean, output_std;
  std::string source_convention;
  std::string target_convention;
  std::vector<std::string> joint_names;
  TrainInfo info;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
};

void check_regressor(const MlpRegressor& r);

MlpRegressor train_mlp(const TrainingSet& data, const std::vector<int>& hidden, const TrainConfig& config);

// Raw network on standardised inputs, one sample per column.
Eigen::MatrixXd mlp_forward(const MlpRegressor& r, const Eigen::MatrixXd& x);
Eigen::VectorXd predict_flat(const MlpRegressor& r, const PointsD& vertices);
Skeleton predict_joints(const MlpRegressor& r, const Mesh& mesh);
double spectral_lipschitz(const MlpRegressor& r);

UhmFile regressor_to_uhm(const MlpRegressor& r);
MlpRegressor regressor_from_uhm(const UhmFile& f);
void save_regressor(const MlpRegressor& r, const std::string& path);
MlpRegressor load_regressor(const std::string& path);

enum class JointSource { Coarse, Fine };

struct FusedJoint {
  std::string name;
  JointSource source = JointSource::Coarse;
  int index = 0;
};

struct FusedSkeletonSpec {
  std::vector<FusedJoint> joints;
  std::string coarse_convention;  // empty = not checked
  std::string fine_convention;

  int size() const { return static_cast<int>(joints.size()); }
};

void check_fused_spec(const FusedSkeletonSpec& spec);
FusedSkeletonSpec parse_fused_spec(const std::string& text);
std::string format_fused_spec(const FusedSkeletonSpec& spec);
FusedSkeletonSpec load_fused_spec(const std::string& path);

// Every coarse joint plus the fine model's fingertips and the last joint of
// each non-thumb fine chain.
FusedSkeletonSpec default_fused_spec(const HandModel& coarse, const std::vector<std::string>& fine_names,
                                     const std::string& fine_convention);

Skeleton fuse_skeletons(const Skeleton& coarse, const Skeleton& fine, const FusedSkeletonSpec& spec);

// Synthetic stand-in pair: the fine model is synth_model(seed, fine_vertices,
// fine_joints, B) moved into its own frame by `offset`.
struct StandInPair {
  HandModel coarse;
  HandModel fine;
  AlignmentMap offset;  // coarse frame -> fine frame, as constructed
  Correspondences correspondences;  // coarse vertex -> fine vertex
};

StandInPair synth_stand_in_pair(std::uint64_t seed, int coarse_vertices = 200, int coarse_joints = 16,
                                int fine_vertices = 400, int fine_joints = 25, int shape_dim = 10);

}  // namespace handfit
