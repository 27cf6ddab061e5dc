#pragma once

#include <string>
#include <vector>

#include "handfit/energy.hpp"
#include "handfit/optim.hpp"

namespace handfit {

struct StageConfig {
  int max_iters = 500;
  double rel_tol = 1e-7;
  int patience = 0;  // stop after this many iterations without a new best; 0 disables
};

enum class FineSchedule {
  Alternating,  // one step per optimizer per outer iteration
  Block,        // block_steps steps per optimizer per outer iteration
};

struct FitConfig {
  PointsD initial_pose;        // (J-1)×3; empty means the rest pose
  Eigen::VectorXd mean_shape;  // B; empty means zero
  EnergyWeights weights;
  StageConfig coarse{2000, 1e-7};
  AdamHyper coarse_rotation{5e-2};
  StageConfig fine{3000, 1e-7, 10};
  AdamHyper fine_pose_shape{1e-2};
  AdamHyper fine_rotation{1e-3};
  FineSchedule schedule = FineSchedule::Alternating;
  int block_steps = 1;
  bool warm_start = true;
  double warm_restart_mse = 10;       // mm² per observed keypoint; above it a warm frame is refit cold
  bool lock_shape = true;             // sequences: keep frame-0 shape
  bool optimize_translation = false;  // refine translation next to R_w in the fine stage
  KeypointMapping mapping;            // empty means identity onto the skeleton
  GradientMode gradient_mode = GradientMode::AnalyticAdjoint;
};

void check_fit_config(const FitConfig& config);

struct StageResult {
  HandPoseState state;
  EnergyBreakdown energy;
  std::vector<EnergyBreakdown> trace;
  int iterations = 0;
  bool converged = false;
  int restarts = 0;
};

// Rotation-only alignment: pose and shape fixed at the configured priors,
// translation placed analytically on the wrist keypoint and frozen.
StageResult coarse_fit(const HandModel& model, const KeypointFrame& frame, const FitConfig& config);

// Alternating Adam refinement of (θ, β) and R_w against the full weighted energy.
// Returns the lowest-energy iterate; freeze_shape keeps β at the warm value.
StageResult fine_fit(const HandModel& model, const KeypointFrame& frame, const HandPoseState& warm_state,
                     const FitConfig& config, bool freeze_shape = false);

struct FrameFit {
  HandPoseState state;
  EnergyBreakdown energy;
  StageResult coarse;  // iterations == 0 and empty trace when warm-started
  StageResult fine;
  bool ok = true;
  std::string error;
};

FrameFit fit_frame(const HandModel& model, const KeypointFrame& frame, const FitConfig& config);

struct FitReport {
  std::vector<FrameFit> frames;
  double wall_seconds = 0;
  int failed() const;
};

FitReport fit_sequence(const HandModel& model, const std::vector<KeypointFrame>& frames, const FitConfig& config);

// Mapping used for a frame: the configured one, or identity onto the skeleton.
KeypointMapping resolve_mapping(const HandModel& model, const KeypointFrame& frame, const FitConfig& config);

}  // namespace handfit
