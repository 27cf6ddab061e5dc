#include "handfit/fitter.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>

namespace handfit {

namespace {

struct ParamGroup {
  std::vector<int> indices;
  AdamHyper hyper;
};

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
  return out;
}

void scatter(Eigen::VectorXd& v, const std::vector<int>& idx, const Eigen::VectorXd& part) {
  for (std::size_t k = 0; k < idx.size(); ++k) v[idx[k]] = part[static_cast<Eigen::Index>(k)];
}

std::vector<int> range(int offset, int size) {
  std::vector<int> out(size);
  for (int k = 0; k < size; ++k) out[k] = offset + k;
  return out;
}

class StageEnergy {
 public:
  StageEnergy(const HandModel& model, const KeypointFrame& frame, const KeypointMapping& mapping,
              const EnergyWeights& weights, GradientMode mode)
      : model_(model), frame_(frame), mapping_(mapping), weights_(weights), layout_(model), mode_(mode) {}

  EnergyBreakdown operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const HandPoseState s = unpack<double>(layout_, x);
    EnergyBreakdown e;
    if (mode_ == GradientMode::ForwardDual) {
      e = total_energy(model_, s, frame_, mapping_, weights_);
      auto f = make_objective(layout_.size, [this](const auto& p) {
        using T = typename std::decay_t<decltype(p)>::Scalar;
        return total_energy_value<T>(model_, unpack<T>(layout_, p), frame_, mapping_, weights_);
      });
      dual_gradient(f, x, grad);
    } else {
      e = total_energy_gradient(model_, s, frame_, mapping_, weights_, grad);
    }
    if (!std::isfinite(e.total)) throw NumericError("energy is not finite");
    return e;
  }

  const ParamLayout& layout() const { return layout_; }

 private:
  const HandModel& model_;
  const KeypointFrame& frame_;
  const KeypointMapping& mapping_;
  EnergyWeights weights_;
  ParamLayout layout_;
  GradientMode mode_;
};

struct StageRun {
  Eigen::VectorXd best;
  EnergyBreakdown best_energy;
  std::vector<EnergyBreakdown> trace;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

StageRun run_stage(const StageEnergy& energy, const Eigen::VectorXd& x0, const std::vector<ParamGroup>& groups,
                   int steps_per_group, const StageConfig& stage) {
  StageRun run;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd grad;
  EnergyBreakdown e = energy(x, grad);
  const double initial = e.total;
  run.trace.push_back(e);
  run.best = x;
  run.best_energy = e;

  std::vector<AdamState> adam;
  for (const auto& g : groups) adam.push_back(AdamState::init(static_cast<Eigen::Index>(g.indices.size()), g.hyper));

  int stale = 0;
  for (int it = 1; it <= stage.max_iters; ++it) {
    const double previous = e.total;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      for (int s = 0; s < steps_per_group; ++s) {
        Eigen::VectorXd part = gather(x, groups[gi].indices);
        adam_update(adam[gi], part, gather(grad, groups[gi].indices));
        scatter(x, groups[gi].indices, part);
        try {
          e = energy(x, grad);
        } catch (const NumericError&) {
          throw NumericError("energy became non-finite at iteration " + std::to_string(it));
        }
      }
    }
    run.trace.push_back(e);
    run.iterations = it;
    if (e.total < run.best_energy.total) {
      stale = relative_change_below(run.best_energy.total, e.total, stage.rel_tol) ? stale + 1 : 0;
      run.best = x;
      run.best_energy = e;
    } else {
      ++stale;
    }
    if (e.total > 10 * initial && initial > 0) {
      run.diverged = true;
      return run;
    }
    if (relative_change_below(previous, e.total, stage.rel_tol) || (stage.patience > 0 && stale >= stage.patience)) {
      run.converged = true;
      break;
    }
  }
  return run;
}

// Runs a stage with the divergence guard: one restart at half the learning
// rates, then give up.
StageRun guarded_stage(const StageEnergy& energy, const Eigen::VectorXd& x0, std::vector<ParamGroup> groups,
                       int steps_per_group, const StageConfig& stage, int& restarts) {
  StageRun run = run_stage(energy, x0, groups, steps_per_group, stage);
  if (!run.diverged) return run;
  ++restarts;
  for (auto& g : groups) g.hyper.lr *= 0.5;
  run = run_stage(energy, x0, groups, steps_per_group, stage);
  if (run.diverged) throw NumericError("optimizer diverged twice (energy exceeded 10x its initial value)");
  return run;
}

HandPoseState prior_state(const HandModel& model, const FitConfig& config) {
  HandPoseState s = HandPoseState::zero(model);
  if (config.initial_pose.size() > 0) s.theta = config.initial_pose;
  if (config.mean_shape.size() > 0) s.beta = config.mean_shape;
  return s;
}

int wrist_keypoint(const KeypointFrame& frame, const KeypointMapping& mapping) {
  for (int i = 0; i < frame.size(); ++i) {
    if (frame.mask[i] && mapping[i] == 0) return i;
  }
  throw InvariantError("frame has no observed keypoint mapped to the wrist joint");
}

// Translation that puts the posed wrist on the observed wrist keypoint.
Eigen::Vector3d wrist_translation(const HandModel& model, const Eigen::VectorXd& beta, const KeypointFrame& frame,
                                  const KeypointMapping& mapping) {
  const int w = wrist_keypoint(frame, mapping);
  Eigen::RowVectorXd shaped_wrist = model.joint_regressor.row(0) * model.template_vertices;
  if (model.shape_dim() > 0) {
    const Eigen::VectorXd d = model.shape_basis * beta;
    for (int i = 0; i < model.vertex_count(); ++i) {
      shaped_wrist += model.joint_regressor(0, i) * d.segment<3>(3 * i).transpose();
    }
  }
  return (frame.keypoints.row(w) - shaped_wrist).transpose();
}

HandPoseState finish_state(const ParamLayout& layout, const Eigen::VectorXd& x) {
  HandPoseState s = unpack<double>(layout, x);
  wrap_pose_state(s);
  return s;
}

StageResult coarse_from(const HandModel& model, const KeypointFrame& frame, const FitConfig& config,
                        HandPoseState start) {
  const KeypointMapping mapping = resolve_mapping(model, frame, config);
  check_frame(frame, mapping, model.skeleton_size());
  start.wrist_translation = wrist_translation(model, start.beta, frame, mapping);
  EnergyWeights key_only = config.weights;
  key_only.lambda_reg = 0;
  key_only.lambda_smooth = 0;
  const StageEnergy energy(model, frame, mapping, key_only, config.gradient_mode);
  const ParamLayout& layout = energy.layout();

  StageResult out;
  const std::vector<ParamGroup> groups{{range(layout.rotation_offset, 3), config.coarse_rotation}};
  const StageRun run = guarded_stage(energy, pack(start), groups, 1, config.coarse, out.restarts);
  out.state = finish_state(layout, run.best);
  out.energy = total_energy(model, out.state, frame, mapping, config.weights);
  out.trace = run.trace;
  out.iterations = run.iterations;
  out.converged = run.converged;
  return out;
}

FrameFit fit_frame_impl(const HandModel& model, const KeypointFrame& frame, const FitConfig& config,
                        const std::optional<Eigen::VectorXd>& locked_shape) {
  FrameFit fit;
  HandPoseState start = prior_state(model, config);
  if (locked_shape) start.beta = *locked_shape;
  fit.coarse = coarse_from(model, frame, config, start);
  fit.fine = fine_fit(model, frame, fit.coarse.state, config, locked_shape.has_value());
  fit.state = fit.fine.state;
  fit.energy = fit.fine.energy;
  return fit;
}

}  // namespace

void check_fit_config(const FitConfig& c) {
  check_weights(c.weights);
  if (c.coarse.max_iters < 1 || c.fine.max_iters < 1) throw InvariantError("stage iteration budgets must be >= 1");
  if (c.coarse.rel_tol < 0 || c.fine.rel_tol < 0) throw InvariantError("rel_tol must be non-negative");
  if (c.coarse.patience < 0 || c.fine.patience < 0) throw InvariantError("patience must be non-negative");
  if (c.block_steps < 1) throw InvariantError("block_steps must be >= 1");
  if (!(c.warm_restart_mse >= 0)) throw InvariantError("warm_restart_mse must be non-negative");
  check_hyper(c.coarse_rotation);
  check_hyper(c.fine_pose_shape);
  check_hyper(c.fine_rotation);
}

KeypointMapping resolve_mapping(const HandModel& model, const KeypointFrame& frame, const FitConfig& config) {
  if (!config.mapping.empty()) return config.mapping;
  if (frame.size() > model.skeleton_size()) {
    throw DimensionError("frame has more keypoints than the model skeleton and no mapping is configured");
  }
  KeypointMapping identity(frame.size());
  for (int i = 0; i < frame.size(); ++i) identity[i] = i;
  return identity;
}

StageResult coarse_fit(const HandModel& model, const KeypointFrame& frame, const FitConfig& config) {
  check_fit_config(config);
  return coarse_from(model, frame, config, prior_state(model, config));
}

StageResult fine_fit(const HandModel& model, const KeypointFrame& frame, const HandPoseState& warm_state,
                     const FitConfig& config, bool freeze_shape) {
  check_fit_config(config);
  check_state_dims(model, static_cast<int>(warm_state.theta.rows()), static_cast<int>(warm_state.beta.size()));
  const KeypointMapping mapping = resolve_mapping(model, frame, config);
  const StageEnergy energy(model, frame, mapping, config.weights, config.gradient_mode);
  const ParamLayout& layout = energy.layout();

  std::vector<int> pose_shape = range(layout.theta_offset, layout.theta_size);
  if (!freeze_shape) {
    for (int k = 0; k < layout.beta_size; ++k) pose_shape.push_back(layout.beta_offset + k);
  }
  std::vector<int> rigid = range(layout.rotation_offset, 3);
  if (config.optimize_translation) {
    for (int k = 0; k < 3; ++k) rigid.push_back(layout.translation_offset + k);
  }
  std::vector<ParamGroup> groups;
  if (!pose_shape.empty()) groups.push_back({pose_shape, config.fine_pose_shape});
  groups.push_back({rigid, config.fine_rotation});
  const int steps = config.schedule == FineSchedule::Block ? config.block_steps : 1;

  StageResult out;
  const StageRun run = guarded_stage(energy, pack(warm_state), groups, steps, config.fine, out.restarts);
  out.state = finish_state(layout, run.best);
  out.energy = run.best_energy;
  out.trace = run.trace;
  out.iterations = run.iterations;
  out.converged = run.converged;
  return out;
}

FrameFit fit_frame(const HandModel& model, const KeypointFrame& frame, const FitConfig& config) {
  check_fit_config(config);
  return fit_frame_impl(model, frame, config, std::nullopt);
}

int FitReport::failed() const {
  int n = 0;
  for (const auto& f : frames) n += f.ok ? 0 : 1;
  return n;
}

FitReport fit_sequence(const HandModel& model, const std::vector<KeypointFrame>& frames, const FitConfig& config) {
  check_fit_config(config);
  if (frames.empty()) throw InvariantError("fit_sequence needs at least one frame");
  const auto started = std::chrono::steady_clock::now();
  FitReport report;
  std::optional<HandPoseState> previous;
  std::optional<Eigen::VectorXd> locked_shape;
  for (const auto& frame : frames) {
    FrameFit fit;
    try {
      if (config.warm_start && previous) {
        const KeypointMapping mapping = resolve_mapping(model, frame, config);
        check_frame(frame, mapping, model.skeleton_size());
        HandPoseState warm = *previous;
        warm.wrist_translation = wrist_translation(model, warm.beta, frame, mapping);
        fit.fine = fine_fit(model, frame, warm, config, locked_shape.has_value());
        fit.state = fit.fine.state;
        fit.energy = fit.fine.energy;
        if (fit.energy.e_key > config.warm_restart_mse * frame.observed()) {
          FrameFit cold = fit_frame_impl(model, frame, config, locked_shape);
          if (cold.energy.total < fit.energy.total) fit = std::move(cold);
        }
      } else {
        fit = fit_frame_impl(model, frame, config, locked_shape);
      }
      previous = fit.state;
      if (config.lock_shape && !locked_shape) locked_shape = fit.state.beta;
    } catch (const Error& e) {
      fit = FrameFit{};
      fit.state = HandPoseState::zero(model);
      fit.ok = false;
      fit.error = e.what();
    }
    report.frames.push_back(std::move(fit));
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace handfit
