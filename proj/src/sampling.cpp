#include "handfit/sampling.hpp"

#include <Eigen/Geometry>

namespace handfit {

HandPoseState random_state(const HandModel& model, Rng& rng, const StateSampler& sampler) {
  HandPoseState s = HandPoseState::zero(model);
  for (Eigen::Index k = 0; k < s.theta.size(); ++k) s.theta.data()[k] = rng.uniform(-sampler.theta_max, sampler.theta_max);
  s.beta = rng.normal_vector(model.shape_dim(), sampler.beta_sigma);
  s.wrist_rotation = rng.normal_vector(3).normalized() * rng.uniform(0, sampler.rotation_max);
  s.wrist_translation = rng.normal_vector(3, sampler.translation_sigma);
  return s;
}

namespace {

KeypointFrame observe(const HandModel& model, const HandPoseState& s, Rng& rng, double noise_mm, double t) {
  const Skeleton sk = forward(model, s).second;
  KeypointFrame f;
  f.timestamp = t;
  f.convention = "native";
  f.keypoints = sk.joints;
  for (Eigen::Index i = 0; i < f.keypoints.size(); ++i) f.keypoints.data()[i] += noise_mm * rng.normal();
  f.mask.assign(sk.joints.rows(), true);
  return f;
}

Eigen::Quaterniond to_quaternion(const Eigen::Vector3d& w) {
  const double a = w.norm();
  return a > 0 ? Eigen::Quaterniond(Eigen::AngleAxisd(a, w / a)) : Eigen::Quaterniond::Identity();
}

}  // namespace

SyntheticSequence synth_sequence(const HandModel& model, int frames, std::uint64_t seed, double noise_mm,
                                 const StateSampler& sampler, double frame_interval) {
  if (frames < 0) throw InvariantError("frame count must be non-negative");
  Rng rng(seed);
  SyntheticSequence out;
  for (int k = 0; k < frames; ++k) {
    HandPoseState s = random_state(model, rng, sampler);
    out.frames.push_back(observe(model, s, rng, noise_mm, k * frame_interval));
    out.states.push_back(std::move(s));
  }
  return out;
}

SyntheticSequence synth_motion(const HandModel& model, int frames, std::uint64_t seed, double noise_mm,
                               const StateSampler& sampler, int keyframe_interval, double frame_interval) {
  if (frames < 0) throw InvariantError("frame count must be non-negative");
  if (keyframe_interval < 1) throw InvariantError("keyframe interval must be positive");
  Rng rng(seed);
  Rng noise_rng(seed ^ 0x5851f42d4c957f2dull);
  SyntheticSequence out;
  HandPoseState a = random_state(model, rng, sampler);
  HandPoseState b = random_state(model, rng, sampler);
  for (int k = 0; k < frames; ++k) {
    const int phase = k % keyframe_interval;
    if (k > 0 && phase == 0) {
      a = b;
      b = random_state(model, rng, sampler);
    }
    const double u = static_cast<double>(phase) / keyframe_interval;
    HandPoseState s = a;
    s.theta = (1 - u) * a.theta + u * b.theta;
    s.beta = a.beta;  // one subject per sequence
    s.wrist_translation = (1 - u) * a.wrist_translation + u * b.wrist_translation;
    const Eigen::AngleAxisd r(to_quaternion(a.wrist_rotation).slerp(u, to_quaternion(b.wrist_rotation)));
    s.wrist_rotation = r.angle() * r.axis();
    out.frames.push_back(observe(model, s, noise_rng, noise_mm, k * frame_interval));
    out.states.push_back(std::move(s));
  }
  return out;
}

}  // namespace handfit
