#pragma once

#include <cstdint>
#include <vector>

#include "handfit/energy.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/random.hpp"

namespace handfit {

struct StateSampler {
  double theta_max = 0.6;          // rad, per component
  double beta_sigma = 1.0;
  double rotation_max = 3.0;       // rad, wrist angle drawn from [0, rotation_max)
  double translation_sigma = 50;   // mm
};

HandPoseState random_state(const HandModel& model, Rng& rng, const StateSampler& sampler = {});

struct SyntheticSequence {
  std::vector<HandPoseState> states;
  std::vector<KeypointFrame> frames;  // native convention, all joints observed
};

// Independent random states observed with optional i.i.d. Gaussian noise (mm).
SyntheticSequence synth_sequence(const HandModel& model, int frames, std::uint64_t seed, double noise_mm = 0,
                                 const StateSampler& sampler = {}, double frame_interval = 1.0 / 30);

// Smooth motion: random keyframes every `keyframe_interval` frames, linear in
// θ, β and translation, slerp for the wrist rotation.
SyntheticSequence synth_motion(const HandModel& model, int frames, std::uint64_t seed, double noise_mm = 0,
                               const StateSampler& sampler = {}, int keyframe_interval = 15,
                               double frame_interval = 1.0 / 30);

}  // namespace handfit
