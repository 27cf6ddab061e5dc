#include <doctest.h>

#include "handfit/fitter.hpp"
#include "handfit/rotation.hpp"
#include "handfit/sampling.hpp"
#include "support.hpp"

using namespace handfit;

namespace {

const HandModel& model7() {
  static const HandModel m = synth_model(7, 200, 16, 10);
  return m;
}

KeypointFrame observe(const HandModel& m, const HandPoseState& s) {
  KeypointFrame f;
  f.keypoints = forward(m, s).second.joints;
  f.mask.assign(f.keypoints.rows(), true);
  return f;
}

double mean_joint_error(const HandModel& m, const HandPoseState& a, const HandPoseState& b) {
  return (forward(m, a).second.joints - forward(m, b).second.joints).rowwise().norm().mean();
}

Eigen::Vector3d axis_angle(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

}  // namespace

TEST_SUITE("fitter") {

TEST_CASE("coarse stage recovers a pure wrist rotation") {
  const HandModel& m = model7();
  Rng rng(21);
  FitConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    HandPoseState truth = HandPoseState::zero(m);
    const Eigen::Matrix3d q = testing::random_rotation(rng);
    truth.wrist_rotation = axis_angle(q);
    truth.wrist_translation = rng.normal_vector(3, 40);
    const StageResult r = coarse_fit(m, observe(m, truth), cfg);
    const double deg = geodesic_angle(rodrigues<double>(r.state.wrist_rotation), q) * 180 / std::numbers::pi;
    CHECK(deg < 0.5);
    CHECK((r.state.wrist_translation - truth.wrist_translation).norm() < 1e-9);
  }
}

TEST_CASE("coarse stage keeps the rest orientation") {
  const HandModel& m = model7();
  const StageResult r = coarse_fit(m, observe(m, HandPoseState::zero(m)), FitConfig{});
  CHECK(geodesic_angle(rodrigues<double>(r.state.wrist_rotation), Eigen::Matrix3d::Identity()) * 180 / std::numbers::pi <
        0.5);
}

TEST_CASE("a frame without an observed wrist is rejected") {
  const HandModel& m = model7();
  KeypointFrame f = observe(m, HandPoseState::zero(m));
  f.mask[0] = false;
  CHECK_THROWS_WITH_AS(coarse_fit(m, f, FitConfig{}), doctest::Contains("wrist"), InvariantError);
  CHECK_THROWS_AS(fit_frame(m, f, FitConfig{}), InvariantError);
}

TEST_CASE("noiseless round trip recovers joints below 0.1 mm") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 3, 31);
  for (int k = 0; k < 3; ++k) {
    const FrameFit fit = fit_frame(m, seq.frames[k], FitConfig{});
    CHECK(fit.ok);
    CHECK(mean_joint_error(m, fit.state, seq.states[k]) < 0.1);
    CHECK(fit.energy.total <= fit.coarse.energy.total);
  }
}

TEST_CASE("both gradient routes drive the fit to the same answer") {
  const HandModel m = synth_model(3, 120, 8, 4);
  const SyntheticSequence seq = synth_sequence(m, 1, 5);
  FitConfig a, b;
  a.fine.max_iters = b.fine.max_iters = 200;
  b.gradient_mode = GradientMode::ForwardDual;
  const FrameFit fa = fit_frame(m, seq.frames[0], a);
  const FrameFit fb = fit_frame(m, seq.frames[0], b);
  CHECK(fa.energy.total == doctest::Approx(fb.energy.total).epsilon(1e-6));
}

TEST_CASE("fine stage started at its own optimum does not climb") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 1, 32);
  const FrameFit fit = fit_frame(m, seq.frames[0], FitConfig{});
  const StageResult again = fine_fit(m, seq.frames[0], fit.state, FitConfig{});
  CHECK(again.energy.total <= fit.energy.total * (1 + 1e-12));
  CHECK(again.trace.front().total == doctest::Approx(fit.energy.total).epsilon(1e-9));
}

TEST_CASE("a repeated frame converges quickly under warm start") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 1, 33);
  const std::vector<KeypointFrame> frames(10, seq.frames[0]);
  const FitReport report = fit_sequence(m, frames, FitConfig{});
  REQUIRE(report.frames.size() == 10);
  for (int k = 1; k < 10; ++k) {
    CHECK(report.frames[k].coarse.iterations == 0);
    CHECK(report.frames[k].fine.iterations <= 10);
    CHECK(report.frames[k].energy.total <= report.frames[0].energy.total * (1 + 1e-9));
  }
}

TEST_CASE("a single-frame sequence equals fit_frame") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 1, 34);
  const FitReport report = fit_sequence(m, seq.frames, FitConfig{});
  const FrameFit one = fit_frame(m, seq.frames[0], FitConfig{});
  CHECK(pack(report.frames[0].state) == pack(one.state));
  CHECK(report.frames[0].energy.total == one.energy.total);
}

TEST_CASE("one bad frame is flagged and the rest are fitted") {
  const HandModel& m = model7();
  SyntheticSequence seq = synth_motion(m, 4, 35);
  seq.frames[2].mask.assign(seq.frames[2].size(), false);
  FitConfig cfg;
  cfg.fine.max_iters = 300;
  const FitReport report = fit_sequence(m, seq.frames, cfg);
  CHECK(report.failed() == 1);
  CHECK_FALSE(report.frames[2].ok);
  CHECK_FALSE(report.frames[2].error.empty());
  CHECK(report.frames[3].ok);
}

TEST_CASE("fits are deterministic") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_motion(m, 3, 36);
  FitConfig cfg;
  cfg.fine.max_iters = 300;
  const FitReport a = fit_sequence(m, seq.frames, cfg);
  const FitReport b = fit_sequence(m, seq.frames, cfg);
  for (int k = 0; k < 3; ++k) {
    CHECK(pack(a.frames[k].state) == pack(b.frames[k].state));
    CHECK(a.frames[k].fine.trace.size() == b.frames[k].fine.trace.size());
  }
}

TEST_CASE("fit quality is invariant to rotating the keypoints about the wrist") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 1, 37, 1.0);
  Rng rng(38);
  const Eigen::Matrix3d q = testing::random_rotation(rng);
  KeypointFrame rotated = seq.frames[0];
  const Eigen::RowVector3d w = rotated.keypoints.row(0);
  rotated.keypoints = ((q * (rotated.keypoints.rowwise() - w).transpose()).transpose()).rowwise() + w;
  const FrameFit a = fit_frame(m, seq.frames[0], FitConfig{});
  const FrameFit b = fit_frame(m, rotated, FitConfig{});
  CHECK(b.energy.e_key == doctest::Approx(a.energy.e_key).epsilon(0.01));
}

TEST_CASE("warm start is no worse than cold start on a smooth sequence") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_motion(m, 5, 39, 0.0, {0.3, 1.0, 1.0, 30});
  FitConfig warm, cold;
  cold.warm_start = false;
  const FitReport a = fit_sequence(m, seq.frames, warm);
  const FitReport b = fit_sequence(m, seq.frames, cold);
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    CHECK(a.frames[k].energy.total <= b.frames[k].energy.total * 1.01 + 1e-9);
  }
}

TEST_CASE("divergence guard and config validation") {
  const HandModel& m = model7();
  const SyntheticSequence seq = synth_sequence(m, 1, 40);
  FitConfig cfg;
  cfg.fine_pose_shape.lr = 50;
  cfg.fine.max_iters = 50;
  bool restarted_or_failed = false;
  try {
    const FrameFit fit = fit_frame(m, seq.frames[0], cfg);
    restarted_or_failed = fit.fine.restarts > 0;
  } catch (const NumericError&) {
    restarted_or_failed = true;
  }
  CHECK(restarted_or_failed);
  FitConfig bad;
  bad.fine.max_iters = 0;
  CHECK_THROWS_AS(check_fit_config(bad), InvariantError);
  bad = FitConfig{};
  bad.weights.lambda_reg = -1;
  CHECK_THROWS(check_fit_config(bad));
}

}  // TEST_SUITE
