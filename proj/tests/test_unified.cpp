#include <doctest.h>

#include "handfit/fitter.hpp"
#include "handfit/sampling.hpp"
#include "handfit/unified.hpp"
#include "support.hpp"

using namespace handfit;

namespace {

Correspondences first_n(int n) {
  Correspondences c;
  for (int i = 0; i < n; ++i) c.emplace_back(i, i);
  return c;
}

Mesh transformed(const Mesh& m, double s, const Eigen::Matrix3d& q, const Eigen::Vector3d& t) {
  Mesh out = m;
  out.vertices = ((s * m.vertices * q.transpose()).rowwise() + t.transpose());
  return out;
}

const StandInPair& pair() {
  static const StandInPair p = synth_stand_in_pair(11);
  return p;
}

AlignmentMap fine_to_coarse() {
  Correspondences swapped;
  for (const auto& [a, b] : pair().correspondences) swapped.emplace_back(b, a);
  return align_models(rest_mesh(pair().fine), rest_mesh(pair().coarse), swapped);
}

const MlpRegressor& small_regressor() {
  static const MlpRegressor r = [] {
    const TrainingSet set = build_training_set(pair().coarse, pair().fine, fine_to_coarse(), 1500, 3);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.seed = 5;
    return train_mlp(set, {256, 256}, cfg);
  }();
  return r;
}

// 4 input points -> 2 output joints by a fixed affine map.
TrainingSet linear_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(6, 12);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = 0.5 * rng.normal();
  Eigen::VectorXd b = rng.normal_vector(6, 10);
  TrainingSet set;
  set.inputs.resize(n, 12);
  for (Eigen::Index k = 0; k < set.inputs.size(); ++k) set.inputs.data()[k] = 20 * rng.normal();
  set.targets = (set.inputs * a.transpose()).rowwise() + b.transpose();
  set.joint_names = {"a", "b"};
  return set;
}

}  // namespace

TEST_SUITE("unified") {

TEST_CASE("aligning a mesh to itself gives the identity") {
  const Mesh m = rest_mesh(pair().coarse);
  const AlignmentMap a = align_models(m, m, first_n(20));
  CHECK(a.scale == doctest::Approx(1).epsilon(1e-12));
  CHECK(a.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-12));
  CHECK(a.translation.norm() < 1e-9);
  CHECK(a.residual_rms < 1e-9);
}

TEST_CASE("a constructed similarity is recovered") {
  Rng rng(2);
  const Mesh m = rest_mesh(pair().coarse);
  const Eigen::Matrix3d q = testing::random_rotation(rng);
  const Eigen::Vector3d t(10, -20, 5);
  const AlignmentMap a = align_models(m, transformed(m, 2, q, t), first_n(30));
  CHECK(std::abs(a.scale - 2) < 1e-9);
  CHECK((a.rotation - q).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((a.translation - t).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_NOTHROW(check_alignment(a));
  const AlignmentMap inv = a.inverse();
  CHECK((inv.apply(a.apply(Eigen::Vector3d(1, 2, 3))) - Eigen::Vector3d(1, 2, 3)).norm() < 1e-9);
}

TEST_CASE("alignment preconditions") {
  const Mesh m = rest_mesh(pair().coarse);
  CHECK_THROWS_AS(align_models(m, m, first_n(2)), InvariantError);
  Mesh line = m;
  for (int i = 0; i < 5; ++i) line.vertices.row(i) = Eigen::RowVector3d(i, 2 * i, 0);
  CHECK_THROWS_WITH_AS(align_models(line, line, first_n(5)), doctest::Contains("collinear"), InvariantError);
  CHECK_THROWS_AS(align_models(m, m, {{0, 0}, {1, 1}, {2, 100000}}), DimensionError);
  AlignmentMap bad;
  bad.scale = -1;
  CHECK_THROWS(check_alignment(bad));
}

TEST_CASE("alignment residual is invariant to a shared rigid motion") {
  Rng rng(3);
  const Mesh src = rest_mesh(pair().coarse);
  Mesh dst = transformed(src, 1.3, testing::random_rotation(rng), Eigen::Vector3d(1, 2, 3));
  for (int i = 0; i < dst.vertices.rows(); ++i) dst.vertices.row(i) += rng.normal_vector(3, 0.5).transpose();
  const AlignmentMap a = align_models(src, dst, first_n(40));
  const Eigen::Matrix3d g = testing::random_rotation(rng);
  const Eigen::Vector3d gt(-7, 4, 11);
  const AlignmentMap b = align_models(transformed(src, 1, g, gt), transformed(dst, 1, g, gt), first_n(40));
  CHECK(a.residual_rms > 0.1);
  CHECK(std::abs(a.residual_rms - b.residual_rms) < 1e-9);
  CHECK(std::abs(a.scale - b.scale) < 1e-9);
}

TEST_CASE("correspondence files round trip") {
  const Correspondences c{{0, 5}, {3, 2}, {7, 7}};
  CHECK(parse_correspondences(format_correspondences(c)) == c);
  CHECK(parse_correspondences("# note\n1,2\n\n3,4\n") == Correspondences{{1, 2}, {3, 4}});
  CHECK_THROWS_WITH_AS(parse_correspondences("1,2\n3\n"), doctest::Contains("line 2"), FormatError);
}

TEST_CASE("stand-in alignment recovers the constructed offset") {
  const AlignmentMap a = align_models(rest_mesh(pair().coarse), rest_mesh(pair().fine), pair().correspondences);
  CHECK(std::abs(a.scale - pair().offset.scale) < 1e-6);
  CHECK((a.rotation - pair().offset.rotation).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.translation - pair().offset.translation).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("training sets") {
  const AlignmentMap f2c = fine_to_coarse();
  CHECK(build_training_set(pair().coarse, pair().fine, f2c, 0, 1).size() == 0);
  const TrainingSet a = build_training_set(pair().coarse, pair().fine, f2c, 20, 4);
  const TrainingSet b = build_training_set(pair().coarse, pair().fine, f2c, 20, 4);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(a.targets.cols() == 3 * pair().fine.skeleton_size());
  CHECK(build_training_set(pair().coarse, pair().fine, f2c, 20, 5).inputs != a.inputs);

  for (int n = 0; n < a.size(); ++n) {
    const PointsD v = forward(pair().coarse, a.coarse_states[n]).first.vertices;
    const PointsD j = f2c.apply(forward(pair().fine, a.fine_states[n]).second.joints);
    CHECK((flatten(v).transpose() - a.inputs.row(n)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((flatten(j).transpose() - a.targets.row(n)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(a.coarse_states[n].theta.cwiseAbs().maxCoeff() <= 0.6);
  }
  CHECK_THROWS(build_training_set(pair().coarse, pair().fine, f2c, 5, 1, {-1, 1}));
  CHECK_THROWS(build_training_set(pair().coarse, pair().fine, f2c, -1, 1));
}

TEST_CASE("a linear map is learnt by a network without hidden layers") {
  const TrainingSet set = linear_set(400, 6);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.lr = 1e-2;
  cfg.lr_decay = 0.99;
  cfg.batch = 32;
  const MlpRegressor r = train_mlp(set, {}, cfg);
  REQUIRE(r.layers.size() == 1);
  const TrainingSet fresh = linear_set(50, 6);
  double sq = 0;
  for (int n = 0; n < fresh.size(); ++n) {
    const Eigen::VectorXd x = fresh.inputs.row(n).transpose();
    const PointsD v = Eigen::Map<const PointsD>(x.data(), 4, 3);
    sq += (predict_flat(r, v) - fresh.targets.row(n).transpose()).squaredNorm() / 2;
  }
  CHECK(std::sqrt(sq / fresh.size()) < 1e-3);
  CHECK(r.info.val_loss.back() <= r.info.val_loss.front());
}

TEST_CASE("zero epochs returns the initial network with its loss") {
  const TrainingSet set = linear_set(50, 7);
  TrainConfig cfg;
  cfg.epochs = 0;
  const MlpRegressor r = train_mlp(set, {8}, cfg);
  CHECK(r.layers.size() == 2);
  CHECK(r.info.val_loss.size() == 1);
  CHECK(std::isfinite(r.info.val_loss[0]));
  CHECK(r.info.train_loss.empty());
  CHECK_THROWS(train_mlp(TrainingSet{}, {8}, cfg));
}

TEST_CASE("training is deterministic per seed") {
  const TrainingSet set = linear_set(100, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  const MlpRegressor a = train_mlp(set, {16}, cfg);
  const MlpRegressor b = train_mlp(set, {16}, cfg);
  CHECK(a.layers[0].weight == b.layers[0].weight);
  CHECK(a.info.val_loss == b.info.val_loss);
  cfg.seed = 1;
  CHECK(train_mlp(set, {16}, cfg).layers[0].weight != a.layers[0].weight);
}

TEST_CASE("an identity network copies its input") {
  MlpRegressor r;
  r.layers.push_back({Eigen::MatrixXd::Identity(12, 12), Eigen::VectorXd::Zero(12)});
  r.input_mean = r.output_mean = Eigen::VectorXd::Zero(12);
  r.input_std = r.output_std = Eigen::VectorXd::Ones(12);
  r.joint_names = {"a", "b", "c", "d"};
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 1.5, -2, 3, 4, 5, 6, 7, 8, 9, -10, 11, 0.25;
  const Skeleton s = predict_joints(r, m);
  CHECK(s.joints == m.vertices);
  CHECK(s.names == r.joint_names);
  m.vertices.conservativeResize(3, 3);
  CHECK_THROWS_AS(predict_joints(r, m), DimensionError);
}

TEST_CASE("a trained stand-in regressor") {
  const MlpRegressor& r = small_regressor();
  CHECK(r.info.val_loss.back() <= r.info.val_loss.front());
  CHECK(r.info.lipschitz > 0);
  CHECK(r.target_convention == pair().fine.name);

  SUBCASE("training samples land near their targets") {
    const TrainingSet set = build_training_set(pair().coarse, pair().fine, fine_to_coarse(), 1500, 3);
    double err = 0;
    for (int n = 0; n < 20; ++n) {
      const Eigen::VectorXd x = set.inputs.row(n).transpose();
      const Eigen::VectorXd y = predict_flat(r, Eigen::Map<const PointsD>(x.data(), x.size() / 3, 3));
      err += (Eigen::Map<const PointsD>(y.data(), y.size() / 3, 3) -
              Eigen::Map<const PointsD>(set.targets.row(n).transpose().eval().data(), y.size() / 3, 3))
                 .rowwise()
                 .norm()
                 .mean();
    }
    CHECK(err / 20 < 5);
  }
  SUBCASE("predictions are equivariant to rigid motion of the mesh") {
    Rng rng(9);
    const Mesh m = forward(pair().coarse, testing::random_pose(pair().coarse, rng)).first;
    const Eigen::Matrix3d q = testing::random_rotation(rng);
    const Eigen::Vector3d t(30, -40, 5);
    const PointsD a = predict_joints(r, m).joints;
    const PointsD b = predict_joints(r, transformed(m, 1, q, t)).joints;
    CHECK(((a * q.transpose()).rowwise() + t.transpose() - b).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("perturbations stay within the Lipschitz bound") {
    Rng rng(10);
    const Mesh m = forward(pair().coarse, testing::random_pose(pair().coarse, rng)).first;
    Mesh moved = m;
    for (int i = 0; i < m.vertices.rows(); ++i) moved.vertices.row(i) += rng.normal_vector(3, 0.01).transpose();
    const double eps = (moved.vertices - m.vertices).norm();
    CHECK((flatten(predict_joints(r, moved).joints) - flatten(predict_joints(r, m).joints)).norm() <=
          r.info.lipschitz * eps * 1.5);
  }
  SUBCASE("regressor files round trip") {
    testing::TempDir dir("mlp");
    save_regressor(r, dir.file("a.uhm"));
    const MlpRegressor back = load_regressor(dir.file("a.uhm"));
    save_regressor(back, dir.file("b.uhm"));
    CHECK(read_file(dir.file("a.uhm")) == read_file(dir.file("b.uhm")));
    const Mesh m = rest_mesh(pair().coarse);
    CHECK(predict_joints(back, m).joints == predict_joints(r, m).joints);
    CHECK(back.info.val_loss == r.info.val_loss);
    CHECK_THROWS_AS(predict_joints(back, rest_mesh(pair().fine)), DimensionError);
  }
}

TEST_CASE("fused skeleton specs") {
  const Skeleton coarse = forward(pair().coarse, HandPoseState::zero(pair().coarse)).second;
  const Skeleton fine = forward(pair().fine, HandPoseState::zero(pair().fine)).second;

  SUBCASE("coarse-only spec reproduces the coarse skeleton") {
    FusedSkeletonSpec spec;
    for (int j = 0; j < coarse.joints.rows(); ++j) spec.joints.push_back({"j" + std::to_string(j), JointSource::Coarse, j});
    CHECK(fuse_skeletons(coarse, fine, spec).joints == coarse.joints);
  }
  SUBCASE("16 coarse and 9 fine entries give 25 joints in spec order") {
    FusedSkeletonSpec spec;
    for (int k = 0; k < 25; ++k) {
      if (k % 3 == 2 && k / 3 < 9) {
        spec.joints.push_back({"f" + std::to_string(k), JointSource::Fine, k / 3});
      } else {
        spec.joints.push_back({"c" + std::to_string(k), JointSource::Coarse, k % 16});
      }
    }
    const Skeleton out = fuse_skeletons(coarse, fine, spec);
    REQUIRE(out.joints.rows() == 25);
    for (int k = 0; k < 25; ++k) {
      const auto& j = spec.joints[k];
      const Skeleton& src = j.source == JointSource::Coarse ? coarse : fine;
      CHECK(out.joints.row(k) == src.joints.row(j.index));
      CHECK(out.names[k] == j.name);
    }
  }
  SUBCASE("duplicate names are rejected when the spec is loaded") {
    CHECK_THROWS_WITH_AS(parse_fused_spec("name,source,index\na,coarse,0\na,fine,1\n"), doctest::Contains("duplicate"),
                         InvariantError);
  }
  SUBCASE("bad entries") {
    CHECK_THROWS_AS(parse_fused_spec("name,source,index\na,middle,0\n"), FormatError);
    CHECK_THROWS_AS(parse_fused_spec("a,coarse,0\n"), FormatError);
    FusedSkeletonSpec spec;
    spec.joints.push_back({"x", JointSource::Fine, 1000});
    CHECK_THROWS(fuse_skeletons(coarse, fine, spec));
    spec = default_fused_spec(pair().coarse, pair().fine.joint_names, pair().fine.name);
    Skeleton other = fine;
    other.convention = "elsewhere";
    CHECK_THROWS_AS(fuse_skeletons(coarse, other, spec), InvariantError);
  }
  SUBCASE("default spec") {
    const FusedSkeletonSpec spec = default_fused_spec(pair().coarse, pair().fine.joint_names, pair().fine.name);
    CHECK(spec.size() == 25);
    CHECK(parse_fused_spec(format_fused_spec(spec)).size() == 25);
    CHECK(format_fused_spec(parse_fused_spec(format_fused_spec(spec))) == format_fused_spec(spec));
    const Skeleton out = fuse_skeletons(coarse, fine, spec);
    for (int k = 0; k < out.joints.rows(); ++k) {
      bool found = false;
      for (const Skeleton* s : {&coarse, &fine})
        for (int i = 0; i < s->joints.rows(); ++i) found = found || s->joints.row(i) == out.joints.row(k);
      CHECK(found);
    }
  }
}

TEST_CASE("fused joints of a fitted frame lie inside the inflated mesh bounds") {
  const HandModel& coarse = pair().coarse;
  const FusedSkeletonSpec spec = default_fused_spec(coarse, pair().fine.joint_names, pair().fine.name);
  const SyntheticSequence seq = synth_motion(coarse, 3, 12);
  FitConfig cfg;
  cfg.fine.max_iters = 600;
  const FitReport report = fit_sequence(coarse, seq.frames, cfg);
  for (const auto& f : report.frames) {
    REQUIRE(f.ok);
    const auto [mesh, skeleton] = forward(coarse, f.state);
    const Skeleton fused = fuse_skeletons(skeleton, predict_joints(small_regressor(), mesh), spec);
    const Eigen::RowVector3d lo = mesh.vertices.colwise().minCoeff().array() - 5;
    const Eigen::RowVector3d hi = mesh.vertices.colwise().maxCoeff().array() + 5;
    for (int k = 0; k < fused.joints.rows(); ++k) {
      INFO("joint ", k);
      CHECK((fused.joints.row(k).array() >= lo.array()).all());
      CHECK((fused.joints.row(k).array() <= hi.array()).all());
    }
  }
}

}  // TEST_SUITE
