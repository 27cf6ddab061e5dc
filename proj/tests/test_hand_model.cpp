#include <doctest.h>

#include "handfit/dual.hpp"
#include "handfit/optim.hpp"
#include "handfit/rotation.hpp"
#include "handfit/uhm.hpp"
#include "support.hpp"

using namespace handfit;
using testing::random_pose;

namespace {

const HandModel& model7() {
  static const HandModel m = synth_model(7, 200, 16, 10);
  return m;
}

}  // namespace

TEST_SUITE("hand_model") {

TEST_CASE("synthetic model is deterministic and seed dependent") {
  const HandModel a = synth_model(7, 200, 16, 10);
  const HandModel b = synth_model(7, 200, 16, 10);
  CHECK(a.template_vertices == b.template_vertices);
  CHECK(a.shape_basis == b.shape_basis);
  CHECK(a.skinning_weights == b.skinning_weights);
  CHECK(a.joint_regressor == b.joint_regressor);
  CHECK(a.faces == b.faces);
  CHECK(a.parents == b.parents);
  const HandModel c = synth_model(8, 200, 16, 10);
  CHECK(a.template_vertices != c.template_vertices);
  CHECK(a.vertex_count() == 200);
  CHECK(a.joint_count() == 16);
  CHECK(a.shape_dim() == 10);
  CHECK(a.fingertip_count() == 5);
  CHECK(a.skeleton_size() == 21);
}

TEST_CASE("synthetic model preconditions") {
  CHECK_THROWS_AS(synth_model(7, 10, 16, 10), InvariantError);
  CHECK_THROWS_AS(synth_model(7, 200, 2, 10), InvariantError);
  CHECK_THROWS_AS(synth_model(7, 200, 16, 0), InvariantError);
}

TEST_CASE("synthetic model satisfies the structural invariants") {
  const HandModel& m = model7();
  for (int i = 0; i < m.vertex_count(); ++i) {
    CHECK(m.skinning_weights.row(i).sum() == 1.0);
    CHECK(m.skinning_weights.row(i).minCoeff() >= 0);
  }
  for (int j = 0; j < m.joint_count(); ++j) {
    CHECK(m.joint_regressor.row(j).sum() == 1.0);
    CHECK(m.joint_regressor.row(j).minCoeff() >= 0);
  }
  CHECK(m.parents[0] == -1);
  for (int j = 1; j < m.joint_count(); ++j) CHECK(m.parents[j] < j);
  CHECK(m.faces.maxCoeff() < m.vertex_count());
  CHECK_FALSE(m.edges.empty());
}

TEST_CASE("finalize_model rejects broken models") {
  SUBCASE("cycle") {
    HandModel m = model7();
    m.parents[2] = 3;
    m.parents[3] = 2;
    CHECK_THROWS_WITH_AS(finalize_model(m), doctest::Contains("kinematic tree has cycle"), InvariantError);
  }
  SUBCASE("two roots") {
    HandModel m = model7();
    m.parents[4] = -1;
    CHECK_THROWS_AS(finalize_model(m), InvariantError);
  }
  SUBCASE("skinning row sum") {
    HandModel m = model7();
    m.skinning_weights.row(5) *= 0.9;
    CHECK_THROWS_WITH_AS(finalize_model(m), doctest::Contains("row 5"), InvariantError);
  }
  SUBCASE("regressor row sum") {
    HandModel m = model7();
    m.joint_regressor.row(2) *= 1.1;
    CHECK_THROWS_WITH_AS(finalize_model(m), doctest::Contains("row 2"), InvariantError);
  }
  SUBCASE("face index") {
    HandModel m = model7();
    m.faces(0, 1) = m.vertex_count();
    CHECK_THROWS_AS(finalize_model(m), InvariantError);
  }
  SUBCASE("fingertip index") {
    HandModel m = model7();
    m.fingertip_vertex_ids[0] = -1;
    CHECK_THROWS_AS(finalize_model(m), InvariantError);
  }
}

TEST_CASE("mesh_edges lists each undirected edge once") {
  Faces f(2, 3);
  f << 0, 1, 2, 2, 1, 3;
  const auto e = mesh_edges(f);
  const std::vector<Edge> want{{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}};
  CHECK(e == want);
}

TEST_CASE("pose state construction wraps and validates") {
  const HandModel& m = model7();
  PointsD theta = PointsD::Zero(15, 3);
  theta(0, 0) = 2 * std::numbers::pi + 0.5;
  const HandPoseState s = make_pose_state(theta, Eigen::VectorXd::Zero(10), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero());
  CHECK(s.theta.row(0).norm() < 2 * std::numbers::pi);
  CHECK(rodrigues<double>(s.theta.row(0).transpose()).isApprox(rodrigues<double>(theta.row(0).transpose()), 1e-12));
  theta(1, 1) = std::nan("");
  CHECK_THROWS_AS(make_pose_state(theta, Eigen::VectorXd::Zero(10), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()),
                  NumericError);
  HandPoseState bad = HandPoseState::zero(m);
  bad.beta.resize(3);
  CHECK_THROWS_AS(forward(m, bad), DimensionError);
}

TEST_CASE("rodrigues agrees with AngleAxis, including the small-angle branch") {
  Rng rng(3);
  for (double scale : {1e-12, 1e-6, 5e-3, 0.5, 3.0}) {
    const Eigen::Vector3d w = rng.normal_vector(3).normalized() * scale;
    const Eigen::Matrix3d want = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
    CHECK((rodrigues<double>(w) - want).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(rodrigues<double>(Eigen::Vector3d::Zero()) == Eigen::Matrix3d::Identity());
}

TEST_CASE("zero state reproduces the template") {
  const HandModel& m = model7();
  const auto [mesh, sk] = forward(m, HandPoseState::zero(m));
  CHECK((mesh.vertices - m.template_vertices).cwiseAbs().maxCoeff() < 1e-12);
  const PointsD rest = m.joint_regressor * m.template_vertices;
  CHECK((sk.joints.topRows(16) - rest).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(sk.names == m.joint_names);
  CHECK(sk.convention == m.name);
}

TEST_CASE("pure wrist rotation rotates every joint about the wrist") {
  const HandModel& m = model7();
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Matrix3d q = testing::random_rotation(rng);
    HandPoseState s = HandPoseState::zero(m);
    const Eigen::AngleAxisd aa(q);
    s.wrist_rotation = aa.angle() * aa.axis();
    const auto rest = forward(m, HandPoseState::zero(m));
    const auto posed = forward(m, s);
    const Eigen::RowVector3d wrist = rest.second.joints.row(0);
    for (int j = 0; j < posed.second.joints.rows(); ++j) {
      const Eigen::RowVector3d want = wrist + (q * (rest.second.joints.row(j) - wrist).transpose()).transpose();
      CHECK((posed.second.joints.row(j) - want).norm() < 1e-9);
    }
  }
}

TEST_CASE("extra wrist rotation is rigidly equivariant for any shape") {
  const HandModel& m = model7();
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    HandPoseState s = HandPoseState::zero(m);
    s.beta = rng.normal_vector(10);
    s.wrist_rotation = rng.normal_vector(3) * 0.7;
    s.wrist_translation = rng.normal_vector(3, 20);
    const Eigen::Matrix3d q = testing::random_rotation(rng);
    HandPoseState t = s;
    const Eigen::AngleAxisd aa(q * rodrigues<double>(s.wrist_rotation));
    t.wrist_rotation = aa.angle() * aa.axis();
    const auto a = forward(m, s);
    const auto b = forward(m, t);
    const Eigen::RowVector3d w = a.second.joints.row(0);
    const PointsD want_v = ((q * (a.first.vertices.rowwise() - w).transpose()).transpose()).rowwise() + w;
    const PointsD want_j = ((q * (a.second.joints.rowwise() - w).transpose()).transpose()).rowwise() + w;
    CHECK((b.first.vertices - want_v).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((b.second.joints - want_j).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("forward matches a step-by-step transform composition oracle") {
  const HandModel& m = model7();
  Rng rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    const HandPoseState s = random_pose(m, rng);
    const auto [mesh, sk] = forward(m, s);
    const auto oracle = testing::chain_oracle(m, s);
    CHECK((sk.joints - oracle.joints).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((mesh.vertices - oracle.vertices).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("posed vertices lie in the hull of their rigidly moved copies") {
  const HandModel& m = model7();
  Rng rng(14);
  const HandPoseState s = random_pose(m, rng);
  const PointsD posed = forward(m, s).first.vertices;
  // copies[j] = every vertex moved rigidly with joint j alone
  std::vector<PointsD> copies;
  for (int j = 0; j < m.joint_count(); ++j) {
    HandModel rigid = m;
    rigid.skinning_weights.setZero();
    rigid.skinning_weights.col(j).setOnes();
    copies.push_back(forward(rigid, s).first.vertices);
  }
  for (int i = 0; i < m.vertex_count(); ++i) {
    Eigen::RowVector3d lo = Eigen::RowVector3d::Constant(1e300), hi = -lo, blend = Eigen::RowVector3d::Zero();
    for (int j = 0; j < m.joint_count(); ++j) {
      const double w = m.skinning_weights(i, j);
      if (w == 0) continue;
      lo = lo.cwiseMin(copies[j].row(i));
      hi = hi.cwiseMax(copies[j].row(i));
      blend += w * copies[j].row(i);
    }
    CHECK((posed.row(i) - blend).norm() < 1e-9);
    CHECK((posed.row(i).array() >= lo.array() - 1e-9).all());
    CHECK((posed.row(i).array() <= hi.array() + 1e-9).all());
  }
}

TEST_CASE("forward is deterministic") {
  const HandModel& m = model7();
  Rng rng(15);
  const HandPoseState s = random_pose(m, rng);
  const auto a = forward(m, s);
  const auto b = forward(m, s);
  CHECK(a.first.vertices == b.first.vertices);
  CHECK(a.second.joints == b.second.joints);
}

TEST_CASE("dual-number derivatives of every output match central differences") {
  const HandModel m = synth_model(5, 80, 6, 3);
  const ParamLayout layout(m);
  Rng rng(16);
  for (int trial = 0; trial < 3; ++trial) {
    const HandPoseState s = random_pose(m, rng);
    const Eigen::VectorXd x = pack(s);
    for (int k = 0; k < layout.size; ++k) {
      VectorX<DualD> xd = x.cast<DualD>();
      xd[k].eps = 1;
      const Posed<DualD> pd = pose(m, unpack<DualD>(layout, xd));
      const double h = 1e-5;
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const Posed<double> pp = pose(m, unpack<double>(layout, xp));
      const Posed<double> pm = pose(m, unpack<double>(layout, xm));
      for (Eigen::Index i = 0; i < pp.vertices.size(); ++i) {
        const double fd = (pp.vertices.data()[i] - pm.vertices.data()[i]) / (2 * h);
        const double ad = pd.vertices.data()[i].eps;
        CHECK(std::abs(fd - ad) <= std::max(1e-7, 1e-4 * std::abs(fd)) + 1e-5);
      }
      for (Eigen::Index i = 0; i < pp.joints.size(); ++i) {
        const double fd = (pp.joints.data()[i] - pm.joints.data()[i]) / (2 * h);
        const double ad = pd.joints.data()[i].eps;
        CHECK(std::abs(fd - ad) <= std::max(1e-7, 1e-4 * std::abs(fd)) + 1e-5);
      }
    }
  }
}

TEST_CASE("joint regression") {
  const HandModel& m = model7();
  SUBCASE("rest input matches forward at zero state") {
    const Skeleton sk = regress_rest_joints(m, m.template_vertices);
    const auto f = forward(m, HandPoseState::zero(m));
    CHECK((sk.joints - f.second.joints.topRows(16)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("selector row picks a vertex, uniform row gives the centroid") {
    HandModel toy = m;
    toy.joint_regressor.setZero();
    toy.joint_regressor(0, 17) = 1;
    for (int j = 1; j < toy.joint_count(); ++j) toy.joint_regressor.row(j).setConstant(1.0 / toy.vertex_count());
    finalize_model(toy);
    const Skeleton sk = regress_rest_joints(toy, toy.template_vertices);
    CHECK((sk.joints.row(0) - toy.template_vertices.row(17)).norm() < 1e-12);
    CHECK((sk.joints.row(1) - toy.template_vertices.colwise().mean()).norm() < 1e-9);
  }
  SUBCASE("wrong vertex count") { CHECK_THROWS_AS(regress_rest_joints(m, PointsD::Zero(10, 3)), DimensionError); }
}

}  // TEST_SUITE
