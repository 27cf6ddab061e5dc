#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include <Eigen/Geometry>

#include "handfit/hand_model.hpp"
#include "handfit/random.hpp"

namespace testing {

using namespace handfit;

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  const Eigen::Vector3d axis = rng.normal_vector(3).normalized();
  return Eigen::AngleAxisd(rng.uniform(0, 3.1), axis).toRotationMatrix();
}

// Joint and vertex positions by explicit 4×4 transform products, one joint at a
// time, with rotations from Eigen::AngleAxis.
struct ChainOracle {
  PointsD joints;
  PointsD vertices;
};

inline Eigen::Matrix4d translation4(const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 1>(0, 3) = t;
  return m;
}

inline Eigen::Matrix4d rotation4(const Eigen::Vector3d& w) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  if (w.norm() > 0) m.block<3, 3>(0, 0) = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
  return m;
}

inline ChainOracle chain_oracle(const HandModel& m, const HandPoseState& s) {
  const int nv = m.vertex_count(), nj = m.joint_count();
  PointsD shaped = m.template_vertices;
  for (int i = 0; i < nv; ++i)
    for (int c = 0; c < 3; ++c)
      for (int b = 0; b < m.shape_dim(); ++b) shaped(i, c) += m.shape_basis(3 * i + c, b) * s.beta[b];
  PointsD rest = PointsD::Zero(nj, 3);
  for (int j = 0; j < nj; ++j)
    for (int i = 0; i < nv; ++i) rest.row(j) += m.joint_regressor(j, i) * shaped.row(i);
  std::vector<Eigen::Matrix4d> g(nj);
  for (int j = 0; j < nj; ++j) {
    const Eigen::Vector3d c = rest.row(j).transpose();
    const Eigen::Vector3d w = j == 0 ? s.wrist_rotation : Eigen::Vector3d(s.theta.row(j - 1).transpose());
    const Eigen::Matrix4d local = translation4(c) * rotation4(w) * translation4(-c);
    g[j] = j == 0 ? translation4(s.wrist_translation) * local : g[m.parents[j]] * local;
  }
  ChainOracle out;
  out.vertices = PointsD::Zero(nv, 3);
  for (int i = 0; i < nv; ++i) {
    const Eigen::Vector4d x(shaped(i, 0), shaped(i, 1), shaped(i, 2), 1);
    for (int j = 0; j < nj; ++j) out.vertices.row(i) += m.skinning_weights(i, j) * (g[j] * x).head<3>().transpose();
  }
  out.joints.resize(m.skeleton_size(), 3);
  for (int j = 0; j < nj; ++j) {
    const Eigen::Vector4d c(rest(j, 0), rest(j, 1), rest(j, 2), 1);
    out.joints.row(j) = (g[j] * c).head<3>().transpose();
  }
  for (int k = 0; k < m.fingertip_count(); ++k) out.joints.row(nj + k) = out.vertices.row(m.fingertip_vertex_ids[k]);
  return out;
}

inline HandPoseState random_pose(const HandModel& m, Rng& rng, double theta_max = 0.6) {
  HandPoseState s = HandPoseState::zero(m);
  for (Eigen::Index k = 0; k < s.theta.size(); ++k) s.theta.data()[k] = rng.uniform(-theta_max, theta_max);
  s.beta = rng.normal_vector(m.shape_dim());
  s.wrist_rotation = rng.normal_vector(3).normalized() * rng.uniform(0, 3);
  s.wrist_translation = rng.normal_vector(3, 30);
  return s;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("handfit_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
