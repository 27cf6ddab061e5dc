#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "handfit/common.hpp"
#include "handfit/rotation.hpp"

namespace handfit {

using Edge = std::array<int, 2>;

// Parametric skinned hand: template mesh, linear shape space, skinning weights,
// kinematic tree and a linear joint regressor. Immutable once finalized.
struct HandModel {
  std::string name;                   // convention tag of the skeletons it produces
  PointsD template_vertices;          // V×3, mm
  Faces faces;                        // F×3
  Eigen::MatrixXd shape_basis;        // 3V×B, column b is a flattened V×3 displacement
  Eigen::MatrixXd skinning_weights;   // V×J
  std::vector<int> parents;           // J entries, root has -1, parents[j] < j
  Eigen::MatrixXd joint_regressor;    // J×V
  std::vector<int> fingertip_vertex_ids;
  std::vector<std::string> joint_names;  // J + fingertips

  std::vector<Edge> edges;  // derived by finalize_model()

  int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
  int joint_count() const { return static_cast<int>(parents.size()); }
  int shape_dim() const { return static_cast<int>(shape_basis.cols()); }
  int fingertip_count() const { return static_cast<int>(fingertip_vertex_ids.size()); }
  int skeleton_size() const { return joint_count() + fingertip_count(); }
};

// Checks every structural invariant, fills in default joint names and derives
// the edge list. Throws InvariantError naming the failing field.
void finalize_model(HandModel& model);

// Unique undirected edges (i < j) of a triangle list, sorted.
std::vector<Edge> mesh_edges(const Faces& faces);

// Deterministic hand-like stand-in model: one root, up to five chains.
HandModel synth_model(std::uint64_t seed, int vertex_count, int joint_count, int shape_dim);

template <typename T>
struct PoseState {
  Points<T> theta;              // (J-1)×3 axis-angle per non-root joint, rad
  VectorX<T> beta;              // B shape coefficients
  Vector3<T> wrist_rotation;    // axis-angle, rad
  Vector3<T> wrist_translation; // mm

  static PoseState zero(const HandModel& model) {
    PoseState s;
    s.theta = Points<T>::Zero(model.joint_count() - 1, 3);
    s.beta = VectorX<T>::Zero(model.shape_dim());
    s.wrist_rotation = Vector3<T>::Zero();
    s.wrist_translation = Vector3<T>::Zero();
    return s;
  }
};

using HandPoseState = PoseState<double>;

// Validated construction: rejects non-finite entries and wraps axis-angle
// magnitudes into [0, 2π).
HandPoseState make_pose_state(PointsD theta, Eigen::VectorXd beta, const Eigen::Vector3d& wrist_rotation,
                              const Eigen::Vector3d& wrist_translation);
void wrap_pose_state(HandPoseState& state);
void check_state_dims(const HandModel& model, int theta_rows, int beta_size);

// Flat parameter layout: [theta (3(J-1)) | beta (B) | wrist_rotation (3) | wrist_translation (3)].
struct ParamLayout {
  int theta_offset = 0;
  int theta_size = 0;
  int beta_offset = 0;
  int beta_size = 0;
  int rotation_offset = 0;
  int translation_offset = 0;
  int size = 0;

  explicit ParamLayout(const HandModel& model);
};

template <typename T>
VectorX<T> pack(const PoseState<T>& s) {
  const auto nt = static_cast<Eigen::Index>(s.theta.size());
  VectorX<T> p(nt + s.beta.size() + 6);
  p.head(nt) = flatten(s.theta);
  p.segment(nt, s.beta.size()) = s.beta;
  p.segment(nt + s.beta.size(), 3) = s.wrist_rotation;
  p.tail(3) = s.wrist_translation;
  return p;
}

template <typename T>
PoseState<T> unpack(const ParamLayout& layout, const Eigen::Ref<const VectorX<T>>& p) {
  if (p.size() != layout.size) throw DimensionError("parameter vector has wrong length");
  PoseState<T> s;
  s.theta = Eigen::Map<const Points<T>>(p.data(), layout.theta_size / 3, 3);
  s.beta = p.segment(layout.beta_offset, layout.beta_size);
  s.wrist_rotation = p.segment(layout.rotation_offset, 3);
  s.wrist_translation = p.segment(layout.translation_offset, 3);
  return s;
}

struct Mesh {
  PointsD vertices;
  Faces faces;
  std::vector<Edge> edges;
};

struct Skeleton {
  PointsD joints;
  std::vector<std::string> names;
  std::string convention;
};

// Everything forward() computes, kept on the same scalar type as the state.
template <typename T>
struct Posed {
  Points<T> shaped;        // rest vertices after shape blend
  Points<T> rest_joints;   // J×3
  Points<T> vertices;      // posed V×3
  Points<T> joints;        // posed, J + fingertips
};

// Shaped template, rest joints, kinematic chain and linear blend skinning.
// Child transform = parent ∘ rotate_about(rest_joint, axis_angle); the root
// rotates about the rest wrist and is then translated.
template <typename T>
Posed<T> pose(const HandModel& model, const PoseState<T>& state) {
  check_state_dims(model, static_cast<int>(state.theta.rows()), static_cast<int>(state.beta.size()));
  const int nv = model.vertex_count();
  const int nj = model.joint_count();

  Posed<T> out;
  out.shaped = model.template_vertices.template cast<T>();
  if (model.shape_dim() > 0) {
    flatten(out.shaped) += model.shape_basis.template cast<T>() * state.beta;
  }
  out.rest_joints = model.joint_regressor.template cast<T>() * out.shaped;

  std::vector<Matrix3<T>> rot(nj);
  std::vector<Vector3<T>> trans(nj);
  for (int j = 0; j < nj; ++j) {
    const Vector3<T> c = out.rest_joints.row(j).transpose();
    if (j == 0) {
      const Matrix3<T> r = rodrigues<T>(state.wrist_rotation);
      rot[0] = r;
      trans[0] = c - r * c + state.wrist_translation;
    } else {
      const int p = model.parents[j];
      const Vector3<T> w = state.theta.row(j - 1).transpose();
      const Matrix3<T> r = rodrigues<T>(w);
      rot[j] = rot[p] * r;
      trans[j] = rot[p] * (c - r * c) + trans[p];
    }
  }

  out.vertices.resize(nv, 3);
  for (int i = 0; i < nv; ++i) {
    const Vector3<T> x = out.shaped.row(i).transpose();
    Vector3<T> acc = Vector3<T>::Zero();
    for (int j = 0; j < nj; ++j) {
      const double w = model.skinning_weights(i, j);
      if (w == 0.0) continue;
      acc += T(w) * (rot[j] * x + trans[j]);
    }
    out.vertices.row(i) = acc.transpose();
  }

  out.joints.resize(model.skeleton_size(), 3);
  for (int j = 0; j < nj; ++j) {
    const Vector3<T> c = out.rest_joints.row(j).transpose();
    out.joints.row(j) = (rot[j] * c + trans[j]).transpose();
  }
  for (int k = 0; k < model.fingertip_count(); ++k) {
    out.joints.row(nj + k) = out.vertices.row(model.fingertip_vertex_ids[k]);
  }
  return out;
}

std::pair<Mesh, Skeleton> forward(const HandModel& model, const HandPoseState& state);

// Rest mesh (zero pose, zero shape) with the model's topology.
Mesh rest_mesh(const HandModel& model);

Skeleton regress_rest_joints(const HandModel& model, const PointsD& shaped_vertices);

}  // namespace handfit
