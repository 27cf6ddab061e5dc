#include "handfit/energy.hpp"

#include <cmath>
#include <string>

namespace handfit {

int KeypointFrame::observed() const {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

void check_weights(const EnergyWeights& w) {
  if (!std::isfinite(w.lambda_reg) || w.lambda_reg < 0 || !std::isfinite(w.lambda_smooth) || w.lambda_smooth < 0) {
    throw InvariantError("energy weights must be finite and non-negative");
  }
}

void check_frame(const KeypointFrame& frame, const KeypointMapping& mapping, int skeleton_size) {
  const int n = frame.size();
  if (n < 1) throw DimensionError("keypoint frame is empty");
  if (static_cast<int>(frame.mask.size()) != n) throw DimensionError("keypoint mask length differs from point count");
  if (static_cast<int>(mapping.size()) != n) {
    throw DimensionError("keypoint mapping has " + std::to_string(mapping.size()) + " entries for " +
                         std::to_string(n) + " keypoints");
  }
  int observed = 0;
  for (int i = 0; i < n; ++i) {
    if (!frame.mask[i]) continue;
    ++observed;
    if (mapping[i] < 0 || mapping[i] >= skeleton_size) {
      throw DimensionError("keypoint " + std::to_string(i) + " maps to joint " + std::to_string(mapping[i]) +
                           " outside skeleton of size " + std::to_string(skeleton_size));
    }
    if (!frame.keypoints.row(i).allFinite()) {
      throw NumericError("keypoint " + std::to_string(i) + " is not finite");
    }
  }
  if (observed == 0) throw DimensionError("keypoint frame has no observed points");
}

double e_smooth(const Mesh& mesh, EdgeCounting counting) {
  return e_smooth<double>(mesh.vertices, mesh.edges, counting);
}

double e_key(const KeypointFrame& frame, const Skeleton& skeleton, const KeypointMapping& mapping) {
  return e_key<double>(frame, skeleton.joints, mapping);
}

EnergyBreakdown total_energy(const HandModel& model, const HandPoseState& state, const KeypointFrame& frame,
                             const KeypointMapping& mapping, const EnergyWeights& weights) {
  check_weights(weights);
  const Posed<double> p = pose(model, state);
  EnergyBreakdown e;
  e.e_key = e_key<double>(frame, p.joints, mapping);
  e.e_reg = e_reg(state);
  e.e_smooth = e_smooth<double>(p.vertices, model.edges, weights.edge_counting);
  e.total = e.e_key + weights.lambda_reg * e.e_reg + weights.lambda_smooth * e.e_smooth;
  return e;
}

EnergyBreakdown total_energy_gradient(const HandModel& model, const HandPoseState& state,
                                      const KeypointFrame& frame, const KeypointMapping& mapping,
                                      const EnergyWeights& weights, Eigen::VectorXd& gradient) {
  check_weights(weights);
  check_state_dims(model, static_cast<int>(state.theta.rows()), static_cast<int>(state.beta.size()));
  const int nv = model.vertex_count();
  const int nj = model.joint_count();
  const int ntips = model.fingertip_count();
  const ParamLayout layout(model);

  // Forward pass, keeping the per-joint transforms.
  PointsD shaped = model.template_vertices;
  if (model.shape_dim() > 0) flatten(shaped) += model.shape_basis * state.beta;
  const PointsD rest = model.joint_regressor * shaped;

  std::vector<RotationJacobian> local(nj);
  std::vector<Eigen::Matrix3d> rot(nj);
  std::vector<Eigen::Vector3d> trans(nj);
  for (int j = 0; j < nj; ++j) {
    const Eigen::Vector3d c = rest.row(j).transpose();
    if (j == 0) {
      local[0] = rodrigues_jacobian(state.wrist_rotation);
      rot[0] = local[0].rotation;
      trans[0] = c - rot[0] * c + state.wrist_translation;
    } else {
      const int p = model.parents[j];
      local[j] = rodrigues_jacobian(state.theta.row(j - 1).transpose());
      const Eigen::Matrix3d& r = local[j].rotation;
      rot[j] = rot[p] * r;
      trans[j] = rot[p] * (c - r * c) + trans[p];
    }
  }
  PointsD verts = PointsD::Zero(nv, 3);
  for (int i = 0; i < nv; ++i) {
    const Eigen::Vector3d x = shaped.row(i).transpose();
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int j = 0; j < nj; ++j) {
      const double w = model.skinning_weights(i, j);
      if (w != 0.0) acc += w * (rot[j] * x + trans[j]);
    }
    verts.row(i) = acc.transpose();
  }
  PointsD joints(nj + ntips, 3);
  for (int j = 0; j < nj; ++j) joints.row(j) = (rot[j] * rest.row(j).transpose() + trans[j]).transpose();
  for (int k = 0; k < ntips; ++k) joints.row(nj + k) = verts.row(model.fingertip_vertex_ids[k]);

  // Energies and their gradients w.r.t. posed joints and vertices.
  check_frame(frame, mapping, nj + ntips);
  EnergyBreakdown e;
  PointsD g_joints = PointsD::Zero(nj + ntips, 3);
  for (int i = 0; i < frame.size(); ++i) {
    if (!frame.mask[i]) continue;
    const int j = mapping[i];
    const Eigen::RowVector3d d = joints.row(j) - frame.keypoints.row(i);
    e.e_key += d.squaredNorm();
    g_joints.row(j) += 2 * d;
  }
  e.e_reg = e_reg(state);
  PointsD g_verts = PointsD::Zero(nv, 3);
  const double edge_factor = weights.edge_counting == EdgeCounting::Directed ? 2.0 : 1.0;
  double smooth = 0;
  for (const auto& [a, b] : model.edges) {
    const Eigen::RowVector3d d = verts.row(a) - verts.row(b);
    smooth += d.squaredNorm();
    const Eigen::RowVector3d g = (2 * edge_factor * weights.lambda_smooth) * d;
    g_verts.row(a) += g;
    g_verts.row(b) -= g;
  }
  e.e_smooth = edge_factor * smooth;
  e.total = e.e_key + weights.lambda_reg * e.e_reg + weights.lambda_smooth * e.e_smooth;
  for (int k = 0; k < ntips; ++k) g_verts.row(model.fingertip_vertex_ids[k]) += g_joints.row(nj + k);

  // Reverse through skinning and joint readout.
  std::vector<Eigen::Matrix3d> g_rot(nj, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> g_trans(nj, Eigen::Vector3d::Zero());
  PointsD g_shaped = PointsD::Zero(nv, 3);
  PointsD g_rest = PointsD::Zero(nj, 3);
  for (int i = 0; i < nv; ++i) {
    const Eigen::Vector3d gv = g_verts.row(i).transpose();
    if (gv.isZero(0.0)) continue;
    const Eigen::Vector3d x = shaped.row(i).transpose();
    Eigen::Vector3d gx = Eigen::Vector3d::Zero();
    for (int j = 0; j < nj; ++j) {
      const double w = model.skinning_weights(i, j);
      if (w == 0.0) continue;
      g_rot[j].noalias() += w * gv * x.transpose();
      g_trans[j] += w * gv;
      gx.noalias() += w * rot[j].transpose() * gv;
    }
    g_shaped.row(i) += gx.transpose();
  }
  for (int j = 0; j < nj; ++j) {
    const Eigen::Vector3d gp = g_joints.row(j).transpose();
    const Eigen::Vector3d c = rest.row(j).transpose();
    g_rot[j].noalias() += gp * c.transpose();
    g_trans[j] += gp;
    g_rest.row(j) += (rot[j].transpose() * gp).transpose();
  }

  // Reverse through the kinematic chain, children first.
  gradient.setZero(layout.size);
  for (int j = nj - 1; j >= 1; --j) {
    const int p = model.parents[j];
    const Eigen::Matrix3d& r = local[j].rotation;
    const Eigen::Vector3d c = rest.row(j).transpose();
    Eigen::Matrix3d g_local = rot[p].transpose() * g_rot[j];
    g_rot[p].noalias() += g_rot[j] * r.transpose();
    const Eigen::Vector3d u = c - r * c;
    g_rot[p].noalias() += g_trans[j] * u.transpose();
    g_trans[p] += g_trans[j];
    const Eigen::Vector3d gu = rot[p].transpose() * g_trans[j];
    g_rest.row(j) += (gu - r.transpose() * gu).transpose();
    g_local.noalias() -= gu * c.transpose();
    for (int k = 0; k < 3; ++k) {
      const int idx = layout.theta_offset + 3 * (j - 1) + k;
      gradient[idx] = g_local.cwiseProduct(local[j].partials[k]).sum() +
                      2 * weights.lambda_reg * state.theta(j - 1, k);
    }
  }
  {
    const Eigen::Vector3d c = rest.row(0).transpose();
    const Eigen::Matrix3d g_local = g_rot[0] - g_trans[0] * c.transpose();
    g_rest.row(0) += (g_trans[0] - rot[0].transpose() * g_trans[0]).transpose();
    for (int k = 0; k < 3; ++k) {
      gradient[layout.rotation_offset + k] = g_local.cwiseProduct(local[0].partials[k]).sum();
    }
    gradient.segment<3>(layout.translation_offset) = g_trans[0];
  }
  g_shaped.noalias() += model.joint_regressor.transpose() * g_rest;
  if (layout.beta_size > 0) {
    gradient.segment(layout.beta_offset, layout.beta_size) =
        model.shape_basis.transpose() * flatten(g_shaped) + 2 * weights.lambda_reg * state.beta;
  }
  return e;
}

}  // namespace handfit
