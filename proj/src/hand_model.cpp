#include "handfit/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace handfit {

namespace {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

void check_stochastic_rows(const Eigen::MatrixXd& m, const char* field) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double sum = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double w = m(r, c);
      if (!std::isfinite(w) || w < 0) {
        throw InvariantError(cat(field, " row ", r, " has negative or non-finite entry at column ", c));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvariantError(cat(field, " row ", r, " sums to ", sum, ", expected 1"));
    }
  }
}

void check_tree(const std::vector<int>& parents) {
  const int nj = static_cast<int>(parents.size());
  int roots = 0;
  for (int j = 0; j < nj; ++j) {
    const int p = parents[j];
    if (p == -1) {
      ++roots;
    } else if (p < -1 || p >= nj) {
      throw InvariantError(cat("kinematic_tree parent of joint ", j, " out of range: ", p));
    }
  }
  // Walking up from any joint must reach a root within J steps.
  for (int j = 0; j < nj; ++j) {
    int cur = j;
    int steps = 0;
    while (cur != -1) {
      cur = parents[cur];
      if (++steps > nj) throw InvariantError("kinematic tree has cycle");
    }
  }
  if (roots != 1) throw InvariantError(cat("kinematic tree must have exactly one root, found ", roots));
  if (parents[0] != -1) throw InvariantError("kinematic tree root must be joint 0");
  for (int j = 1; j < nj; ++j) {
    if (parents[j] >= j) {
      throw InvariantError(cat("kinematic tree not topologically ordered at joint ", j));
    }
  }
}

}  // namespace

std::vector<Edge> mesh_edges(const Faces& faces) {
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k);
      const int b = faces(f, (k + 1) % 3);
      if (a == b) continue;
      edges.push_back({std::min(a, b), std::max(a, b)});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

void finalize_model(HandModel& m) {
  const int nv = m.vertex_count();
  const int nj = m.joint_count();
  if (nv < 1) throw InvariantError("template_vertices is empty");
  if (nj < 1) throw InvariantError("kinematic_tree is empty");
  if (!m.template_vertices.allFinite()) throw InvariantError("template_vertices contains non-finite values");
  for (Eigen::Index f = 0; f < m.faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (m.faces(f, k) < 0 || m.faces(f, k) >= nv) {
        throw InvariantError(cat("faces row ", f, " references vertex ", m.faces(f, k), " >= V=", nv));
      }
    }
  }
  if (m.shape_basis.rows() != 3 * nv) {
    throw InvariantError(cat("shape_basis has ", m.shape_basis.rows(), " rows, expected 3V=", 3 * nv));
  }
  if (!m.shape_basis.allFinite()) throw InvariantError("shape_basis contains non-finite values");
  if (m.skinning_weights.rows() != nv || m.skinning_weights.cols() != nj) {
    throw InvariantError("skinning_weights must be V×J");
  }
  check_stochastic_rows(m.skinning_weights, "skinning_weights");
  check_tree(m.parents);
  if (m.joint_regressor.rows() != nj || m.joint_regressor.cols() != nv) {
    throw InvariantError("joint_regressor must be J×V");
  }
  check_stochastic_rows(m.joint_regressor, "joint_regressor");
  for (std::size_t k = 0; k < m.fingertip_vertex_ids.size(); ++k) {
    const int id = m.fingertip_vertex_ids[k];
    if (id < 0 || id >= nv) throw InvariantError(cat("fingertip_vertex_ids[", k, "] = ", id, " out of range"));
  }
  const auto expected_names = static_cast<std::size_t>(m.skeleton_size());
  if (m.joint_names.empty()) {
    for (int j = 0; j < nj; ++j) m.joint_names.push_back(cat("joint", j));
    for (int k = 0; k < m.fingertip_count(); ++k) m.joint_names.push_back(cat("tip", k));
  } else if (m.joint_names.size() != expected_names) {
    throw InvariantError(cat("joint_names has ", m.joint_names.size(), " entries, expected ", expected_names));
  }
  if (m.name.empty()) m.name = cat("model", nj);
  m.edges = mesh_edges(m.faces);
}

void check_state_dims(const HandModel& model, int theta_rows, int beta_size) {
  if (theta_rows != model.joint_count() - 1) {
    throw DimensionError(cat("theta has ", theta_rows, " rows, model expects ", model.joint_count() - 1));
  }
  if (beta_size != model.shape_dim()) {
    throw DimensionError(cat("beta has ", beta_size, " entries, model expects ", model.shape_dim()));
  }
}

void wrap_pose_state(HandPoseState& s) {
  for (Eigen::Index r = 0; r < s.theta.rows(); ++r) {
    s.theta.row(r) = wrap_axis_angle(s.theta.row(r).transpose()).transpose();
  }
  s.wrist_rotation = wrap_axis_angle(s.wrist_rotation);
}

HandPoseState make_pose_state(PointsD theta, Eigen::VectorXd beta, const Eigen::Vector3d& wrist_rotation,
                              const Eigen::Vector3d& wrist_translation) {
  HandPoseState s{std::move(theta), std::move(beta), wrist_rotation, wrist_translation};
  if (!s.theta.allFinite() || !s.beta.allFinite() || !s.wrist_rotation.allFinite() ||
      !s.wrist_translation.allFinite()) {
    throw NumericError("pose state contains non-finite values");
  }
  wrap_pose_state(s);
  return s;
}

ParamLayout::ParamLayout(const HandModel& model) {
  theta_size = 3 * (model.joint_count() - 1);
  beta_offset = theta_size;
  beta_size = model.shape_dim();
  rotation_offset = beta_offset + beta_size;
  translation_offset = rotation_offset + 3;
  size = translation_offset + 3;
}

std::pair<Mesh, Skeleton> forward(const HandModel& model, const HandPoseState& state) {
  Posed<double> p = pose(model, state);
  Mesh mesh{std::move(p.vertices), model.faces, model.edges};
  Skeleton skel{std::move(p.joints), model.joint_names, model.name};
  return {std::move(mesh), std::move(skel)};
}

Mesh rest_mesh(const HandModel& model) {
  return {model.template_vertices, model.faces, model.edges};
}

Skeleton regress_rest_joints(const HandModel& model, const PointsD& shaped_vertices) {
  if (shaped_vertices.rows() != model.vertex_count()) {
    throw DimensionError(cat("expected ", model.vertex_count(), " vertices, got ", shaped_vertices.rows()));
  }
  Skeleton s;
  s.joints = model.joint_regressor * shaped_vertices;
  s.names.assign(model.joint_names.begin(), model.joint_names.begin() + model.joint_count());
  s.convention = model.name;
  return s;
}

}  // namespace handfit
