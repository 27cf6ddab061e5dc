#pragma once

#include <string>
#include <vector>

#include "handfit/hand_model.hpp"

namespace handfit {

// One frame of observed keypoints in millimetres.
struct KeypointFrame {
  double timestamp = 0;
  PointsD keypoints;           // N×3
  std::vector<bool> mask;      // true = observed
  std::string convention;

  int size() const { return static_cast<int>(keypoints.rows()); }
  int observed() const;
};

// keypoint index -> skeleton joint index
using KeypointMapping = std::vector<int>;

enum class EdgeCounting {
  Directed,    // each undirected edge counted from both endpoints
  Undirected,  // each edge counted once
};

struct EnergyWeights {
  double lambda_reg = 1e-3;
  double lambda_smooth = 1e-4;
  EdgeCounting edge_counting = EdgeCounting::Directed;
};

struct EnergyBreakdown {
  double e_key = 0;
  double e_reg = 0;
  double e_smooth = 0;
  double total = 0;
};

void check_weights(const EnergyWeights& w);
void check_frame(const KeypointFrame& frame, const KeypointMapping& mapping, int skeleton_size);

// Σ ||k_i − J_map(i)||² over observed keypoints.
template <typename T>
T e_key(const KeypointFrame& frame, const Points<T>& joints, const KeypointMapping& mapping) {
  check_frame(frame, mapping, static_cast<int>(joints.rows()));
  T sum(0);
  for (int i = 0; i < frame.size(); ++i) {
    if (!frame.mask[i]) continue;
    const int j = mapping[i];
    for (int c = 0; c < 3; ++c) {
      const T d = joints(j, c) - T(frame.keypoints(i, c));
      sum += d * d;
    }
  }
  return sum;
}

// ||β||² + ||θ||²; wrist rotation and translation are not regularized.
template <typename T>
T e_reg(const PoseState<T>& state) {
  return state.beta.squaredNorm() + state.theta.squaredNorm();
}

template <typename T>
T e_smooth(const Points<T>& vertices, const std::vector<Edge>& edges,
           EdgeCounting counting = EdgeCounting::Directed) {
  T sum(0);
  for (const auto& [a, b] : edges) sum += (vertices.row(a) - vertices.row(b)).squaredNorm();
  return counting == EdgeCounting::Directed ? T(2) * sum : sum;
}

double e_smooth(const Mesh& mesh, EdgeCounting counting = EdgeCounting::Directed);
double e_key(const KeypointFrame& frame, const Skeleton& skeleton, const KeypointMapping& mapping);

template <typename T>
T total_energy_value(const HandModel& model, const PoseState<T>& state, const KeypointFrame& frame,
                     const KeypointMapping& mapping, const EnergyWeights& weights) {
  const Posed<T> p = pose(model, state);
  T total = e_key(frame, p.joints, mapping);
  if (weights.lambda_reg != 0) total += T(weights.lambda_reg) * e_reg(state);
  if (weights.lambda_smooth != 0) {
    total += T(weights.lambda_smooth) * e_smooth(p.vertices, model.edges, weights.edge_counting);
  }
  return total;
}

EnergyBreakdown total_energy(const HandModel& model, const HandPoseState& state, const KeypointFrame& frame,
                             const KeypointMapping& mapping, const EnergyWeights& weights);

// Energy plus its gradient over the flat ParamLayout vector, by a hand-written
// reverse pass through skinning and the kinematic chain.
EnergyBreakdown total_energy_gradient(const HandModel& model, const HandPoseState& state,
                                      const KeypointFrame& frame, const KeypointMapping& mapping,
                                      const EnergyWeights& weights, Eigen::VectorXd& gradient);

}  // namespace handfit
