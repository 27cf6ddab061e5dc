#include "handfit/optim.hpp"

#include <cmath>
#include <string>

namespace handfit {

double dual_gradient(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  const Eigen::Index n = x.size();
  grad.resize(n);
  VectorX<DualD> xd(n);
  for (Eigen::Index i = 0; i < n; ++i) xd[i] = DualD(x[i]);
  double value = f.value(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    xd[i].eps = 1.0;
    const DualD r = f.value(xd);
    grad[i] = r.eps;
    value = r.val;
    xd[i].eps = 0.0;
  }
  return value;
}

double Objective::value_and_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
  return dual_gradient(*this, x, grad);
}

double GradientEvaluator::evaluate(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
  const double v = mode == GradientMode::ForwardDual ? dual_gradient(f, x, grad) : f.value_and_gradient(x, grad);
  if (!std::isfinite(v)) throw NumericError("objective is not finite");
  return v;
}

Eigen::VectorXd gradient(const Objective& f, const Eigen::VectorXd& x, GradientMode mode) {
  Eigen::VectorXd g;
  GradientEvaluator{mode}.evaluate(f, x, g);
  return g;
}

void check_hyper(const AdamHyper& h) {
  if (!(h.lr > 0) || !(h.epsilon > 0) || !(h.beta1 >= 0 && h.beta1 < 1) || !(h.beta2 >= 0 && h.beta2 < 1)) {
    throw InvariantError("Adam hyperparameters out of range");
  }
}

AdamState AdamState::init(Eigen::Index n, const AdamHyper& hyper) {
  check_hyper(hyper);
  return {hyper, 0, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
}

void adam_update(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw DimensionError("Adam parameter, gradient and moment lengths differ");
  }
  if (!grad.allFinite()) throw NumericError("Adam received a non-finite gradient");
  const AdamHyper& h = s.hyper;
  ++s.step;
  s.m = h.beta1 * s.m + (1 - h.beta1) * grad;
  s.v = h.beta2 * s.v + (1 - h.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(h.beta1, static_cast<double>(s.step));
  const double c2 = 1 - std::pow(h.beta2, static_cast<double>(s.step));
  params.array() -= h.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + h.epsilon);
}

std::pair<AdamState, Eigen::VectorXd> adam_step(AdamState state, Eigen::VectorXd params,
                                                const Eigen::VectorXd& grad) {
  adam_update(state, params, grad);
  return {std::move(state), std::move(params)};
}

bool relative_change_below(double previous, double current, double rel_tol) {
  return std::abs(current - previous) / std::max(previous, 1e-12) < rel_tol;
}

MinimizeResult minimize(const Objective& f, const Eigen::VectorXd& params0, const MinimizeConfig& config) {
  if (params0.size() != f.dimension()) throw DimensionError("start point has wrong dimension");
  if (!params0.allFinite()) throw NumericError("start point is not finite");
  const GradientEvaluator eval{config.mode};
  MinimizeResult out;
  out.params = params0;
  Eigen::VectorXd grad;
  double energy = eval.evaluate(f, out.params, grad);
  out.trace.push_back(f.breakdown(out.params));
  AdamState adam = AdamState::init(params0.size(), config.adam);
  for (int it = 1; it <= config.max_iters; ++it) {
    adam_update(adam, out.params, grad);
    double next;
    try {
      next = eval.evaluate(f, out.params, grad);
    } catch (const NumericError&) {
      throw NumericError("objective became non-finite at iteration " + std::to_string(it));
    }
    out.trace.push_back(f.breakdown(out.params));
    out.iterations = it;
    const bool done = relative_change_below(energy, next, config.rel_tol);
    energy = next;
    if (done) {
      out.converged = true;
      break;
    }
  }
  out.improved = out.trace.back().total <= out.trace.front().total;
  return out;
}

}  // namespace handfit
