#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "handfit/common.hpp"
#include "handfit/dual.hpp"
#include "handfit/energy.hpp"

namespace handfit {

using DualD = Dual<double>;

enum class GradientMode {
  AnalyticAdjoint,  // objective's own hand-written gradient
  ForwardDual,      // one dual-number sweep per parameter
};

// Scalar objective with two independent derivative routes.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual int dimension() const = 0;
  virtual double value(const Eigen::VectorXd& x) const = 0;
  virtual DualD value(const VectorX<DualD>& x) const = 0;
  // Defaults to the dual route when no adjoint is available.
  virtual double value_and_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;
  virtual EnergyBreakdown breakdown(const Eigen::VectorXd& x) const {
    const double v = value(x);
    return {v, 0, 0, v};
  }
};

// Wraps a generic lambda callable on both double and dual vectors, with an
// optional analytic gradient.
template <typename F>
class FunctionObjective : public Objective {
 public:
  using GradFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

  FunctionObjective(int dim, F f, GradFn grad = {}) : dim_(dim), f_(std::move(f)), grad_(std::move(grad)) {}

  int dimension() const override { return dim_; }
  double value(const Eigen::VectorXd& x) const override { return f_(x); }
  DualD value(const VectorX<DualD>& x) const override { return f_(x); }
  double value_and_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& g) const override {
    if (grad_) return grad_(x, g);
    return Objective::value_and_gradient(x, g);
  }

 private:
  int dim_;
  F f_;
  GradFn grad_;
};

template <typename F>
FunctionObjective<F> make_objective(int dim, F f, typename FunctionObjective<F>::GradFn grad = {}) {
  return FunctionObjective<F>(dim, std::move(f), std::move(grad));
}

struct GradientEvaluator {
  GradientMode mode = GradientMode::AnalyticAdjoint;

  // Returns the objective value; throws NumericError if it is not finite.
  double evaluate(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;
};

Eigen::VectorXd gradient(const Objective& f, const Eigen::VectorXd& x,
                         GradientMode mode = GradientMode::AnalyticAdjoint);

double dual_gradient(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& grad);

struct AdamHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void check_hyper(const AdamHyper& h);

struct AdamState {
  AdamHyper hyper;
  long step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  static AdamState init(Eigen::Index n, const AdamHyper& hyper = {});
};

// Bias-corrected Adam step, in place.
void adam_update(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad);

std::pair<AdamState, Eigen::VectorXd> adam_step(AdamState state, Eigen::VectorXd params,
                                                const Eigen::VectorXd& grad);

struct MinimizeConfig {
  int max_iters = 500;
  double rel_tol = 1e-7;
  AdamHyper adam;
  GradientMode mode = GradientMode::AnalyticAdjoint;
};

struct MinimizeResult {
  Eigen::VectorXd params;
  std::vector<EnergyBreakdown> trace;  // trace[0] is the starting point
  int iterations = 0;
  bool converged = false;   // rel_tol met before the budget ran out
  bool improved = true;     // final energy <= initial energy
};

// |E_t − E_{t−1}| / max(E_{t−1}, 1e-12)
bool relative_change_below(double previous, double current, double rel_tol);

MinimizeResult minimize(const Objective& f, const Eigen::VectorXd& params0, const MinimizeConfig& config);

}  // namespace handfit
