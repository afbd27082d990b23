// Off-line prediction error method: fit the parametric single- or
// two-leak linear models to recorded boundary data by minimizing
// V_N(theta) = integral of ||e(t, theta)||^2 over the horizon, where the
// prediction error comes from the innovation predictor
//   dx_hat/dt = [A(theta) - K C(theta)] x_hat + B(theta) u + K y,
//   e = y - C(theta) x_hat - D(theta) u,   x_hat(0) = 0,
// in deviation variables around the pre-excitation operating point.
// Default K = 0 (output-error variant).

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pipeleak/linear.hpp"
#include "pipeleak/timeseries.hpp"

namespace pipeleak {

enum class LeakModelOrder { single, two };

enum class PemExit { converged, max_iter, bound_hit };

struct PemProblem {
  TimeSeries data;
  LeakModelOrder order = LeakModelOrder::single;
  PipelineParams params{};
  // Steady section flows feeding the friction diagonals; by convention
  // the baseline means of (Q_in, Q_out).
  std::array<double, 2> eq_flows{0.0, 0.0};
  Vec theta0;
  Vec lower, upper;   // per-parameter box
  Vec scale;          // internal optimizer units; defaults to |theta0| floors
  Mat K;              // predictor gain, empty = output error (K = 0)
  double baseline_T = 0.0;  // mean-removal window from the series start; 0 = first sample
  int max_iter = 500;

  int n_theta() const { return order == LeakModelOrder::single ? 2 : 5; }
  void validate() const;
};

// Bounds encoding geometric feasibility: positions inside the pipe,
// opaque leak terms in [0, 1e-2], middle flow in [0, 1].
void default_bounds(const PemProblem& problem, Vec& lower, Vec& upper);

// Candidate model at theta. Throws std::domain_error (infeasible theta)
// when the trailing section collapses.
LinearStateSpace build_model(const PemProblem& problem, const Vec& theta);

// Prediction error per output channel over the data horizon, simulated
// with the fixed-step RK4 predictor at the data's dt.
TimeSeries prediction_error(const Vec& theta, const PemProblem& problem);

// Trapezoidal quadrature of ||e||^2. Propagates infeasible theta.
double cost(const Vec& theta, const PemProblem& problem);

struct PemResult {
  Vec theta_hat;
  double V = 0.0;
  std::vector<double> cost_trajectory;  // accepted iterates, non-increasing
  double grad_norm = 0.0;               // projected gradient at exit
  PemExit exit_reason = PemExit::converged;
  int start_index = 0;
  int n_cost_evals = 0;
};

// Box-constrained quasi-Newton (BFGS with projected backtracking line
// search) using central finite-difference gradients with steps
// 1e-6 max(|x_j|, scale_j). Objectives may signal infeasibility by
// throwing std::domain_error (treated as +inf). Terminates on relative
// cost decrease < 1e-10 over 3 iterations, projected-gradient norm
// < 1e-8 (1 + V), or max_iter.
struct BoxMinOptions {
  int max_iter = 500;
  double cost_tol = 1e-10;
  double grad_tol = 1e-8;
};

PemResult minimize_box(const std::function<double(const Vec&)>& objective, const Vec& x0,
                       const Vec& lower, const Vec& upper, const Vec& scale,
                       const BoxMinOptions& opts = {});

// Central finite-difference gradient with the optimizer's stepping rule.
Vec fd_gradient(const std::function<double(const Vec&)>& objective, const Vec& x,
                const Vec& scale);

// Minimize V_N from problem.theta0.
PemResult minimize(const PemProblem& problem);

struct LocateResult {
  PemResult best;
  std::vector<LeakEstimate> leaks;
  int feasible_starts = 0;
};

// Multi-start localization: minimize from theta0 plus (count - 1)
// log-uniform perturbed starts, evaluated concurrently, merged by
// (cost, start index). Throws std::runtime_error when every start is
// infeasible.
LocateResult locate(const PemProblem& problem, int multistart, uint64_t seed);

// Gauss-Newton normal matrix J^T J of the prediction error at theta,
// with J taken w.r.t. the scaled parameters. Its conditioning measures
// identifiability of the excitation in `problem.data`.
Mat gauss_newton_normal(const Vec& theta, const PemProblem& problem);

// sigma_max / sigma_min, capped at 1e18 (returned for a numerically
// zero matrix, i.e. no identifiability at all).
double condition_number(const Mat& M);

}  // namespace pipeleak
