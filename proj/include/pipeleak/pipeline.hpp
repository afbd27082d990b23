// Physical model of a single pipeline under water-hammer transients:
// coefficient derivation, leak outflow law, finite-difference right-hand
// sides (plain grid and parameter-extended), steady-state solving and
// natural frequencies.
//
// Momentum/continuity discretized in n_s sections:
//   dQ_i/dt     = (a1/dz_i)(H_i - H_{i+1}) - mu Q_i|Q_i|
//   dH_{i+1}/dt = (a2/dz_i)(Q_i - Q_{i+1} - sigma_i sqrt(H_{i+1}))
// with H_1 = H_in and either H_{n_s+1} = H_out (HeadHead) or
// Q_{n_s+1} = Q_out (HeadFlow) imposed at the downstream end.

#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace pipeleak {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Boundary pair: (H_in, H_out) in HeadHead mode, (H_in, Q_out) in HeadFlow.
using Boundary = std::array<double, 2>;

// Physical constants of the pipe. All strictly positive.
struct PipelineParams {
  double g;    // gravitational acceleration [m/s^2]
  double L;    // pipe length [m]
  double b;    // wave speed [m/s]
  double phi;  // inside diameter [m]
  double f;    // Darcy-Weisbach friction factor [-]

  double area() const;  // cross section A_r = pi phi^2 / 4 [m^2]
  void validate() const;
};

// Derived coefficients: a1 = g A_r, a2 = b^2/(g A_r), mu = f/(2 phi A_r).
// Identity a1*a2 = b^2 holds by construction.
struct Coefficients {
  double a1;  // [m^3/s^2 per m of head gradient]
  double a2;  // [m/s^2 per flow gradient]
  double mu;  // [1/m^3]
};

Coefficients derive_coefficients(const PipelineParams& params);

// One leak: orifice law Q_f = sigma sqrt(H) with sigma = sqrt(2g) A_f C_f.
struct LeakSpec {
  double z_f;    // position along the pipe, 0 < z_f < L [m]
  double sigma;  // leak coefficient, >= 0 (0 = no leak) [m^(5/2)/s]
};

enum class BoundaryMode {
  HeadHead,  // H_in and H_out imposed; state dim 2 n_s - 1
  HeadFlow,  // H_in and Q_out imposed; state dim 2 n_s
};

// sqrt(H) regularized near zero: sqrt(H) for H >= eps, H/sqrt(eps) below
// (linear, continuous at eps = 1e-6 m). Keeps ODE right-hand sides and
// Jacobians finite at vanishing head.
inline constexpr double kSqrtEps = 1e-6;
double smoothed_sqrt(double H);
double smoothed_sqrt_deriv(double H);

// Leak outflow Q_f = sigma sqrt(H), smoothed near H = 0.
// Throws std::domain_error for sigma < 0.
double leak_outflow(double sigma, double H);

// An n_s-section discretization of the pipe. States are interleaved
// [Q_1, H_2, Q_2, H_3, ...]; sigma_at_node[i] is the leak coefficient
// entering the H_{i+2} equation (0-based), i.e. at z = dz_0 + ... + dz_i.
// The last entry must be zero: leaks live at interior nodes only.
struct GridModel {
  PipelineParams params;
  Coefficients coeffs;
  int n_s = 0;
  std::vector<double> dz;             // n_s section lengths, sum = L
  std::vector<double> sigma_at_node;  // n_s entries, last one zero
  BoundaryMode mode = BoundaryMode::HeadHead;

  int state_dim() const;
  double node_position(int node) const;  // z of head node `node` (1-based, 1..n_s+1)
  void validate() const;
};

// Uniform grid dz = L/n_s with no leaks.
GridModel make_uniform_grid(const PipelineParams& params, int n_s, BoundaryMode mode);

// Grid with explicit section lengths (identification models put section
// boundaries at the assumed leak positions). sigmas may be shorter than
// dz; missing entries are zero.
GridModel make_section_grid(const PipelineParams& params, const std::vector<double>& dz,
                            const std::vector<double>& sigmas, BoundaryMode mode);

// Assign a leak to the interior head node nearest z_f. Position is
// quantized to multiples of L/n_s on a uniform grid; returns the node
// index (1-based) the leak landed on.
int place_leak(GridModel& model, const LeakSpec& leak);

// Time derivative of the grid state per the discretized equations.
// Throws std::invalid_argument on dimension mismatch.
Vec nonlinear_rhs(const GridModel& model, const Vec& x, const Boundary& u);
void nonlinear_rhs(const GridModel& model, const Vec& x, const Boundary& u, Vec& dxdt);

// Boundary flows/heads derived from a grid state.
double inlet_flow(const GridModel& model, const Vec& x);
double outlet_flow(const GridModel& model, const Vec& x, const Boundary& u);
double outlet_head(const GridModel& model, const Vec& x, const Boundary& u);

// Steady operating point: nonlinear_rhs(x_bar, u_bar) ~ 0.
struct Equilibrium {
  Vec x_bar;
  Boundary u_bar;
};

// Solve RHS(x, u_bar) = 0 by damped Newton started from the no-leak
// closed form, falling back to pseudo-time integration. Tolerance 1e-8
// on the residual max-norm. Throws std::runtime_error on non-convergence.
Equilibrium steady_state(const GridModel& model, const Boundary& u_bar);

// First resonant frequency of the water column: pi b / L for HeadHead,
// pi b / (2L) for HeadFlow.
double natural_frequency(const PipelineParams& params, BoundaryMode mode);

// Parameter-extended models for leak location. The leak position(s) and
// coefficient(s) are appended to the hydraulic state with zero dynamics:
//   single leak: x = [Q_1, H_2, Q_2, dz_1, sigma_1]           (u = H_in, H_out)
//   two leaks:   x = [Q_1, H_2, Q_2, H_3, Q_3, dz_1, sigma_1, dz_2, sigma_2]
// The last section length is L - dz_1 (resp. L - dz_1 - dz_2).
struct ExtendedModel {
  PipelineParams params;
  Coefficients coeffs;
  int n_leaks = 1;  // 1 or 2

  int state_dim() const { return n_leaks == 1 ? 5 : 9; }
  int hydraulic_dim() const { return n_leaks == 1 ? 3 : 5; }
};

ExtendedModel make_extended_model(const PipelineParams& params, int n_leaks);

// Derivatives per the extended equations; parameter states return 0.
// Throws std::domain_error when the section lengths leave (0, L).
Vec extended_rhs(const ExtendedModel& model, const Vec& x_ext, const Boundary& u);

// Analytic Jacobian d(extended_rhs)/dx at x_ext. Used by the EKF.
Mat extended_jacobian(const ExtendedModel& model, const Vec& x_ext, const Boundary& u);

// Central-difference Jacobian of extended_rhs, the cross-checking
// fallback for the analytic form.
Mat extended_jacobian_fd(const ExtendedModel& model, const Vec& x_ext, const Boundary& u);

// End flows of the extended model, y = [Q_1, Q_last].
Eigen::Vector2d extended_output(const ExtendedModel& model, const Vec& x_ext);
Mat extended_output_jacobian(const ExtendedModel& model);

}  // namespace pipeleak
