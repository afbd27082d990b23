// Linearized state-space models of the pipeline: the full grid
// linearization around an equilibrium, and the parametric single-leak
// (3-state) and two-leak (6-state) identification models.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pipeleak/pipeline.hpp"

namespace pipeleak {

struct LinearStateSpace {
  Mat A, B, C, D;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;

  int order() const { return static_cast<int>(A.rows()); }
  void validate() const;  // dimension consistency
};

// Jacobian linearization of the grid dynamics at an equilibrium.
// Friction rows get -2 mu |Q_bar|, leaking head rows
// -a2 sigma/(2 dz sqrt(H_bar)). Inputs are the boundary pair, outputs
// [Q_in, Q_out] (HeadHead) or [Q_in, H_out] (HeadFlow).
// Throws std::domain_error when a leaking node sits at zero head.
LinearStateSpace linearize_full(const GridModel& model, const Equilibrium& eq);

// Single-leak parameterization: theta1 = 1/dz_1, theta2 = sigma_1/sqrt(H_bar_2).
struct ThetaSingle {
  double theta1;
  double theta2;

  void validate(double L) const;
};

// Two-leak parameterization: theta1 = 1/dz_1, theta2 = sigma_1/sqrt(H_bar_2),
// theta3 = 1/dz_2, theta4 = Q_bar_2 (middle-section flow), theta5 = sigma_2/sqrt(H_bar_3).
struct ThetaDouble {
  double theta1;
  double theta2;
  double theta3;
  double theta4;
  double theta5;

  void validate(double L) const;
};

// 3-state model, inputs [H_in, H_out], outputs [Q_in, Q_out] = states 1, 3.
// eq_flows are the steady section flows (Q_bar_1, Q_bar_2) supplying the
// friction diagonals. Throws std::domain_error when L - 1/theta1 <= 0.
LinearStateSpace build_single_leak(const ThetaSingle& theta,
                                   const std::array<double, 2>& eq_flows,
                                   const PipelineParams& params);

// 6-state model, inputs [H_in, Q_out], outputs [Q_in, H_out] = states 1, 6.
// eq_flows are (Q_bar_1, Q_bar_3); the middle-section flow is theta4.
// Throws std::domain_error when L - 1/theta1 - 1/theta3 <= 0.
LinearStateSpace build_two_leak(const ThetaDouble& theta,
                                const std::array<double, 2>& eq_flows,
                                const PipelineParams& params);

// One located leak: position plus the loss-of-flow coefficient in both
// conventions (theta-form sigma/sqrt(H_bar), and sigma itself when the
// operating head is supplied).
struct LeakEstimate {
  double z;            // position from 1/theta [m]
  double theta_sigma;  // sigma / sqrt(H_bar), as estimated
  double sigma;        // theta_sigma * sqrt(H_bar); NaN when H_bar unknown
};

std::vector<LeakEstimate> positions_from_theta(const ThetaSingle& theta,
                                               double H_bar = std::nan(""));
std::vector<LeakEstimate> positions_from_theta(const ThetaDouble& theta,
                                               double H_bar_1 = std::nan(""),
                                               double H_bar_2 = std::nan(""));

}  // namespace pipeleak
