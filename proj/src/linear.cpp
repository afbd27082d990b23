#include "pipeleak/linear.hpp"

#include <cmath>
#include <stdexcept>

namespace pipeleak {

void LinearStateSpace::validate() const {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() ||
      D.cols() != B.cols()) {
    throw std::domain_error("LinearStateSpace: inconsistent dimensions");
  }
}

LinearStateSpace linearize_full(const GridModel& model, const Equilibrium& eq) {
  model.validate();
  const int dim = model.state_dim();
  if (eq.x_bar.size() != dim) {
    throw std::invalid_argument("linearize_full: equilibrium dimension mismatch");
  }
  const double a1 = model.coeffs.a1;
  const double a2 = model.coeffs.a2;
  const double mu = model.coeffs.mu;
  const int n_s = model.n_s;
  const bool head_head = model.mode == BoundaryMode::HeadHead;

  LinearStateSpace ss;
  ss.A = Mat::Zero(dim, dim);
  ss.B = Mat::Zero(dim, 2);

  for (int i = 1; i <= n_s; ++i) {
    const int row = 2 * (i - 1);
    ss.A(row, row) = -2.0 * mu * std::abs(eq.x_bar[row]);
    if (i >= 2) ss.A(row, 2 * i - 3) = a1 / model.dz[i - 1];
    if (!(i == n_s && head_head)) ss.A(row, 2 * i - 1) = -a1 / model.dz[i - 1];
  }
  const int last_head_eq = head_head ? n_s - 1 : n_s;
  for (int i = 1; i <= last_head_eq; ++i) {
    const int row = 2 * i - 1;
    ss.A(row, 2 * (i - 1)) = a2 / model.dz[i - 1];
    if (i < n_s) ss.A(row, 2 * i) = -a2 / model.dz[i - 1];
    const double sigma = model.sigma_at_node[i - 1];
    if (sigma > 0.0) {
      const double H = eq.x_bar[row];
      if (!(H > 0.0)) {
        throw std::domain_error("linearize_full: zero head at a leaking node");
      }
      ss.A(row, row) = -a2 * sigma / model.dz[i - 1] * smoothed_sqrt_deriv(H);
    }
  }

  // Input mapping: H_in always drives the first flow equation; the second
  // boundary drives the last flow (HeadHead) or last head (HeadFlow) row.
  ss.B(0, 0) = a1 / model.dz[0];
  if (head_head) {
    ss.B(2 * (n_s - 1), 1) = -a1 / model.dz[n_s - 1];
  } else {
    ss.B(2 * n_s - 1, 1) = -a2 / model.dz[n_s - 1];
  }

  ss.C = Mat::Zero(2, dim);
  ss.C(0, 0) = 1.0;
  ss.C(1, dim - 1) = 1.0;  // Q_{n_s} (HeadHead) or H_{n_s+1} (HeadFlow)
  ss.D = Mat::Zero(2, 2);

  ss.input_names = {"H_in", head_head ? "H_out" : "Q_out"};
  ss.output_names = {"Q_in", head_head ? "Q_out" : "H_out"};
  ss.state_names.resize(dim);
  for (int k = 0; k < dim; ++k) {
    ss.state_names[k] =
        (k % 2 == 0) ? "Q_" + std::to_string(k / 2 + 1) : "H_" + std::to_string((k + 3) / 2);
  }
  return ss;
}

void ThetaSingle::validate(double L) const {
  if (!(theta1 > 1.0 / L)) {
    throw std::domain_error("ThetaSingle: theta1 must exceed 1/L (dz_1 < L)");
  }
  if (theta2 < 0.0) throw std::domain_error("ThetaSingle: theta2 must be >= 0");
}

void ThetaDouble::validate(double L) const {
  if (!(theta1 > 0.0) || !(theta3 > 0.0) || !(1.0 / theta1 + 1.0 / theta3 < L)) {
    throw std::domain_error("ThetaDouble: sections 1/theta1 + 1/theta3 must fit inside L");
  }
  if (theta2 < 0.0 || theta5 < 0.0) {
    throw std::domain_error("ThetaDouble: leak terms must be >= 0");
  }
  if (!(theta4 > 0.0)) throw std::domain_error("ThetaDouble: theta4 must be > 0");
}

LinearStateSpace build_single_leak(const ThetaSingle& theta,
                                   const std::array<double, 2>& eq_flows,
                                   const PipelineParams& params) {
  theta.validate(params.L);
  const Coefficients c = derive_coefficients(params);
  const double gamma = params.L - 1.0 / theta.theta1;
  if (!(gamma > 0.0)) throw std::domain_error("build_single_leak: second section collapsed");

  LinearStateSpace ss;
  ss.A = Mat::Zero(3, 3);
  ss.A(0, 0) = -2.0 * c.mu * eq_flows[0];
  ss.A(0, 1) = -c.a1 * theta.theta1;
  ss.A(1, 0) = c.a2 * theta.theta1;
  ss.A(1, 1) = -0.5 * c.a2 * theta.theta1 * theta.theta2;
  ss.A(1, 2) = -c.a2 * theta.theta1;
  ss.A(2, 1) = c.a1 / gamma;
  ss.A(2, 2) = -2.0 * c.mu * eq_flows[1];

  ss.B = Mat::Zero(3, 2);
  ss.B(0, 0) = c.a1 * theta.theta1;
  ss.B(2, 1) = -c.a1 / gamma;

  ss.C = Mat::Zero(2, 3);
  ss.C(0, 0) = 1.0;
  ss.C(1, 2) = 1.0;
  ss.D = Mat::Zero(2, 2);

  ss.state_names = {"Q_1", "H_2", "Q_2"};
  ss.input_names = {"H_in", "H_out"};
  ss.output_names = {"Q_in", "Q_out"};
  return ss;
}

LinearStateSpace build_two_leak(const ThetaDouble& theta,
                                const std::array<double, 2>& eq_flows,
                                const PipelineParams& params) {
  theta.validate(params.L);
  const Coefficients c = derive_coefficients(params);
  const double alpha = params.L - 1.0 / theta.theta1 - 1.0 / theta.theta3;
  if (!(alpha > 0.0)) throw std::domain_error("build_two_leak: third section collapsed");

  LinearStateSpace ss;
  ss.A = Mat::Zero(6, 6);
  ss.A(0, 0) = -2.0 * c.mu * eq_flows[0];
  ss.A(0, 1) = -c.a1 * theta.theta1;
  ss.A(1, 0) = c.a2 * theta.theta1;
  ss.A(1, 1) = -0.5 * c.a2 * theta.theta1 * theta.theta2;
  ss.A(1, 2) = -c.a2 * theta.theta1;
  ss.A(2, 1) = c.a1 * theta.theta3;
  ss.A(2, 2) = -2.0 * c.mu * theta.theta4;
  ss.A(2, 3) = -c.a1 * theta.theta3;
  ss.A(3, 2) = c.a2 * theta.theta3;
  ss.A(3, 3) = -0.5 * c.a2 * theta.theta3 * theta.theta5;
  ss.A(3, 4) = -c.a2 * theta.theta3;
  ss.A(4, 3) = c.a1 / alpha;
  ss.A(4, 4) = -2.0 * c.mu * eq_flows[1];
  ss.A(4, 5) = -c.a1 / alpha;
  ss.A(5, 4) = c.a2 / alpha;

  ss.B = Mat::Zero(6, 2);
  ss.B(0, 0) = c.a1 * theta.theta1;
  ss.B(5, 1) = -c.a2 / alpha;

  ss.C = Mat::Zero(2, 6);
  ss.C(0, 0) = 1.0;
  ss.C(1, 5) = 1.0;
  ss.D = Mat::Zero(2, 2);

  ss.state_names = {"Q_1", "H_2", "Q_2", "H_3", "Q_3", "H_4"};
  ss.input_names = {"H_in", "Q_out"};
  ss.output_names = {"Q_in", "H_out"};
  return ss;
}

std::vector<LeakEstimate> positions_from_theta(const ThetaSingle& theta, double H_bar) {
  return {{1.0 / theta.theta1, theta.theta2, theta.theta2 * std::sqrt(H_bar)}};
}

std::vector<LeakEstimate> positions_from_theta(const ThetaDouble& theta, double H_bar_1,
                                               double H_bar_2) {
  const double z1 = 1.0 / theta.theta1;
  return {{z1, theta.theta2, theta.theta2 * std::sqrt(H_bar_1)},
          {z1 + 1.0 / theta.theta3, theta.theta5, theta.theta5 * std::sqrt(H_bar_2)}};
}

}  // namespace pipeleak
