#include "pipeleak/ekf.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pipeleak {

void EkfTuning::validate(int state_dim, int meas_dim) const {
  if (!(alpha > 0.0)) throw std::domain_error("EkfTuning: alpha must be > 0");
  auto check = [](const Mat& M, int n, const char* name, bool strict) {
    if (M.rows() != n || M.cols() != n) {
      throw std::domain_error(std::string("EkfTuning: ") + name + " has wrong dimensions");
    }
    if ((M - M.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * (1.0 + M.norm())) {
      throw std::domain_error(std::string("EkfTuning: ") + name + " must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(M);
    const double min_eig = es.eigenvalues().minCoeff();
    if (strict ? !(min_eig > 0.0) : min_eig < -1e-12 * (1.0 + M.norm())) {
      throw std::domain_error(std::string("EkfTuning: ") + name + " must be positive " +
                              (strict ? "definite" : "semidefinite"));
    }
  };
  check(W, state_dim, "W", false);
  check(R, meas_dim, "R", true);
  check(P0, state_dim, "P0", true);
}

EkfTuning default_tuning(const ExtendedModel& model, const Vec& x0_hat) {
  const int n = model.state_dim();
  const int nh = model.hydraulic_dim();
  EkfTuning tuning;
  tuning.W = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) tuning.W(i, i) = i < nh ? 1e-8 : 1e-6;
  tuning.R = 1e-10 * Mat::Identity(2, 2);  // sigma_meas = 1e-5 m^3/s
  tuning.P0 = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double scale = std::max(std::abs(x0_hat[i]), 1.0);
    tuning.P0(i, i) = 1e-4 * scale * scale;
  }
  return tuning;
}

namespace {

void ekf_rhs_impl(const ExtendedModel& model, const EkfState& state, const Boundary& u,
                  const Eigen::Vector2d& y, const EkfTuning& tuning, bool fd_jacobian,
                  Vec& dx_hat, Mat& dP) {
  const Mat A = fd_jacobian ? extended_jacobian_fd(model, state.x_hat, u)
                            : extended_jacobian(model, state.x_hat, u);
  const Mat C = extended_output_jacobian(model);
  const Mat R_inv = tuning.R.inverse();
  const Mat K = state.P * C.transpose() * R_inv;

  dx_hat = extended_rhs(model, state.x_hat, u) + K * (y - extended_output(model, state.x_hat));

  const Mat A_shift = A + tuning.alpha * Mat::Identity(A.rows(), A.cols());
  dP = A_shift * state.P + state.P * A_shift.transpose() -
       state.P * C.transpose() * R_inv * C * state.P + tuning.W;
}

}  // namespace

void ekf_rhs(const ExtendedModel& model, const EkfState& state, const Boundary& u,
             const Eigen::Vector2d& y, const EkfTuning& tuning, Vec& dx_hat, Mat& dP) {
  ekf_rhs_impl(model, state, u, y, tuning, false, dx_hat, dP);
}

namespace {

struct Projector {
  double z_lo, z_hi, sigma_max;
  int n_leaks;

  // Clamp the parameter states back into their physical box; returns
  // whether anything moved.
  bool apply(Vec& x) const {
    bool hit = false;
    auto clamp_pair = [&](int i_dz, int i_sigma, double lo, double hi) {
      if (x[i_dz] < lo) { x[i_dz] = lo; hit = true; }
      if (x[i_dz] > hi) { x[i_dz] = hi; hit = true; }
      if (x[i_sigma] < 0.0) { x[i_sigma] = 0.0; hit = true; }
      if (x[i_sigma] > sigma_max) { x[i_sigma] = sigma_max; hit = true; }
    };
    if (n_leaks == 1) {
      clamp_pair(3, 4, z_lo, z_hi);
    } else {
      clamp_pair(5, 6, z_lo, z_hi);
      clamp_pair(7, 8, z_lo, z_hi);
      // keep the trailing section open
      if (x[5] + x[7] > z_hi) { x[7] = z_hi - x[5]; hit = true; }
    }
    return hit;
  }
};

}  // namespace

EstimateTrajectory run_ekf(const ExtendedModel& model, const TimeSeries& data, const Vec& x0_hat,
                           const EkfTuning& tuning, const EkfOptions& opts) {
  const int n = model.state_dim();
  if (x0_hat.size() != n) throw std::invalid_argument("run_ekf: bad initial estimate dimension");
  tuning.validate(n, 2);
  data.validate();

  const bool single = model.n_leaks == 1;
  const int iu0 = data.channel_index("H_in");
  const int iu1 = data.channel_index("H_out");
  const int iy0 = data.channel_index("Q_in");
  const int iy1 = data.channel_index("Q_out");

  const double L = model.params.L;
  const Projector proj{opts.z_margin * L, (1.0 - opts.z_margin) * L, opts.sigma_max,
                       model.n_leaks};

  EkfState state{x0_hat, tuning.P0, 0.0};
  proj.apply(state.x_hat);

  const long n_samples = data.rows();
  const int n_params = single ? 2 : 4;
  EstimateTrajectory out;
  out.estimates.dt = data.dt;
  out.estimates.t0 = data.t0;
  out.estimates.labels = single ? std::vector<std::string>{"z_f1", "sigma_1"}
                                : std::vector<std::string>{"z_f1", "sigma_1", "z_f2", "sigma_2"};
  out.estimates.samples.resize(n_samples, n_params);
  out.innovations.dt = data.dt;
  out.innovations.t0 = data.t0;
  out.innovations.labels = {"e_Q_in", "e_Q_out"};
  out.innovations.samples.resize(n_samples, 2);

  auto record = [&](long i) {
    if (single) {
      out.estimates.samples(i, 0) = state.x_hat[3];
      out.estimates.samples(i, 1) = state.x_hat[4];
    } else {
      out.estimates.samples(i, 0) = state.x_hat[5];
      out.estimates.samples(i, 1) = state.x_hat[6];
      out.estimates.samples(i, 2) = state.x_hat[5] + state.x_hat[7];
      out.estimates.samples(i, 3) = state.x_hat[8];
    }
    const Eigen::Vector2d y(data.samples(i, iy0), data.samples(i, iy1));
    out.innovations.samples.row(i) =
        (y - extended_output(model, state.x_hat)).transpose();
  };

  long projected_steps = 0;
  Vec dx(n), k1x(n), k2x(n), k3x(n), k4x(n), x_stage(n);
  Mat dP(n, n), k1P(n, n), k2P(n, n), k3P(n, n), k4P(n, n), P_stage(n, n);

  record(0);
  const double h = data.dt / opts.substeps;
  for (long i = 0; i + 1 < n_samples; ++i) {
    // Linear interpolation of u and y across the sample interval.
    auto u_at = [&](double frac) -> Boundary {
      const double w = frac;
      return {(1.0 - w) * data.samples(i, iu0) + w * data.samples(i + 1, iu0),
              (1.0 - w) * data.samples(i, iu1) + w * data.samples(i + 1, iu1)};
    };
    auto y_at = [&](double frac) -> Eigen::Vector2d {
      const double w = frac;
      return {(1.0 - w) * data.samples(i, iy0) + w * data.samples(i + 1, iy0),
              (1.0 - w) * data.samples(i, iy1) + w * data.samples(i + 1, iy1)};
    };

    for (int s = 0; s < opts.substeps; ++s) {
      const double f0 = static_cast<double>(s) / opts.substeps;
      const double f_half = (s + 0.5) / opts.substeps;
      const double f1 = static_cast<double>(s + 1) / opts.substeps;

      const bool fd = opts.finite_difference_jacobian;
      EkfState stage = state;
      ekf_rhs_impl(model, stage, u_at(f0), y_at(f0), tuning, fd, k1x, k1P);
      stage.x_hat = state.x_hat + 0.5 * h * k1x;
      stage.P = state.P + 0.5 * h * k1P;
      proj.apply(stage.x_hat);
      ekf_rhs_impl(model, stage, u_at(f_half), y_at(f_half), tuning, fd, k2x, k2P);
      stage.x_hat = state.x_hat + 0.5 * h * k2x;
      stage.P = state.P + 0.5 * h * k2P;
      proj.apply(stage.x_hat);
      ekf_rhs_impl(model, stage, u_at(f_half), y_at(f_half), tuning, fd, k3x, k3P);
      stage.x_hat = state.x_hat + h * k3x;
      stage.P = state.P + h * k3P;
      proj.apply(stage.x_hat);
      ekf_rhs_impl(model, stage, u_at(f1), y_at(f1), tuning, fd, k4x, k4P);

      state.x_hat += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      state.P += h / 6.0 * (k1P + 2.0 * k2P + 2.0 * k3P + k4P);
      state.P = 0.5 * (state.P + state.P.transpose()).eval();
      state.t += h;

      if (proj.apply(state.x_hat)) ++projected_steps;

      if (!state.x_hat.allFinite() || !state.P.allFinite()) {
        std::ostringstream msg;
        msg << "run_ekf: filter diverged at t = " << state.t;
        throw std::runtime_error(msg.str());
      }
    }
    // Positive definiteness guard once per sample.
    Eigen::LDLT<Mat> ldlt(state.P);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
      std::ostringstream msg;
      msg << "run_ekf: covariance lost positive definiteness at t = " << state.t;
      throw std::runtime_error(msg.str());
    }
    record(i + 1);
  }

  const long total_steps = (n_samples - 1) * opts.substeps;
  out.projected_fraction =
      total_steps > 0 ? static_cast<double>(projected_steps) / total_steps : 0.0;
  out.non_convergence_warning = out.projected_fraction > 0.1;

  const long tail = std::max<long>(1, static_cast<long>(opts.tail_fraction * n_samples));
  out.final_estimate = out.estimates.samples.bottomRows(tail).colwise().mean().transpose();
  return out;
}

}  // namespace pipeleak
