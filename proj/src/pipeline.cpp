#include "pipeleak/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pipeleak {

namespace {

// Head node index helpers for the interleaved state [Q_1, H_2, Q_2, ...]:
// Q_i sits at 2(i-1), H_{i+1} at 2i-1 (both 0-based, i 1-based).
inline int q_index(int i) { return 2 * (i - 1); }
inline int h_index(int i) { return 2 * i - 1; }  // index of H_{i+1}

}  // namespace

double PipelineParams::area() const { return std::numbers::pi * phi * phi / 4.0; }

void PipelineParams::validate() const {
  if (!(g > 0.0) || !(L > 0.0) || !(b > 0.0) || !(phi > 0.0) || !(f > 0.0)) {
    throw std::domain_error("PipelineParams: all fields must be strictly positive");
  }
}

Coefficients derive_coefficients(const PipelineParams& params) {
  params.validate();
  const double area = params.area();
  return Coefficients{
      params.g * area,
      params.b * params.b / (params.g * area),
      params.f / (2.0 * params.phi * area),
  };
}

double smoothed_sqrt(double H) {
  if (H >= kSqrtEps) return std::sqrt(H);
  return H / std::sqrt(kSqrtEps);
}

double smoothed_sqrt_deriv(double H) {
  if (H >= kSqrtEps) return 0.5 / std::sqrt(H);
  return 1.0 / std::sqrt(kSqrtEps);
}

double leak_outflow(double sigma, double H) {
  if (sigma < 0.0) throw std::domain_error("leak_outflow: sigma must be >= 0");
  return sigma * smoothed_sqrt(H);
}

int GridModel::state_dim() const {
  return mode == BoundaryMode::HeadFlow ? 2 * n_s : 2 * n_s - 1;
}

double GridModel::node_position(int node) const {
  double z = 0.0;
  for (int i = 0; i < node - 1; ++i) z += dz[i];
  return z;
}

void GridModel::validate() const {
  params.validate();
  if (n_s < 1) throw std::domain_error("GridModel: n_s must be >= 1");
  if (static_cast<int>(dz.size()) != n_s || static_cast<int>(sigma_at_node.size()) != n_s) {
    throw std::domain_error("GridModel: dz and sigma_at_node must have n_s entries");
  }
  double total = 0.0;
  for (double d : dz) {
    if (!(d > 0.0)) throw std::domain_error("GridModel: section lengths must be positive");
    total += d;
  }
  if (std::abs(total - params.L) > 1e-9 * params.L) {
    throw std::domain_error("GridModel: section lengths must sum to L");
  }
  for (double s : sigma_at_node) {
    if (s < 0.0) throw std::domain_error("GridModel: leak coefficients must be >= 0");
  }
  if (sigma_at_node[n_s - 1] != 0.0) {
    throw std::domain_error("GridModel: leaks are allowed at interior nodes only");
  }
}

GridModel make_uniform_grid(const PipelineParams& params, int n_s, BoundaryMode mode) {
  GridModel model;
  model.params = params;
  model.coeffs = derive_coefficients(params);
  model.n_s = n_s;
  model.dz.assign(n_s, params.L / n_s);
  model.sigma_at_node.assign(n_s, 0.0);
  model.mode = mode;
  model.validate();
  return model;
}

GridModel make_section_grid(const PipelineParams& params, const std::vector<double>& dz,
                            const std::vector<double>& sigmas, BoundaryMode mode) {
  GridModel model;
  model.params = params;
  model.coeffs = derive_coefficients(params);
  model.n_s = static_cast<int>(dz.size());
  model.dz = dz;
  model.sigma_at_node = sigmas;
  model.sigma_at_node.resize(dz.size(), 0.0);
  model.mode = mode;
  model.validate();
  return model;
}

int place_leak(GridModel& model, const LeakSpec& leak) {
  if (leak.sigma < 0.0) throw std::domain_error("place_leak: sigma must be >= 0");
  if (!(leak.z_f > 0.0) || !(leak.z_f < model.params.L)) {
    throw std::domain_error("place_leak: position must lie strictly inside the pipe");
  }
  if (model.n_s < 2) throw std::domain_error("place_leak: grid has no interior nodes");
  // Nearest interior head node (2 .. n_s); ties round down.
  int best = 2;
  double best_dist = std::abs(model.node_position(2) - leak.z_f);
  for (int node = 3; node <= model.n_s; ++node) {
    const double dist = std::abs(model.node_position(node) - leak.z_f);
    if (dist < best_dist) {
      best = node;
      best_dist = dist;
    }
  }
  model.sigma_at_node[best - 2] += leak.sigma;
  return best;
}

void nonlinear_rhs(const GridModel& model, const Vec& x, const Boundary& u, Vec& dxdt) {
  const int dim = model.state_dim();
  if (x.size() != dim) {
    std::ostringstream msg;
    msg << "nonlinear_rhs: state has " << x.size() << " entries, model expects " << dim;
    throw std::invalid_argument(msg.str());
  }
  dxdt.resize(dim);

  const double a1 = model.coeffs.a1;
  const double a2 = model.coeffs.a2;
  const double mu = model.coeffs.mu;
  const int n_s = model.n_s;
  const bool head_head = model.mode == BoundaryMode::HeadHead;

  // Flow equations, i = 1..n_s.
  for (int i = 1; i <= n_s; ++i) {
    const double H_up = (i == 1) ? u[0] : x[h_index(i - 1)];
    const double H_dn = (i == n_s && head_head) ? u[1] : x[h_index(i)];
    const double Q = x[q_index(i)];
    dxdt[q_index(i)] = a1 / model.dz[i - 1] * (H_up - H_dn) - mu * Q * std::abs(Q);
  }

  // Head equations, i = 1..n_s-1 (HeadHead) or 1..n_s (HeadFlow).
  const int last_head_eq = head_head ? n_s - 1 : n_s;
  for (int i = 1; i <= last_head_eq; ++i) {
    const double Q_up = x[q_index(i)];
    const double Q_dn = (i == n_s) ? u[1] : x[q_index(i + 1)];
    const double H = x[h_index(i)];
    const double sigma = model.sigma_at_node[i - 1];
    dxdt[h_index(i)] = a2 / model.dz[i - 1] * (Q_up - Q_dn - sigma * smoothed_sqrt(H));
  }
}

Vec nonlinear_rhs(const GridModel& model, const Vec& x, const Boundary& u) {
  Vec dxdt;
  nonlinear_rhs(model, x, u, dxdt);
  return dxdt;
}

double inlet_flow(const GridModel&, const Vec& x) { return x[0]; }

double outlet_flow(const GridModel& model, const Vec& x, const Boundary& u) {
  if (model.mode == BoundaryMode::HeadFlow) return u[1];
  return x[q_index(model.n_s)];
}

double outlet_head(const GridModel& model, const Vec& x, const Boundary& u) {
  if (model.mode == BoundaryMode::HeadHead) return u[1];
  return x[h_index(model.n_s)];
}

namespace {

// No-leak closed form used to seed Newton. HeadHead: uniform flow with
// mu Q|Q| = a1 (H_in - H_out)/L; heads interpolated along the friction
// gradient. HeadFlow: Q = Q_out everywhere, heads marched from H_in.
Vec steady_initial_guess(const GridModel& model, const Boundary& u) {
  const double a1 = model.coeffs.a1;
  const double mu = model.coeffs.mu;
  Vec x = Vec::Zero(model.state_dim());

  double Q0;
  if (model.mode == BoundaryMode::HeadHead) {
    const double drop = u[0] - u[1];
    Q0 = (drop >= 0.0 ? 1.0 : -1.0) * std::sqrt(a1 * std::abs(drop) / (mu * model.params.L));
  } else {
    Q0 = u[1];
  }

  double H = u[0];
  for (int i = 1; i <= model.n_s; ++i) {
    x[q_index(i)] = Q0;
    H -= mu * Q0 * std::abs(Q0) / a1 * model.dz[i - 1];
    if (h_index(i) < model.state_dim()) x[h_index(i)] = std::max(H, kSqrtEps);
  }
  return x;
}

// Jacobian of nonlinear_rhs wrt the state (same stencil the linearized
// model uses, with the smoothed sqrt slope).
Mat rhs_jacobian(const GridModel& model, const Vec& x) {
  const double a1 = model.coeffs.a1;
  const double a2 = model.coeffs.a2;
  const double mu = model.coeffs.mu;
  const int n_s = model.n_s;
  const int dim = model.state_dim();
  const bool head_head = model.mode == BoundaryMode::HeadHead;
  Mat J = Mat::Zero(dim, dim);

  for (int i = 1; i <= n_s; ++i) {
    const int row = q_index(i);
    J(row, row) = -2.0 * mu * std::abs(x[row]);
    if (i >= 2) J(row, h_index(i - 1)) = a1 / model.dz[i - 1];
    if (!(i == n_s && head_head)) J(row, h_index(i)) = -a1 / model.dz[i - 1];
  }
  const int last_head_eq = head_head ? n_s - 1 : n_s;
  for (int i = 1; i <= last_head_eq; ++i) {
    const int row = h_index(i);
    J(row, q_index(i)) = a2 / model.dz[i - 1];
    if (i < n_s) J(row, q_index(i + 1)) = -a2 / model.dz[i - 1];
    const double sigma = model.sigma_at_node[i - 1];
    if (sigma > 0.0) J(row, row) = -a2 / model.dz[i - 1] * sigma * smoothed_sqrt_deriv(x[row]);
  }
  return J;
}

}  // namespace

Equilibrium steady_state(const GridModel& model, const Boundary& u_bar) {
  model.validate();
  const double tol = 1e-8;

  Vec x = steady_initial_guess(model, u_bar);
  Vec r = nonlinear_rhs(model, x, u_bar);

  // Damped Newton on RHS(x) = 0.
  bool converged = false;
  for (int iter = 0; iter < 100 && !converged; ++iter) {
    if (r.lpNorm<Eigen::Infinity>() < tol) {
      converged = true;
      break;
    }
    const Mat J = rhs_jacobian(model, x);
    const Vec step = J.fullPivLu().solve(-r);
    double lambda = 1.0;
    const double r0 = r.norm();
    while (lambda > 1e-6) {
      Vec x_try = x + lambda * step;
      Vec r_try = nonlinear_rhs(model, x_try, u_bar);
      if (r_try.norm() < r0) {
        x = std::move(x_try);
        r = std::move(r_try);
        break;
      }
      lambda *= 0.5;
    }
    if (lambda <= 1e-6) break;  // Newton stalled; fall back below
  }
  if (!converged && nonlinear_rhs(model, x, u_bar).lpNorm<Eigen::Infinity>() < tol) {
    converged = true;
  }

  if (!converged) {
    // Pseudo-time fallback: integrate the dynamics until transients decay.
    const double h = 0.1 * *std::min_element(model.dz.begin(), model.dz.end()) / model.params.b;
    x = steady_initial_guess(model, u_bar);
    Vec k1, k2, k3, k4;
    const long max_steps = static_cast<long>(2000.0 * model.params.L / model.params.b / h);
    for (long step = 0; step < max_steps; ++step) {
      nonlinear_rhs(model, x, u_bar, k1);
      nonlinear_rhs(model, Vec(x + 0.5 * h * k1), u_bar, k2);
      nonlinear_rhs(model, Vec(x + 0.5 * h * k2), u_bar, k3);
      nonlinear_rhs(model, Vec(x + h * k3), u_bar, k4);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (step % 256 == 0 && nonlinear_rhs(model, x, u_bar).lpNorm<Eigen::Infinity>() < tol) {
        converged = true;
        break;
      }
    }
    converged = converged || nonlinear_rhs(model, x, u_bar).lpNorm<Eigen::Infinity>() < tol;
  }

  if (!converged) {
    std::ostringstream msg;
    msg << "steady_state: no convergence, residual "
        << nonlinear_rhs(model, x, u_bar).lpNorm<Eigen::Infinity>();
    throw std::runtime_error(msg.str());
  }
  return Equilibrium{std::move(x), u_bar};
}

double natural_frequency(const PipelineParams& params, BoundaryMode mode) {
  params.validate();
  const double base = std::numbers::pi * params.b / params.L;
  return mode == BoundaryMode::HeadHead ? base : 0.5 * base;
}

ExtendedModel make_extended_model(const PipelineParams& params, int n_leaks) {
  if (n_leaks != 1 && n_leaks != 2) {
    throw std::domain_error("make_extended_model: n_leaks must be 1 or 2");
  }
  return ExtendedModel{params, derive_coefficients(params), n_leaks};
}

namespace {

// Section lengths implied by the parameter states; throws when the
// trailing section collapses (diverging estimate).
std::vector<double> extended_sections(const ExtendedModel& model, const Vec& x) {
  const double L = model.params.L;
  if (model.n_leaks == 1) {
    const double dz1 = x[3];
    if (!(dz1 > 0.0) || !(dz1 < L)) {
      throw std::domain_error("extended model: leak position left (0, L)");
    }
    return {dz1, L - dz1};
  }
  const double dz1 = x[5];
  const double dz2 = x[7];
  if (!(dz1 > 0.0) || !(dz2 > 0.0) || !(dz1 + dz2 < L)) {
    throw std::domain_error("extended model: leak positions left (0, L)");
  }
  return {dz1, dz2, L - dz1 - dz2};
}

}  // namespace

Vec extended_rhs(const ExtendedModel& model, const Vec& x_ext, const Boundary& u) {
  if (x_ext.size() != model.state_dim()) {
    throw std::invalid_argument("extended_rhs: state dimension mismatch");
  }
  const auto dz = extended_sections(model, x_ext);
  const double a1 = model.coeffs.a1;
  const double a2 = model.coeffs.a2;
  const double mu = model.coeffs.mu;
  const int n = static_cast<int>(dz.size());

  Vec dxdt = Vec::Zero(x_ext.size());
  for (int i = 1; i <= n; ++i) {
    const double H_up = (i == 1) ? u[0] : x_ext[h_index(i - 1)];
    const double H_dn = (i == n) ? u[1] : x_ext[h_index(i)];
    const double Q = x_ext[q_index(i)];
    dxdt[q_index(i)] = a1 / dz[i - 1] * (H_up - H_dn) - mu * Q * std::abs(Q);
  }
  for (int i = 1; i <= n - 1; ++i) {
    const double sigma = (i == 1) ? x_ext[model.n_leaks == 1 ? 4 : 6] : x_ext[8];
    const double H = x_ext[h_index(i)];
    dxdt[h_index(i)] =
        a2 / dz[i - 1] * (x_ext[q_index(i)] - x_ext[q_index(i + 1)] - sigma * smoothed_sqrt(H));
  }
  return dxdt;  // parameter-state derivatives stay zero
}

Mat extended_jacobian(const ExtendedModel& model, const Vec& x_ext, const Boundary& u) {
  if (x_ext.size() != model.state_dim()) {
    throw std::invalid_argument("extended_jacobian: state dimension mismatch");
  }
  const auto dz = extended_sections(model, x_ext);
  const double a1 = model.coeffs.a1;
  const double a2 = model.coeffs.a2;
  const double mu = model.coeffs.mu;
  const int n = static_cast<int>(dz.size());
  const int dim = model.state_dim();
  Mat J = Mat::Zero(dim, dim);

  // Indices of the parameter states (dz_k, sigma_k per leak).
  const int i_dz1 = model.n_leaks == 1 ? 3 : 5;
  const int i_s1 = i_dz1 + 1;
  const int i_dz2 = 7;  // two-leak only
  const int i_s2 = 8;

  for (int i = 1; i <= n; ++i) {
    const int row = q_index(i);
    const double H_up = (i == 1) ? u[0] : x_ext[h_index(i - 1)];
    const double H_dn = (i == n) ? u[1] : x_ext[h_index(i)];
    const double Q = x_ext[row];
    const double inv_dz = 1.0 / dz[i - 1];

    J(row, row) = -2.0 * mu * std::abs(Q);
    if (i >= 2) J(row, h_index(i - 1)) = a1 * inv_dz;
    if (i < n) J(row, h_index(i)) = -a1 * inv_dz;

    // Section length depends on the position states: dz_1 = x[i_dz1],
    // dz_2 = x[i_dz2], last = L - sum. d(a1/dz)/d(dz) = -a1/dz^2.
    const double dcoef = -a1 * inv_dz * inv_dz * (H_up - H_dn);
    if (i == 1) {
      J(row, i_dz1) = dcoef;
    } else if (i == n) {
      // d(last)/d(dz_k) = -1 for every leak position state.
      J(row, i_dz1) = -dcoef;
      if (model.n_leaks == 2) J(row, i_dz2) = -dcoef;
    } else {
      J(row, i_dz2) = dcoef;  // middle section of the two-leak model
    }
  }

  for (int i = 1; i <= n - 1; ++i) {
    const int row = h_index(i);
    const double sigma = (i == 1) ? x_ext[i_s1] : x_ext[i_s2];
    const double H = x_ext[row];
    const double inv_dz = 1.0 / dz[i - 1];
    const double balance =
        x_ext[q_index(i)] - x_ext[q_index(i + 1)] - sigma * smoothed_sqrt(H);

    J(row, q_index(i)) = a2 * inv_dz;
    J(row, q_index(i + 1)) = -a2 * inv_dz;
    J(row, row) = -a2 * inv_dz * sigma * smoothed_sqrt_deriv(H);
    J(row, (i == 1) ? i_s1 : i_s2) = -a2 * inv_dz * smoothed_sqrt(H);
    J(row, (i == 1) ? i_dz1 : i_dz2) = -a2 * inv_dz * inv_dz * balance;
  }
  return J;
}

Mat extended_jacobian_fd(const ExtendedModel& model, const Vec& x_ext, const Boundary& u) {
  const int dim = model.state_dim();
  Mat J(dim, dim);
  Vec x_plus = x_ext, x_minus = x_ext;
  for (int j = 0; j < dim; ++j) {
    const double h = 1e-7 * std::max(std::abs(x_ext[j]), 1e-3);
    x_plus[j] = x_ext[j] + h;
    x_minus[j] = x_ext[j] - h;
    J.col(j) = (extended_rhs(model, x_plus, u) - extended_rhs(model, x_minus, u)) / (2.0 * h);
    x_plus[j] = x_ext[j];
    x_minus[j] = x_ext[j];
  }
  return J;
}

Eigen::Vector2d extended_output(const ExtendedModel& model, const Vec& x_ext) {
  return {x_ext[0], x_ext[q_index(model.n_leaks == 1 ? 2 : 3)]};
}

Mat extended_output_jacobian(const ExtendedModel& model) {
  Mat C = Mat::Zero(2, model.state_dim());
  C(0, 0) = 1.0;
  C(1, q_index(model.n_leaks == 1 ? 2 : 3)) = 1.0;
  return C;
}

}  // namespace pipeleak
