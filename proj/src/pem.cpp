#include "pipeleak/pem.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pipeleak {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::string> input_channels(LeakModelOrder order) {
  return order == LeakModelOrder::single ? std::vector<std::string>{"H_in", "H_out"}
                                         : std::vector<std::string>{"H_in", "Q_out"};
}

std::vector<std::string> output_channels(LeakModelOrder order) {
  return order == LeakModelOrder::single ? std::vector<std::string>{"Q_in", "Q_out"}
                                         : std::vector<std::string>{"Q_in", "H_out"};
}

// Deviation inputs/outputs around the pre-excitation operating point.
struct Workspace {
  Eigen::MatrixXd U;  // rows = time, cols = 2 inputs
  Eigen::MatrixXd Y;  // rows = time, cols = 2 outputs
  Eigen::Vector2d u_bar, y_bar;
  double dt = 0.0;
};

Workspace make_workspace(const PemProblem& problem) {
  Workspace ws;
  ws.dt = problem.data.dt;
  const auto ins = input_channels(problem.order);
  const auto outs = output_channels(problem.order);
  const long n = problem.data.rows();
  ws.U.resize(n, 2);
  ws.Y.resize(n, 2);
  for (int c = 0; c < 2; ++c) {
    ws.U.col(c) = problem.data.channel(ins[c]);
    ws.Y.col(c) = problem.data.channel(outs[c]);
    if (problem.baseline_T > 0.0) {
      ws.u_bar[c] = problem.data.channel_mean(ins[c], 0.0, problem.baseline_T);
      ws.y_bar[c] = problem.data.channel_mean(outs[c], 0.0, problem.baseline_T);
    } else {
      ws.u_bar[c] = ws.U(0, c);
      ws.y_bar[c] = ws.Y(0, c);
    }
    ws.U.col(c).array() -= ws.u_bar[c];
    ws.Y.col(c).array() -= ws.y_bar[c];
  }
  return ws;
}

// RK4 sweep of the innovation predictor; emits e(t_i) per sample.
// Fixed-size inner loop keeps the PEM inner iteration cheap.
template <int N, typename Sink>
bool predictor_sweep_fixed(const LinearStateSpace& ss, const Mat& Kgain, const Workspace& ws,
                           Sink&& sink) {
  using MatN = Eigen::Matrix<double, N, N>;
  using VecN = Eigen::Matrix<double, N, 1>;
  using MatN2 = Eigen::Matrix<double, N, 2>;

  MatN M = ss.A;
  const MatN2 B = ss.B;
  const Eigen::Matrix<double, 2, N> C = ss.C;
  const Eigen::Matrix2d D = ss.D;
  const bool use_K = Kgain.size() > 0 && Kgain.cwiseAbs().maxCoeff() > 0.0;
  MatN2 K = MatN2::Zero();
  if (use_K) {
    K = Kgain;
    M -= K * C;
  }

  const double h = ws.dt;
  const long n = ws.U.rows();
  VecN x = VecN::Zero();
  Eigen::Vector2d u = ws.U.row(0).transpose();
  Eigen::Vector2d y = ws.Y.row(0).transpose();
  sink(0, Eigen::Vector2d(y - C * x - D * u));

  VecN c0 = B * u + K * y;
  for (long i = 0; i + 1 < n; ++i) {
    const Eigen::Vector2d u1 = ws.U.row(i + 1).transpose();
    const Eigen::Vector2d y1 = ws.Y.row(i + 1).transpose();
    const VecN c1 = B * u1 + K * y1;
    const VecN ch = 0.5 * (c0 + c1);

    const VecN k1 = M * x + c0;
    const VecN k2 = M * (x + 0.5 * h * k1) + ch;
    const VecN k3 = M * (x + 0.5 * h * k2) + ch;
    const VecN k4 = M * (x + h * k3) + c1;
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    sink(i + 1, Eigen::Vector2d(y1 - C * x - D * u1));
    c0 = c1;
  }
  return x.allFinite();
}

template <typename Sink>
bool predictor_sweep(const LinearStateSpace& ss, const Mat& K, const Workspace& ws, Sink&& sink) {
  switch (ss.order()) {
    case 3:
      return predictor_sweep_fixed<3>(ss, K, ws, sink);
    case 6:
      return predictor_sweep_fixed<6>(ss, K, ws, sink);
    default:
      throw std::invalid_argument("predictor_sweep: unsupported model order");
  }
}

double cost_ws(const Vec& theta, const PemProblem& problem, const Workspace& ws) {
  LinearStateSpace ss;
  try {
    ss = build_model(problem, theta);
  } catch (const std::domain_error&) {
    throw;  // infeasible theta: callers decide whether to treat as +inf
  }
  const long n = ws.U.rows();
  double sum = 0.0;
  bool finite = predictor_sweep(ss, problem.K, ws, [&](long i, const Eigen::Vector2d& e) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    sum += w * e.squaredNorm();
  });
  const double V = sum * ws.dt;
  return (finite && std::isfinite(V)) ? V : kInf;
}

}  // namespace

void PemProblem::validate() const {
  data.validate();
  params.validate();
  const int nt = n_theta();
  if (theta0.size() != nt) throw std::domain_error("PemProblem: theta0 has wrong size");
  if (lower.size() != nt || upper.size() != nt) {
    throw std::domain_error("PemProblem: bounds must match theta size");
  }
  for (int j = 0; j < nt; ++j) {
    if (!(lower[j] <= theta0[j] && theta0[j] <= upper[j])) {
      throw std::domain_error("PemProblem: theta0 outside bounds at component " +
                              std::to_string(j));
    }
  }
  if (scale.size() != 0 && scale.size() != nt) {
    throw std::domain_error("PemProblem: scale must be empty or match theta size");
  }
  for (const auto& name : input_channels(order)) data.channel_index(name);
  for (const auto& name : output_channels(order)) data.channel_index(name);
}

void default_bounds(const PemProblem& problem, Vec& lower, Vec& upper) {
  const double L = problem.params.L;
  if (problem.order == LeakModelOrder::single) {
    lower = Vec(2);
    upper = Vec(2);
    lower << 1.01 / L, 0.0;
    upper << 20.0 / L, 1e-2;
  } else {
    lower = Vec(5);
    upper = Vec(5);
    lower << 1.01 / L, 0.0, 1.01 / L, 0.0, 0.0;
    upper << 30.0 / L, 1e-2, 30.0 / L, 1.0, 1e-2;
  }
}

LinearStateSpace build_model(const PemProblem& problem, const Vec& theta) {
  if (theta.size() != problem.n_theta()) {
    throw std::invalid_argument("build_model: theta has wrong size");
  }
  if (problem.order == LeakModelOrder::single) {
    return build_single_leak(ThetaSingle{theta[0], theta[1]}, problem.eq_flows, problem.params);
  }
  return build_two_leak(ThetaDouble{theta[0], theta[1], theta[2], theta[3], theta[4]},
                        problem.eq_flows, problem.params);
}

TimeSeries prediction_error(const Vec& theta, const PemProblem& problem) {
  const Workspace ws = make_workspace(problem);
  const LinearStateSpace ss = build_model(problem, theta);

  TimeSeries err;
  err.t0 = problem.data.t0;
  err.dt = problem.data.dt;
  for (const auto& name : output_channels(problem.order)) err.labels.push_back("e_" + name);
  err.samples.resize(problem.data.rows(), 2);
  predictor_sweep(ss, problem.K, ws, [&](long i, const Eigen::Vector2d& e) {
    err.samples.row(i) = e.transpose();
  });
  return err;
}

double cost(const Vec& theta, const PemProblem& problem) {
  return cost_ws(theta, problem, make_workspace(problem));
}

Vec fd_gradient(const std::function<double(const Vec&)>& objective, const Vec& x,
                const Vec& scale) {
  const int n = static_cast<int>(x.size());
  Vec g(n);
  Vec probe = x;
  auto eval = [&](const Vec& p) {
    try {
      const double v = objective(p);
      return std::isfinite(v) ? v : kInf;
    } catch (const std::domain_error&) {
      return kInf;
    }
  };
  double f0 = kInf;  // evaluated lazily for one-sided fallbacks
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(std::abs(x[j]), scale[j]);
    probe[j] = x[j] + h;
    const double fp = eval(probe);
    probe[j] = x[j] - h;
    const double fm = eval(probe);
    probe[j] = x[j];
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g[j] = (fp - fm) / (2.0 * h);
    } else {
      if (!std::isfinite(f0)) f0 = eval(x);
      if (std::isfinite(fp)) {
        g[j] = (fp - f0) / h;
      } else if (std::isfinite(fm)) {
        g[j] = (f0 - fm) / h;
      } else {
        g[j] = 0.0;
      }
    }
  }
  return g;
}

namespace {

Vec clip_box(const Vec& x, const Vec& lo, const Vec& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Gradient components pointing out of the box are inactive.
Vec projected_gradient(const Vec& g, const Vec& s, const Vec& lo, const Vec& hi) {
  Vec pg = g;
  for (int j = 0; j < s.size(); ++j) {
    const double span = std::max(hi[j] - lo[j], 1e-300);
    const double tol = 1e-12 * span;
    if ((s[j] <= lo[j] + tol && g[j] > 0.0) || (s[j] >= hi[j] - tol && g[j] < 0.0)) pg[j] = 0.0;
  }
  return pg;
}

}  // namespace

PemResult minimize_box(const std::function<double(const Vec&)>& objective, const Vec& x0,
                       const Vec& lower, const Vec& upper, const Vec& scale,
                       const BoxMinOptions& opts) {
  const int n = static_cast<int>(x0.size());
  if (lower.size() != n || upper.size() != n || scale.size() != n) {
    throw std::invalid_argument("minimize_box: dimension mismatch");
  }
  for (int j = 0; j < n; ++j) {
    if (!(scale[j] > 0.0)) throw std::invalid_argument("minimize_box: scales must be positive");
    if (!(lower[j] <= upper[j])) throw std::invalid_argument("minimize_box: empty box");
  }

  PemResult result;
  int evals = 0;
  // Work in scaled coordinates s = x / scale.
  auto eval_s = [&](const Vec& s) -> double {
    ++evals;
    try {
      const double v = objective(s.cwiseProduct(scale));
      return std::isfinite(v) ? v : kInf;
    } catch (const std::domain_error&) {
      return kInf;
    }
  };
  auto grad_s = [&](const Vec& s) -> Vec {
    Vec g(n);
    Vec probe = s;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(std::abs(s[j]), 1.0);
      probe[j] = s[j] + h;
      const double fp = eval_s(probe);
      probe[j] = s[j] - h;
      const double fm = eval_s(probe);
      probe[j] = s[j];
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g[j] = (fp - fm) / (2.0 * h);
      } else if (std::isfinite(fp)) {
        g[j] = (fp - eval_s(s)) / h;
      } else if (std::isfinite(fm)) {
        g[j] = (eval_s(s) - fm) / h;
      } else {
        g[j] = 0.0;
      }
    }
    return g;
  };

  const Vec lo = lower.cwiseQuotient(scale);
  const Vec hi = upper.cwiseQuotient(scale);
  Vec s = clip_box(x0.cwiseQuotient(scale), lo, hi);
  double V = eval_s(s);
  result.cost_trajectory.push_back(V);

  Mat Hinv = Mat::Identity(n, n);
  Vec g = grad_s(s);
  int small_decrease_streak = 0;
  bool line_search_ok = true;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const Vec pg = projected_gradient(g, s, lo, hi);
    if (pg.norm() < opts.grad_tol * (1.0 + std::abs(V))) break;

    Vec d = -(Hinv * g);
    if (d.dot(g) >= 0.0) d = -g;  // enforce descent

    // Backtracking over the projected path.
    double step = 1.0;
    Vec s_new;
    double V_new = kInf;
    line_search_ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      s_new = clip_box(s + step * d, lo, hi);
      if ((s_new - s).norm() == 0.0) break;
      V_new = eval_s(s_new);
      const double pred = g.dot(s_new - s);
      const bool sufficient =
          std::isfinite(V) ? V_new <= V + 1e-4 * std::min(pred, 0.0) : std::isfinite(V_new);
      if (sufficient && V_new < V) {
        line_search_ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!line_search_ok) {
      // Steepest-descent restart before giving up.
      if (!Hinv.isIdentity(0.0)) {
        Hinv.setIdentity();
        d = -g;
        step = 1.0;
        for (int ls = 0; ls < 60; ++ls) {
          s_new = clip_box(s + step * d, lo, hi);
          if ((s_new - s).norm() == 0.0) break;
          V_new = eval_s(s_new);
          if (V_new < V) {
            line_search_ok = true;
            break;
          }
          step *= 0.5;
        }
      }
      if (!line_search_ok) {
        if (pg.norm() > 1e-3 * (1.0 + std::abs(V)) && std::isfinite(V)) {
          std::ostringstream msg;
          msg << "minimize_box: line search stalled at V = " << V
              << ", projected gradient " << pg.norm();
          throw std::runtime_error(msg.str());
        }
        break;  // flat to machine precision: accept as converged
      }
    }

    const Vec s_step = s_new - s;
    const Vec g_new = grad_s(s_new);
    const Vec y = g_new - g;
    const double sy = s_step.dot(y);
    if (sy > 1e-12 * s_step.norm() * y.norm()) {
      // BFGS inverse update.
      const double rho = 1.0 / sy;
      const Mat I = Mat::Identity(n, n);
      Hinv = (I - rho * s_step * y.transpose()) * Hinv * (I - rho * y * s_step.transpose()) +
             rho * s_step * s_step.transpose();
    }

    const double decrease = std::isfinite(V) ? (V - V_new) : kInf;
    const double rel = decrease / std::max(std::abs(V), 1e-300);
    small_decrease_streak = (std::isfinite(rel) && rel < opts.cost_tol) ? small_decrease_streak + 1
                                                                        : 0;
    s = s_new;
    V = V_new;
    g = g_new;
    result.cost_trajectory.push_back(V);
    if (small_decrease_streak >= 3) break;
  }

  const Vec pg = projected_gradient(g, s, lo, hi);
  result.theta_hat = s.cwiseProduct(scale);
  result.V = V;
  result.grad_norm = pg.norm();
  result.n_cost_evals = evals;

  const bool grad_ok = pg.norm() < opts.grad_tol * (1.0 + std::abs(V));
  const bool flat_ok = small_decrease_streak >= 3 || !line_search_ok;
  bool at_bound = false;
  for (int j = 0; j < n; ++j) {
    const double span = std::max(hi[j] - lo[j], 1e-300);
    if ((s[j] <= lo[j] + 1e-12 * span && g[j] > 0.0) ||
        (s[j] >= hi[j] - 1e-12 * span && g[j] < 0.0)) {
      at_bound = true;
    }
  }
  if (grad_ok || flat_ok) {
    result.exit_reason = at_bound ? PemExit::bound_hit : PemExit::converged;
  } else {
    result.exit_reason = PemExit::max_iter;
  }
  return result;
}

namespace {

PemResult minimize_impl(const PemProblem& problem, const Vec& theta0, const Vec& scale,
                        const Workspace& ws) {
  BoxMinOptions opts;
  opts.max_iter = problem.max_iter;
  auto objective = [&](const Vec& theta) { return cost_ws(theta, problem, ws); };
  return minimize_box(objective, theta0, problem.lower, problem.upper, scale, opts);
}

}  // namespace

PemResult minimize(const PemProblem& problem) {
  problem.validate();
  const Workspace ws = make_workspace(problem);
  Vec scale = problem.scale;
  if (scale.size() == 0) {
    scale = problem.theta0.cwiseAbs().cwiseMax(1e-12);
  }
  return minimize_impl(problem, problem.theta0, scale, ws);
}

namespace {

// Implied steady head at the leak nodes from the baseline operating
// point: marching the friction gradient through the identified sections.
std::vector<LeakEstimate> leaks_from_result(const PemProblem& problem, const Vec& theta,
                                            const Workspace& ws) {
  const Coefficients c = derive_coefficients(problem.params);
  const double H_in_bar = ws.u_bar[0];
  const double Q1 = problem.eq_flows[0];
  if (problem.order == LeakModelOrder::single) {
    const ThetaSingle ts{theta[0], theta[1]};
    const double H2 = H_in_bar - c.mu * Q1 * std::abs(Q1) / c.a1 / ts.theta1;
    return positions_from_theta(ts, std::max(H2, 0.0));
  }
  const ThetaDouble td{theta[0], theta[1], theta[2], theta[3], theta[4]};
  const double H2 = H_in_bar - c.mu * Q1 * std::abs(Q1) / c.a1 / td.theta1;
  const double H3 = H2 - c.mu * td.theta4 * std::abs(td.theta4) / c.a1 / td.theta3;
  return positions_from_theta(td, std::max(H2, 0.0), std::max(H3, 0.0));
}

}  // namespace

LocateResult locate(const PemProblem& problem, int multistart, uint64_t seed) {
  if (multistart < 1) throw std::invalid_argument("locate: multistart must be >= 1");
  problem.validate();

  Vec scale = problem.scale;
  if (scale.size() == 0) scale = problem.theta0.cwiseAbs().cwiseMax(1e-12);

  auto feasible = [&](const Vec& theta) {
    try {
      build_model(problem, theta);
      return true;
    } catch (const std::domain_error&) {
      return false;
    }
  };

  // All randomness is consumed up front so concurrent minimization
  // cannot perturb the start set.
  std::vector<Vec> starts;
  if (feasible(problem.theta0)) starts.push_back(problem.theta0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int nt = problem.n_theta();
  while (static_cast<int>(starts.size()) < multistart) {
    Vec candidate(nt);
    bool found = false;
    for (int attempt = 0; attempt < 200 && !found; ++attempt) {
      for (int j = 0; j < nt; ++j) {
        double lo = problem.lower[j];
        double hi = problem.upper[j];
        if (problem.theta0[j] > 0.0) {
          lo = std::max(lo, 0.1 * problem.theta0[j]);
          hi = std::min(hi, 10.0 * problem.theta0[j]);
        }
        if (lo > 0.0 && hi > lo) {
          candidate[j] = std::exp(std::log(lo) + unit(rng) * (std::log(hi) - std::log(lo)));
        } else {
          candidate[j] = lo + unit(rng) * (hi - lo);
        }
      }
      found = feasible(candidate);
    }
    if (!found) break;  // give up on this slot
    starts.push_back(candidate);
  }
  if (starts.empty()) throw std::runtime_error("locate: every start is infeasible");

  // One shared read-only workspace; each start owns its predictor state.
  const Workspace ws = make_workspace(problem);
  std::vector<std::future<PemResult>> jobs;
  jobs.reserve(starts.size());
  for (size_t k = 0; k < starts.size(); ++k) {
    jobs.push_back(std::async(std::launch::async, [&problem, &starts, &scale, &ws, k]() {
      PemResult r = minimize_impl(problem, starts[k], scale, ws);
      r.start_index = static_cast<int>(k);
      return r;
    }));
  }

  LocateResult out;
  bool have_best = false;
  for (auto& job : jobs) {
    PemResult r = job.get();
    if (!std::isfinite(r.V)) continue;
    ++out.feasible_starts;
    if (!have_best || r.V < out.best.V ||
        (r.V == out.best.V && r.start_index < out.best.start_index)) {
      out.best = std::move(r);
      have_best = true;
    }
  }
  if (!have_best) throw std::runtime_error("locate: no start produced a finite cost");

  out.leaks = leaks_from_result(problem, out.best.theta_hat, ws);
  return out;
}

Mat gauss_newton_normal(const Vec& theta, const PemProblem& problem) {
  problem.validate();
  const Workspace ws = make_workspace(problem);
  Vec scale = problem.scale;
  if (scale.size() == 0) scale = problem.theta0.cwiseAbs().cwiseMax(1e-12);

  const int nt = problem.n_theta();
  const long n = ws.U.rows();
  Eigen::MatrixXd J(2 * n, nt);

  Vec probe = theta;
  Eigen::MatrixXd e_plus(n, 2), e_minus(n, 2);
  for (int j = 0; j < nt; ++j) {
    const double h = 1e-6 * std::max(std::abs(theta[j]), scale[j]);
    probe[j] = theta[j] + h;
    predictor_sweep(build_model(problem, probe), problem.K, ws,
                    [&](long i, const Eigen::Vector2d& e) { e_plus.row(i) = e.transpose(); });
    probe[j] = theta[j] - h;
    predictor_sweep(build_model(problem, probe), problem.K, ws,
                    [&](long i, const Eigen::Vector2d& e) { e_minus.row(i) = e.transpose(); });
    probe[j] = theta[j];
    // Sensitivity w.r.t. the scaled parameter theta_j / scale_j.
    const double denom = 2.0 * h / scale[j];
    J.col(j).segment(0, n) = (e_plus.col(0) - e_minus.col(0)) / denom;
    J.col(j).segment(n, n) = (e_plus.col(1) - e_minus.col(1)) / denom;
  }
  return ws.dt * (J.transpose() * J);
}

double condition_number(const Mat& M) {
  const Eigen::JacobiSVD<Mat> svd(M);
  const double smax = svd.singularValues().maxCoeff();
  const double smin = svd.singularValues().minCoeff();
  constexpr double cap = 1e18;
  if (!(smax > 0.0)) return cap;  // numerically zero matrix: unidentifiable
  return std::min(cap, smax / std::max(smin, smax / cap));
}

}  // namespace pipeleak
