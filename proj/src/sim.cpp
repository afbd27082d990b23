#include "pipeleak/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pipeleak {

double ChirpSignal::operator()(double t) const {
  return base + amp * std::sin((omega0 + std::numbers::pi * k * t) * t);
}

Vec rk4_step(const Rhs& rhs, double t, const Vec& x, double h) {
  static thread_local Vec k1, k2, k3, k4, tmp;
  rhs(t, x, k1);
  tmp = x + 0.5 * h * k1;
  rhs(t + 0.5 * h, tmp, k2);
  tmp = x + 0.5 * h * k2;
  rhs(t + 0.5 * h, tmp, k3);
  tmp = x + h * k3;
  rhs(t + h, tmp, k4);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

TimeSeries integrate(const Rhs& rhs, const Vec& x0, double dt, double T,
                     const std::vector<std::string>& labels, int substeps) {
  if (!(dt > 0.0) || !(T >= 0.0)) throw std::invalid_argument("integrate: need dt > 0, T >= 0");
  if (substeps < 1) throw std::invalid_argument("integrate: substeps must be >= 1");
  const long n_samples = static_cast<long>(std::llround(T / dt)) + 1;
  const double h = dt / substeps;

  TimeSeries ts;
  ts.dt = dt;
  ts.labels = labels;
  ts.samples.resize(n_samples, x0.size());

  Vec x = x0;
  ts.samples.row(0) = x.transpose();
  for (long i = 1; i < n_samples; ++i) {
    const double t_base = dt * static_cast<double>(i - 1);
    for (int s = 0; s < substeps; ++s) {
      x = rk4_step(rhs, t_base + s * h, x, h);
    }
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "integrate: state diverged at t = " << dt * static_cast<double>(i);
      throw std::runtime_error(msg.str());
    }
    ts.samples.row(i) = x.transpose();
  }
  return ts;
}

double stable_step(const GridModel& model) {
  const double dz_min = *std::min_element(model.dz.begin(), model.dz.end());
  return 0.2 * dz_min / model.params.b;
}

TimeSeries simulate_grid(const GridModel& model, const Vec& x0, const Forcing& forcing,
                         double T, const SimOptions& opts) {
  model.validate();
  int substeps = opts.substeps;
  if (substeps < 1) {
    substeps = std::max(1, static_cast<int>(std::ceil(opts.dt / stable_step(model))));
  }

  Rhs rhs = [&model, &forcing](double t, const Vec& x, Vec& dxdt) {
    nonlinear_rhs(model, x, forcing(t), dxdt);
  };

  std::vector<std::string> state_labels(model.state_dim());
  for (int i = 0; i < model.state_dim(); ++i) state_labels[i] = "x" + std::to_string(i);
  TimeSeries states = integrate(rhs, x0, opts.dt, T, state_labels, substeps);

  TimeSeries ts;
  ts.dt = opts.dt;
  ts.labels = {"H_in", "H_out", "Q_in", "Q_out"};
  int extra = 0;
  if (opts.record_states) extra += model.state_dim();
  if (opts.record_leaks) extra += model.n_s - 1;
  if (opts.record_states) {
    for (const auto& l : state_labels) ts.labels.push_back(l);
  }
  if (opts.record_leaks) {
    for (int i = 2; i <= model.n_s; ++i) ts.labels.push_back("Q_leak_node" + std::to_string(i));
  }

  ts.samples.resize(states.rows(), 4 + extra);
  Vec x(model.state_dim());
  for (long r = 0; r < states.rows(); ++r) {
    const Boundary u = forcing(states.time(r));
    x = states.samples.row(r).transpose();
    ts.samples(r, 0) = u[0];
    ts.samples(r, 1) = outlet_head(model, x, u);
    ts.samples(r, 2) = inlet_flow(model, x);
    ts.samples(r, 3) = outlet_flow(model, x, u);
    int col = 4;
    if (opts.record_states) {
      ts.samples.row(r).segment(col, model.state_dim()) = states.samples.row(r);
      col += model.state_dim();
    }
    if (opts.record_leaks) {
      for (int i = 1; i <= model.n_s - 1; ++i) {
        ts.samples(r, col++) = leak_outflow(model.sigma_at_node[i - 1], x[2 * i - 1]);
      }
    }
  }
  return ts;
}

TimeSeries add_noise(const TimeSeries& ts, const std::vector<double>& stddev, uint64_t seed) {
  if (stddev.size() != static_cast<size_t>(ts.channels())) {
    throw std::invalid_argument("add_noise: one stddev per channel required");
  }
  for (double s : stddev) {
    if (s < 0.0) throw std::invalid_argument("add_noise: stddev must be >= 0");
  }
  TimeSeries out = ts;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (long r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.channels(); ++c) {
      if (stddev[c] > 0.0) out.samples(r, c) += stddev[c] * gauss(rng);
    }
  }
  return out;
}

namespace {

struct SineFit {
  double amp;
  double phase;
};

// Least-squares a sin(w t) + b cos(w t) + c over [lo, hi).
SineFit fit_tone(const TimeSeries& ts, int col, long lo, long hi, double omega) {
  Eigen::Matrix3d G = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  for (long i = lo; i < hi; ++i) {
    const double t = ts.time(i);
    const Eigen::Vector3d phi(std::sin(omega * t), std::cos(omega * t), 1.0);
    G += phi * phi.transpose();
    rhs += phi * ts.samples(i, col);
  }
  const Eigen::Vector3d sol = G.ldlt().solve(rhs);
  return {std::hypot(sol[0], sol[1]), std::atan2(sol[1], sol[0])};
}

double wrap_phase(double p) {
  while (p > std::numbers::pi) p -= 2.0 * std::numbers::pi;
  while (p <= -std::numbers::pi) p += 2.0 * std::numbers::pi;
  return p;
}

}  // namespace

FrequencyResponse frequency_response(const TimeSeries& ts, const std::string& input_channel,
                                     const std::string& output_channel, const ChirpSignal& sweep,
                                     const FreqOptions& opts) {
  if (opts.n_bins < 2) throw std::invalid_argument("frequency_response: n_bins must be >= 2");
  const int in_col = ts.channel_index(input_channel);
  const int out_col = ts.channel_index(output_channel);

  const long start = std::min<long>(ts.rows() - 2, static_cast<long>(opts.settle_time / ts.dt));
  const long span = ts.rows() - start;
  // 50% overlap: n_bins windows of width w cover the span when
  // (n_bins + 1) * w / 2 = span.
  const long w = std::max<long>(4, 2 * span / (opts.n_bins + 1));

  FrequencyResponse fr;
  for (int bin = 0; bin < opts.n_bins; ++bin) {
    const long lo = start + bin * w / 2;
    const long hi = std::min(lo + w, ts.rows());
    if (hi - lo < 4) break;
    const double t_center = ts.time((lo + hi) / 2);
    const double omega = sweep.omega_at(t_center - ts.t0);
    if (omega <= 0.0) continue;

    const SineFit in = fit_tone(ts, in_col, lo, hi, omega);
    if (in.amp < opts.min_input_amp) {
      ++fr.dropped_bins;
      continue;
    }
    const SineFit out = fit_tone(ts, out_col, lo, hi, omega);
    fr.omega.push_back(omega);
    fr.magnitude.push_back(out.amp / in.amp);
    fr.phase.push_back(wrap_phase(out.phase - in.phase));
  }
  if (fr.omega.empty()) {
    throw std::runtime_error("frequency_response: no window had usable input amplitude");
  }
  return fr;
}

int first_peak(const FrequencyResponse& fr, double prominence) {
  const size_t n = fr.magnitude.size();
  if (n < 3) return -1;
  std::vector<double> sorted = fr.magnitude;
  std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
  const double floor = prominence * sorted[n / 2];
  for (size_t i = 1; i + 1 < n; ++i) {
    if (fr.magnitude[i] > floor && fr.magnitude[i] >= fr.magnitude[i - 1] &&
        fr.magnitude[i] >= fr.magnitude[i + 1]) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

}  // namespace pipeleak
