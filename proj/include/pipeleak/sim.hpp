// Fixed-step RK4 integration of any right-hand side, chirp excitation,
// measurement-noise injection, and frequency-response extraction from
// chirp runs by sliding-window demodulation.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pipeleak/pipeline.hpp"
#include "pipeleak/timeseries.hpp"

namespace pipeleak {

// value(t) = base + amp * sin((omega0 + pi k t) t); the instantaneous
// frequency is omega0 + 2 pi k t.
struct ChirpSignal {
  double base = 0.0;
  double amp = 0.0;
  double omega0 = 0.0;
  double k = 0.0;     // frequency sweep rate [1/s^2]
  double T_w = 0.0;   // sweep window [s]

  double operator()(double t) const;
  double omega_at(double t) const { return omega0 + 2.0 * std::numbers::pi * k * t; }
  double omega_max() const { return omega_at(T_w); }
};

// dx/dt = f(t, x); boundary forcing is closed over by the caller.
using Rhs = std::function<void(double t, const Vec& x, Vec& dxdt)>;
using Forcing = std::function<Boundary(double t)>;

// Classical RK4 from x over one step h.
Vec rk4_step(const Rhs& rhs, double t, const Vec& x, double h);

// Fixed-step trajectory sampled every dt over [0, T]; each sample
// interval is split into `substeps` equal RK4 steps (>= 1). Records the
// state vector per sample under the given labels. Throws
// std::runtime_error reporting the time at which the state turned
// non-finite.
TimeSeries integrate(const Rhs& rhs, const Vec& x0, double dt, double T,
                     const std::vector<std::string>& labels, int substeps = 1);

// Largest RK4 step the grid's wave stencil tolerates: 0.2 min(dz)/b.
double stable_step(const GridModel& model);

struct SimOptions {
  double dt = 0.01;          // sample time [s]
  int substeps = 0;          // 0 = derive from stable_step
  bool record_states = false;  // append raw state channels x0..x{n-1}
  bool record_leaks = false;   // append per-node leak outflows
};

// Simulate the grid under boundary forcing from an initial state and
// record the boundary channels H_in, H_out, Q_in, Q_out.
TimeSeries simulate_grid(const GridModel& model, const Vec& x0, const Forcing& forcing,
                         double T, const SimOptions& opts = {});

// Additive Gaussian noise per channel, deterministic under the seed.
TimeSeries add_noise(const TimeSeries& ts, const std::vector<double>& stddev, uint64_t seed);

struct FrequencyResponse {
  std::vector<double> omega;      // strictly increasing [rad/s]
  std::vector<double> magnitude;  // |out| / |in|
  std::vector<double> phase;      // out minus in, wrapped to (-pi, pi] [rad]
  int dropped_bins = 0;           // windows whose input amplitude was below floor
};

struct FreqOptions {
  int n_bins = 64;
  double settle_time = 0.0;   // skip initial transient [s]
  double min_input_amp = 1e-12;
};

// Partition the chirp run into 50%-overlapping windows; per window,
// least-squares fit a sin(w t) + b cos(w t) + c to input and output at
// the window's center frequency. Magnitude is the amplitude ratio,
// phase the difference. Windows with input amplitude below the floor
// are dropped; throws std::runtime_error when none survive.
FrequencyResponse frequency_response(const TimeSeries& ts, const std::string& input_channel,
                                     const std::string& output_channel, const ChirpSignal& sweep,
                                     const FreqOptions& opts);

// Index of the first local magnitude maximum rising above
// `prominence` times the median magnitude. Returns -1 when none exists.
int first_peak(const FrequencyResponse& fr, double prominence = 2.0);

}  // namespace pipeleak
