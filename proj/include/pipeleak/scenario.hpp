// Scenario configuration (JSON) and the twin-experiment truth runs the
// CLI and tests drive: build the grid, steady-start it, apply leak
// onsets and boundary excitation, sample the boundary measurements.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipeleak/pipeline.hpp"
#include "pipeleak/sim.hpp"
#include "pipeleak/timeseries.hpp"

namespace pipeleak {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExcitationSpec {
  enum class Kind { constant, chirp } kind = Kind::constant;
  double value = 0.0;   // constant level (chirp uses base)
  ChirpSignal chirp;    // base/amp/omega0/k; T_w filled from the horizon

  bool is_chirp() const { return kind == Kind::chirp; }
  double eval(double t) const;  // t relative to excitation start
};

struct LeakConfig {
  double position = 0.0;  // [m]
  double sigma = 0.0;     // [m^(5/2)/s]
  double onset = 0.0;     // activation time [s]
};

struct EkfConfig {
  double alpha = 0.3;
  double z0 = 0.0;        // initial position guess; 0 = L/2
  double sigma0 = 0.0;
  int substeps = 1;
};

struct PemConfig {
  int order = 1;  // leaks in the identification model
  std::vector<double> theta0;
  std::vector<double> lower, upper;  // empty = default bounds
  int multistart = 1;
  double baseline_T = -1.0;  // < 0: use the scenario hold time
  int decimate = 1;
  int max_iter = 500;
};

struct FreqConfig {
  int n_bins = 96;
  std::string input = "H_in";
  std::string output = "Q_out";
  std::vector<int> ns_sweep;  // empty = single run at scenario n_s
};

struct ScenarioConfig {
  int schema_version = 1;
  PipelineParams params{9.81, 87.0, 376.0, 0.0654, 0.0181076};  // test-bed defaults
  int n_s = 20;
  BoundaryMode mode = BoundaryMode::HeadHead;
  std::vector<LeakConfig> leaks;
  ExcitationSpec upstream;    // H_in
  ExcitationSpec downstream;  // H_out or Q_out per mode
  double hold_time = 0.0;     // steady segment before the excitation starts
  double horizon = 100.0;     // total simulated time [s]
  double dt = 0.01;
  std::map<std::string, double> noise_std;  // per boundary channel
  uint64_t seed = 0;
  bool record_states = false;
  std::optional<double> r1_threshold;
  double r1_window = 5.0;  // sliding-mean window [s]

  EkfConfig ekf;
  PemConfig pem;
  FreqConfig freq;

  void validate() const;
};

ScenarioConfig load_config(const std::string& path);        // throws ConfigError
ScenarioConfig parse_config(const std::string& json_text);  // throws ConfigError

// Boundary forcing for the scenario; the chirp clock starts at hold_time.
Forcing make_forcing(const ScenarioConfig& config);

// Grid with only the leaks active at t = 0 (onset <= 0).
GridModel initial_grid(const ScenarioConfig& config);

// Simulate the scenario from its steady start, leak onsets applied,
// and return the boundary measurements (noise added per config).
TimeSeries run_truth(const ScenarioConfig& config);

// Inlet/outlet flow imbalance diagnostics the reports carry.
struct ResidualStats {
  double steady = 0.0;       // baseline |Q_in - Q_out|
  double max_sliding = 0.0;  // max sliding-window mean of |r1|
  double threshold = 0.0;
  bool leak_detected = false;
};

ResidualStats residual_stats(const ScenarioConfig& config, const TimeSeries& data);

}  // namespace pipeleak
