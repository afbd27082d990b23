// Uniformly sampled multi-channel signals plus the CSV format shared by
// the CLI and the estimators: header `t,<labels...>`, one `# units:`
// comment line, 17 significant digits.

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pipeleak {

struct TimeSeries {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<std::string> labels;
  Eigen::MatrixXd samples;  // rows = time, cols = channels

  long rows() const { return samples.rows(); }
  int channels() const { return static_cast<int>(samples.cols()); }
  double time(long i) const { return t0 + dt * static_cast<double>(i); }
  double duration() const { return rows() > 0 ? dt * static_cast<double>(rows() - 1) : 0.0; }

  bool has_channel(const std::string& label) const;
  int channel_index(const std::string& label) const;  // throws when missing
  Eigen::VectorXd channel(const std::string& label) const;

  // Mean of one channel over t in [t0 + from, t0 + to].
  double channel_mean(const std::string& label, double from, double to) const;

  // Every k-th sample (dt scaled by k).
  TimeSeries decimate(int k) const;

  void validate() const;
};

void write_csv(const TimeSeries& ts, const std::string& path,
               const std::vector<std::string>& units = {});
TimeSeries read_csv(const std::string& path);

}  // namespace pipeleak
