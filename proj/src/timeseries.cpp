#include "pipeleak/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pipeleak {

bool TimeSeries::has_channel(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

int TimeSeries::channel_index(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw std::invalid_argument("TimeSeries: no channel named '" + label + "'");
  }
  return static_cast<int>(it - labels.begin());
}

Eigen::VectorXd TimeSeries::channel(const std::string& label) const {
  return samples.col(channel_index(label));
}

double TimeSeries::channel_mean(const std::string& label, double from, double to) const {
  const int col = channel_index(label);
  const long lo = std::max(0L, static_cast<long>(std::ceil(from / dt - 1e-9)));
  const long hi = std::min(rows() - 1, static_cast<long>(std::floor(to / dt + 1e-9)));
  if (hi < lo) throw std::invalid_argument("TimeSeries: empty averaging window");
  return samples.col(col).segment(lo, hi - lo + 1).mean();
}

TimeSeries TimeSeries::decimate(int k) const {
  if (k < 1) throw std::invalid_argument("TimeSeries: decimation factor must be >= 1");
  TimeSeries out;
  out.t0 = t0;
  out.dt = dt * k;
  out.labels = labels;
  const long n = (rows() + k - 1) / k;
  out.samples.resize(n, channels());
  for (long i = 0; i < n; ++i) out.samples.row(i) = samples.row(i * k);
  return out;
}

void TimeSeries::validate() const {
  if (!(dt > 0.0)) throw std::domain_error("TimeSeries: dt must be positive");
  if (samples.cols() != static_cast<long>(labels.size())) {
    throw std::domain_error("TimeSeries: label count does not match channel count");
  }
  if (!samples.allFinite()) throw std::domain_error("TimeSeries: non-finite samples");
}

void write_csv(const TimeSeries& ts, const std::string& path,
               const std::vector<std::string>& units) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);

  if (!units.empty()) {
    out << "# units: s";
    for (const auto& u : units) out << "," << u;
    out << "\n";
  }
  out << "t";
  for (const auto& label : ts.labels) out << "," << label;
  out << "\n";

  char buf[32];
  for (long i = 0; i < ts.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", ts.time(i));
    out << buf;
    for (int c = 0; c < ts.channels(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", ts.samples(i, c));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

TimeSeries read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path);

  TimeSeries ts;
  std::string line;
  bool have_header = false;
  std::vector<std::vector<double>> data;
  std::vector<double> times;

  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream row(line);
    std::string cell;
    if (!have_header) {
      std::vector<std::string> cols;
      while (std::getline(row, cell, ',')) cols.push_back(cell);
      if (cols.empty() || cols[0] != "t") {
        throw std::runtime_error("read_csv: " + path + ": first column must be 't'");
      }
      ts.labels.assign(cols.begin() + 1, cols.end());
      have_header = true;
      continue;
    }
    std::vector<double> values;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("read_csv: " + path + " line " + std::to_string(lineno) +
                                 ": bad number '" + cell + "'");
      }
    }
    if (values.size() != ts.labels.size() + 1) {
      throw std::runtime_error("read_csv: " + path + " line " + std::to_string(lineno) +
                               ": expected " + std::to_string(ts.labels.size() + 1) + " columns");
    }
    times.push_back(values[0]);
    values.erase(values.begin());
    data.push_back(std::move(values));
  }
  if (data.size() < 2) throw std::runtime_error("read_csv: " + path + ": need at least 2 samples");

  ts.t0 = times[0];
  ts.dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (size_t i = 1; i < times.size(); ++i) {
    if (std::abs(times[i] - times[i - 1] - ts.dt) > 1e-6 * std::max(ts.dt, 1.0)) {
      throw std::runtime_error("read_csv: " + path + ": non-uniform sampling near row " +
                               std::to_string(i));
    }
  }
  ts.samples.resize(static_cast<long>(data.size()), static_cast<long>(ts.labels.size()));
  for (size_t i = 0; i < data.size(); ++i) {
    for (size_t c = 0; c < data[i].size(); ++c) ts.samples(i, c) = data[i][c];
  }
  ts.validate();
  return ts;
}

}  // namespace pipeleak
