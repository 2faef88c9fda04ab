#include "knormlab/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  os << kMetricsCsvHeader << "\n";
  for (const MetricsRecord& r : records) {
    os << r.step << "," << r.split << "," << fmt(r.loss, "%.10g") << ","
       << fmt(r.accuracy, "%.10g") << ",";
    if (!std::isnan(r.epsilon_spent)) os << fmt(r.epsilon_spent, "%.6g");
    os << "," << fmt(r.wall_seconds, "%.3f") << "," << r.seed << "\n";
  }
  return os.str();
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << metrics_to_csv(records);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ConfigError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsCsvHeader) {
    // name the first column that disagrees
    const auto want = split_fields(kMetricsCsvHeader);
    const auto got = split_fields(line);
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (i >= got.size() || got[i] != want[i])
        throw ConfigError(path + ": metrics schema mismatch at column '" +
                          want[i] + "'");
    }
    throw ConfigError(path + ": metrics schema mismatch (extra columns)");
  }
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 7)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 7 fields, got " +
                        std::to_string(fields.size()));
    MetricsRecord r;
    r.step = std::stoll(fields[0]);
    r.split = fields[1];
    r.loss = std::stod(fields[2]);
    r.accuracy = std::stod(fields[3]);
    r.epsilon_spent = fields[4].empty()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : std::stod(fields[4]);
    r.wall_seconds = std::stod(fields[5]);
    r.seed = static_cast<std::uint64_t>(std::stoull(fields[6]));
    out.push_back(std::move(r));
  }
  return out;
}

double representative_accuracy(const std::vector<MetricsRecord>& records,
                               const std::string& mode) {
  std::vector<double> test_acc;
  for (const MetricsRecord& r : records)
    if (r.split == "test") test_acc.push_back(r.accuracy);
  if (test_acc.empty())
    throw ContractError("no test records to summarize");
  std::size_t tail = 1;
  if (mode == "fl")
    tail = 10;
  else if (mode == "dpfl")
    tail = 3;
  else if (mode != "central" && mode != "dp")
    throw ConfigError("unknown mode '" + mode + "'");
  tail = std::min(tail, test_acc.size());
  double s = 0.0;
  for (std::size_t i = test_acc.size() - tail; i < test_acc.size(); ++i)
    s += test_acc[i];
  return s / static_cast<double>(tail);
}

}  // namespace knormlab
