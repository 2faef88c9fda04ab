#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace knormlab {

inline constexpr const char* kMetricsCsvHeader =
    "step,split,loss,accuracy,epsilon_spent,wall_seconds,seed";

// One metrics row. epsilon_spent is NaN outside DP modes and is written as
// an empty CSV field.
struct MetricsRecord {
  std::int64_t step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double epsilon_spent = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

std::string metrics_to_csv(const std::vector<MetricsRecord>& records);
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

// Representative accuracy per mode: fl = mean of the last 10 test rounds,
// dpfl = mean of the last 3, central/dp = final test record.
double representative_accuracy(const std::vector<MetricsRecord>& records,
                               const std::string& mode);

}  // namespace knormlab
