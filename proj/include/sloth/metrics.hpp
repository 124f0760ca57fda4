#pragma once

#include <algorithm>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sloth/policy.hpp"

namespace sloth {

/// Empirical CDF of per-sample cost fractions sampled on a uniform grid.
struct EECCurve {
  std::vector<double> grid;
  std::vector<double> values;
};

inline constexpr std::size_t kDefaultGridSize = 1001;

inline EECCurve build_eec(std::span<const InferenceRecord> records, std::size_t grid_size = kDefaultGridSize) {
  if (records.empty()) throw Error("cannot build an EEC curve from zero records");
  if (grid_size < 2) throw Error("EEC grid needs at least two points");
  std::vector<double> costs;
  costs.reserve(records.size());
  for (const InferenceRecord& r : records) costs.push_back(r.cost_fraction);
  std::sort(costs.begin(), costs.end());

  EECCurve c;
  c.grid.resize(grid_size);
  c.values.resize(grid_size);
  const double n = static_cast<double>(costs.size());
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double at = static_cast<double>(k) / static_cast<double>(grid_size - 1);
    c.grid[k] = at;
    const auto below = std::upper_bound(costs.begin(), costs.end(), at) - costs.begin();
    c.values[k] = static_cast<double>(below) / n;
  }
  return c;
}

/// Area under the EEC curve by the trapezoidal rule.
inline double efficacy(const EECCurve& curve) {
  if (curve.grid.size() != curve.values.size() || curve.grid.size() < 2) throw Error("invalid EEC curve");
  double area = 0.0;
  for (std::size_t k = 1; k < curve.grid.size(); ++k) {
    area += 0.5 * (curve.values[k] + curve.values[k - 1]) * (curve.grid[k] - curve.grid[k - 1]);
  }
  return area;
}

inline void write_eec_csv(std::ostream& os, const EECCurve& curve) {
  os << "cost_fraction,cumulative_fraction\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < curve.grid.size(); ++k) os << curve.grid[k] << ',' << curve.values[k] << '\n';
}

struct EvalReport {
  double efficacy = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> per_exit_counts;
  double mean_cost_fraction = 0.0;
  std::size_t n = 0;
  std::optional<double> crafting_seconds;
  std::vector<InferenceRecord> records;
  EECCurve curve;
};

/// Aggregates records against their true labels.
inline EvalReport summarize(std::vector<InferenceRecord> records, std::span<const std::uint32_t> labels,
                            std::size_t num_exits) {
  if (records.size() != labels.size()) throw Error("records and labels differ in length");
  EvalReport rep;
  rep.n = records.size();
  rep.per_exit_counts.assign(num_exits, 0);
  double correct = 0.0, cost = 0.0;
  for (std::size_t s = 0; s < records.size(); ++s) {
    const InferenceRecord& r = records[s];
    if (r.exit_index < 1 || r.exit_index > num_exits) throw Error("record exit index out of range");
    ++rep.per_exit_counts[r.exit_index - 1];
    if (r.predicted_label == labels[s]) correct += 1.0;
    cost += r.cost_fraction;
  }
  rep.accuracy = correct / static_cast<double>(rep.n);
  rep.mean_cost_fraction = cost / static_cast<double>(rep.n);
  rep.curve = build_eec(records);
  rep.efficacy = efficacy(rep.curve);
  rep.records = std::move(records);
  return rep;
}

/// Adaptive inference on every sample, one at a time.
inline EvalReport evaluate(const MultiExitNetwork& net, const ExitPolicy& policy, std::span<const Tensor> inputs,
                           std::span<const std::uint32_t> labels) {
  if (inputs.size() != labels.size()) throw Error("inputs and labels differ in length");
  for (std::uint32_t y : labels) {
    if (y >= net.num_classes()) throw Error("label " + std::to_string(y) + " out of range");
  }
  std::vector<InferenceRecord> records;
  records.reserve(inputs.size());
  for (const Tensor& x : inputs) records.push_back(adaptive_infer(net, policy, x));
  return summarize(std::move(records), labels, net.num_exits());
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline const char* kReportHeader = "tag,efficacy,accuracy,mean_cost,n";

inline std::string report_row(const std::string& tag, const EvalReport& r) {
  return tag + ',' + format_double(r.efficacy) + ',' + format_double(r.accuracy) + ',' +
         format_double(r.mean_cost_fraction) + ',' + std::to_string(r.n);
}

}  // namespace sloth
