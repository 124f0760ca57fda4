#pragma once

#include <span>
#include <string>

#include "sloth/metrics.hpp"

namespace sloth {

/// Edge device runs the model up to exit `split_exit` (1-based) and forwards
/// the rest to the cloud.
struct PartitionScenario {
  std::size_t split_exit = 1;
  double edge_latency_ms = 0.0;
  double remote_latency_ms = 11.0;
  double adversary_craft_ms = 2.0;

  void validate(std::size_t K) const {
    if (split_exit < 1 || split_exit >= K) throw Error("split exit must satisfy 1 <= s < K");
    if (edge_latency_ms < 0.0 || remote_latency_ms < 0.0 || adversary_craft_ms < 0.0) {
      throw Error("latencies must be non-negative");
    }
  }
};

struct TrafficReport {
  double transmission_fraction = 0.0;
  double avg_latency_ms = 0.0;
  double amplification = 0.0;
};

inline double partition_latency(double transmission_fraction, const PartitionScenario& s) {
  return s.edge_latency_ms + transmission_fraction * s.remote_latency_ms;
}

/// Transmission fraction from inference records: samples that pass every exit up to the split.
inline TrafficReport simulate(std::span<const InferenceRecord> records, const PartitionScenario& s) {
  if (records.empty()) throw Error("no inference records to simulate");
  std::size_t sent = 0;
  for (const InferenceRecord& r : records) {
    if (r.exit_index > s.split_exit) ++sent;
  }
  TrafficReport t;
  t.transmission_fraction = static_cast<double>(sent) / static_cast<double>(records.size());
  t.avg_latency_ms = partition_latency(t.transmission_fraction, s);
  return t;
}

inline TrafficReport simulate(const MultiExitNetwork& net, const ExitPolicy& policy, std::span<const Tensor> inputs,
                              const PartitionScenario& s) {
  s.validate(net.num_exits());
  std::vector<InferenceRecord> records;
  records.reserve(inputs.size());
  for (const Tensor& x : inputs) records.push_back(adaptive_infer(net, policy, x));
  return simulate(records, s);
}

/// Victim latency increase per millisecond the adversary spends crafting.
inline double amplification(const TrafficReport& clean, const TrafficReport& attacked, const PartitionScenario& s) {
  if (!(s.adversary_craft_ms > 0.0)) throw Error("adversary crafting time must be positive");
  return (attacked.avg_latency_ms - clean.avg_latency_ms) / s.adversary_craft_ms;
}

inline const char* kPartitionHeader = "scenario,p,avg_latency_ms,amplification";

inline std::string partition_row(const std::string& scenario, const TrafficReport& t) {
  return scenario + ',' + format_double(t.transmission_fraction) + ',' + format_double(t.avg_latency_ms) + ',' +
         format_double(t.amplification);
}

}  // namespace sloth
