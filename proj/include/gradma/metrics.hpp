#ifndef GRADMA_METRICS_HPP
#define GRADMA_METRICS_HPP

#include <cstdint>
#include <optional>

namespace gradma {

// One evaluation record. `round` counts completed rounds.
struct MetricsRow {
  int round = 0;
  double test_accuracy = 0;
  double test_loss = 0;
  std::optional<double> train_loss;  // mean first-minibatch loss of the round's workers
  double wall_time = 0;              // seconds since run start; 0 unless record_wall_time
  std::uint64_t uplink_bytes = 0;    // of this round
  std::uint64_t downlink_bytes = 0;  // of this round
  std::optional<double> lemma1_residual;  // worst relative residual since the previous row
  std::optional<int> qp_g_iterations;     // dual sweeps of this round's server correction

  bool operator==(const MetricsRow&) const = default;
};

}  // namespace gradma

#endif  // GRADMA_METRICS_HPP
