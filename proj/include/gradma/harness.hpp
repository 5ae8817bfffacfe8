#ifndef GRADMA_HARNESS_HPP
#define GRADMA_HARNESS_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradma/config.hpp"
#include "gradma/data.hpp"
#include "gradma/metrics.hpp"

namespace gradma {

// Header row of the metrics CSV: the MetricsRow field names in declaration order.
inline constexpr std::string_view kMetricsHeader =
    "round,test_accuracy,test_loss,train_loss,wall_time,uplink_bytes,downlink_bytes,lemma1_residual,qp_g_iterations";

// Floats are written with 17 significant digits, absent optionals as empty cells.
void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Round of the first row with test_accuracy >= target, or nullopt ("not reached").
std::optional<int> rounds_to_accuracy(std::span<const MetricsRow> metrics, double target);

double top_accuracy(std::span<const MetricsRow> metrics);

struct LoadedData {
  data::Dataset train;
  data::Dataset test;
};

// Resolves the dataset selector. MNIST falls back to $GRADMA_DATA_DIR when no
// path is configured.
LoadedData load_data(const DatasetSpec& spec);

struct SeedResult {
  std::uint64_t seed = 0;
  std::filesystem::path csv;
  std::optional<double> top_accuracy;  // empty when the run aborted
  std::string error;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  double mean_top_accuracy = 0;  // over successful seeds
  double std_top_accuracy = 0;   // population std over successful seeds
  int failed = 0;
};

std::string metrics_filename(StrategyTag strategy, std::uint64_t seed);

// Runs every seed, writing <out>/<strategy>_seed<k>.csv, <out>/config.json (the
// resolved spec) and appending a row to <out>/summary.csv.
ExperimentResult run_experiment(const ExperimentSpec& spec);
ExperimentResult run_experiment(const ExperimentSpec& spec, const LoadedData& data);

}  // namespace gradma

#endif  // GRADMA_HARNESS_HPP
