#ifndef GRADMA_SIMULATION_HPP
#define GRADMA_SIMULATION_HPP

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gradma/config.hpp"
#include "gradma/data.hpp"
#include "gradma/flcore.hpp"
#include "gradma/metrics.hpp"
#include "gradma/model.hpp"
#include "gradma/strategies.hpp"

namespace gradma {

// Numeric divergence; round() is the 0-based round that failed.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(int round, const std::string& why)
      : std::runtime_error("run aborted in round " + std::to_string(round) + ": " + why), round_(round) {}
  int round() const { return round_; }

 private:
  int round_;
};

struct RoundRecord {
  int round = 0;  // 0-based index of the round just executed
  std::vector<WorkerId> active;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::optional<double> lemma1_residual;
  std::optional<double> train_loss;
  std::optional<int> qp_g_sweeps;
  int qp_l_fallbacks = 0;
  bool qp_g_fallback = false;
  std::optional<double> gram_drift;
};

using Evaluator = std::function<model::Evaluation(const ParamVec&)>;

// The outer federated loop: sample, (reduce memory,) train workers, update the
// server, evaluate. Deterministic in (config, seed).
class Simulation {
 public:
  // Classifier on a Dirichlet partition of `train`, evaluated on `test`. Both
  // datasets must outlive the simulation.
  Simulation(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test);

  // Arbitrary local objectives, one per worker.
  Simulation(const RunConfig& cfg, ParamVec x0, std::vector<std::unique_ptr<LocalObjective>> objectives,
             Evaluator evaluator = {});

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  RoundRecord step();
  std::vector<MetricsRow> run(const std::function<void(const RoundRecord&)>& observer = {});

  const RunConfig& config() const { return cfg_; }
  const ParamVec& params() const { return server_.x; }
  const ServerState& server() const { return server_; }
  const Strategy& strategy() const { return *strategy_; }
  const std::vector<WorkerState>& workers() const { return workers_; }
  const data::Partition& partition() const { return partition_; }
  const model::Architecture& architecture() const { return arch_; }
  Eigen::Index dim() const { return server_.x.size(); }

 private:
  void setup(ParamVec x0);

  RunConfig cfg_;
  model::Architecture arch_;
  data::Partition partition_;
  std::vector<std::unique_ptr<LocalObjective>> objectives_;
  std::vector<WorkerState> workers_;
  ServerState server_;
  std::unique_ptr<Strategy> strategy_;
  std::optional<Lemma1Tracker> lemma1_;
  Evaluator evaluator_;
};

// Convenience wrapper: a fresh simulation for cfg run to completion.
std::vector<MetricsRow> run(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test);

}  // namespace gradma

#endif  // GRADMA_SIMULATION_HPP
