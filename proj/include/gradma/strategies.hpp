#ifndef GRADMA_STRATEGIES_HPP
#define GRADMA_STRATEGIES_HPP

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "gradma/config.hpp"
#include "gradma/flcore.hpp"

namespace gradma {

// Bytes moved between server and workers in one round.
struct CommCounter {
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;

  void send_down(const ParamVec& v) { downlink += static_cast<std::uint64_t>(v.size()) * sizeof(real); }
  void send_up(const ParamVec& v) { uplink += static_cast<std::uint64_t>(v.size()) * sizeof(real); }
};

struct RoundContext {
  const RunConfig& cfg;
  std::span<const std::unique_ptr<LocalObjective>> objectives;
  std::vector<WorkerState>& workers;
  ServerState& server;
  CommCounter& comm;
};

struct RoundOutcome {
  ParamVec d_tilde;  // d + m~ - m; the direction entering the u_t recursion
  std::optional<double> train_loss;
  std::optional<int> qp_g_sweeps;
  int qp_l_fallbacks = 0;
  bool qp_g_fallback = false;
  std::optional<double> gram_drift;
};

class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual StrategyTag tag() const = 0;
  // Whether workers must keep their last local iterate between rounds.
  virtual bool needs_worker_history() const { return false; }
  // One communication round for the sampled workers; mutates server and worker state.
  virtual RoundOutcome run_round(RoundContext& ctx, std::span<const WorkerId> active) = 0;
};

// fedavg, fedprox, fedavgm, fedproxm and gradma_w: local SGD (plain, proximal
// or QP-corrected) followed by an averaged momentum step.
class AveragingStrategy final : public Strategy {
 public:
  AveragingStrategy(StrategyTag tag, LocalRule rule) : tag_(tag), rule_(rule) {}
  StrategyTag tag() const override { return tag_; }
  bool needs_worker_history() const override { return rule_ == LocalRule::qp_corrected; }
  RoundOutcome run_round(RoundContext& ctx, std::span<const WorkerId> active) override;

 private:
  StrategyTag tag_;
  LocalRule rule_;
};

// gradma_s and gradma: memory reduction, local training, memory-corrected momentum.
class MemoryStrategy final : public Strategy {
 public:
  MemoryStrategy(StrategyTag tag, LocalRule rule) : tag_(tag), rule_(rule) {}
  StrategyTag tag() const override { return tag_; }
  bool needs_worker_history() const override { return rule_ == LocalRule::qp_corrected; }
  RoundOutcome run_round(RoundContext& ctx, std::span<const WorkerId> active) override;

  const std::vector<Eviction>& last_evictions() const { return evictions_; }

 private:
  StrategyTag tag_;
  LocalRule rule_;
  std::vector<Eviction> evictions_;
};

struct MifaState {
  std::vector<ParamVec> g_old;  // latest transmitted update per worker
  ParamVec d_running;           // mean of g_old
  ParamVec momentum;

  MifaState() = default;
  MifaState(int num_workers, Eigen::Index dim);
};

// mifa and mifam: the server averages the latest update of every worker.
class MifaStrategy final : public Strategy {
 public:
  MifaStrategy(StrategyTag tag, int num_workers, Eigen::Index dim) : tag_(tag), state_(num_workers, dim) {}
  StrategyTag tag() const override { return tag_; }
  RoundOutcome run_round(RoundContext& ctx, std::span<const WorkerId> active) override;

  const MifaState& state() const { return state_; }

 private:
  StrategyTag tag_;
  MifaState state_;
};

std::unique_ptr<Strategy> make_strategy(const RunConfig& cfg, Eigen::Index dim);

LocalParams local_params(const RunConfig& cfg, LocalRule rule);
ServerParams server_params(const RunConfig& cfg);

// Trains the active workers (in parallel when cfg.worker_threads > 1), counting
// one model download and one update upload per worker.
std::vector<WorkerResult> train_workers(RoundContext& ctx, std::span<const WorkerId> active, const LocalParams& params);

}  // namespace gradma

#endif  // GRADMA_STRATEGIES_HPP
