#ifndef GRADMA_FLCORE_HPP
#define GRADMA_FLCORE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gradma/config.hpp"
#include "gradma/data.hpp"
#include "gradma/memory.hpp"
#include "gradma/model.hpp"
#include "gradma/qp.hpp"
#include "gradma/types.hpp"

namespace gradma {

// S distinct workers out of N, uniform without replacement, sorted ascending.
// Depends only on (seed, round).
std::vector<WorkerId> sample_active(int num_workers, int num_active, std::uint64_t seed, int round);

// A worker's view of its local objective f_i.
class LocalObjective {
 public:
  virtual ~LocalObjective() = default;
  virtual bool empty() const = 0;
  // Stochastic gradient at x for local step `step`; repeated calls with the same
  // step use the same samples.
  virtual model::LossGrad<real> step_gradient(const ParamVec& x, std::uint64_t step) const = 0;
  // Gradient at the round's starting point, used as the second constraint column.
  virtual model::LossGrad<real> anchor_gradient(const ParamVec& x, int round) const = 0;
};

// Softmax classifier on a worker's data shard.
class ShardObjective final : public LocalObjective {
 public:
  ShardObjective(const model::Architecture& arch, const data::Dataset& dataset, std::span<const data::Index> shard,
                 std::uint64_t batch_seed, data::Index batch_size, GradientMode mode, int anchor_cap);

  bool empty() const override { return shard_.empty(); }
  model::LossGrad<real> step_gradient(const ParamVec& x, std::uint64_t step) const override;
  model::LossGrad<real> anchor_gradient(const ParamVec& x, int round) const override;

 private:
  const model::Architecture* arch_;
  const data::Dataset* dataset_;
  std::span<const data::Index> shard_;
  std::uint64_t batch_seed_;
  data::Index batch_size_;
  GradientMode mode_;
  int anchor_cap_;
};

struct WorkerState {
  WorkerId id = 0;
  ParamVec x_prev;          // last local iterate; left empty when no strategy needs it
  std::uint64_t step = 0;   // minibatch counter, continues across rounds
};

enum class LocalRule { sgd, proximal, qp_corrected };

struct LocalParams {
  LocalRule rule = LocalRule::sgd;
  double eta_l = 0.1;
  int local_steps = 1;
  double mu = 0.0;
  qp::SolveOptions qp{};
};

struct WorkerResult {
  ParamVec x_final;
  ParamVec update;  // x_t - x_final
  std::optional<double> first_loss;
  int qp_fallbacks = 0;
};

// Local training from x_t. With LocalRule::qp_corrected every step direction is
// projected so that it correlates non-negatively with the gradient at the
// previous iterate (same samples), the anchor gradient at x_t, and x_tau - x_t.
// Empty shards return a zero update.
WorkerResult worker_update(WorkerState& ws, const ParamVec& x_t, const LocalObjective& objective,
                           const LocalParams& params, int round);

struct ServerState {
  ParamVec x;
  ParamVec m_tilde;  // corrected momentum
  int round = 0;
  MemoryState memory;

  ServerState() = default;
  ServerState(ParamVec x0, int memory_size, int num_workers);
};

struct ServerStep {
  ParamVec mean_update;  // d_{t+1}
  ParamVec momentum;     // m_{t+1} before correction
  int qp_sweeps = 0;
  bool qp_fallback = false;
  std::optional<double> gram_drift;
};

struct ServerParams {
  double eta_g = 1.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  qp::SolveOptions qp{};
  int gram_check_every = 100;
};

// Mean of the updates in the given order, divided by their count.
ParamVec mean_update(std::span<const ParamVec> updates);

// Memory reduction for one round; returns the evictions performed.
std::vector<Eviction> mem_red(MemoryState& memory, std::span<const WorkerId> active);

// Momentum step with optional memory correction. With an empty memory this is
// exactly the FedAvgM server step; `active` must already be buffered when the
// memory is enabled.
ServerStep server_update(ServerState& server, std::span<const WorkerId> active, std::span<const ParamVec> updates,
                         const ServerParams& params);

// Residual of u_{t+1} - u_t + eta_g / (1 - beta1) * d~_{t+1}, relative to 1 + ||u_t||,
// where u_t = (x_t - beta1 x_{t-1}) / (1 - beta1) and u_0 = x_0.
class Lemma1Tracker {
 public:
  Lemma1Tracker(double beta1, double eta_g) : beta1_(beta1), eta_g_(eta_g) {}

  // x_t before the round, x_next after it, d_tilde = d + m~ - m.
  double observe(const ParamVec& x_t, const ParamVec& x_next, const ParamVec& d_tilde);

 private:
  double beta1_;
  double eta_g_;
  std::optional<ParamVec> x_before_;
};

}  // namespace gradma

#endif  // GRADMA_FLCORE_HPP
