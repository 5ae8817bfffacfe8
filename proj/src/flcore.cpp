#include "gradma/flcore.hpp"

#include <algorithm>
#include <numeric>

#include "gradma/rng.hpp"

namespace gradma {

std::vector<WorkerId> sample_active(int num_workers, int num_active, std::uint64_t seed, int round) {
  if (num_active < 0 || num_active > num_workers) throw std::invalid_argument("sample_active: need 0 <= S <= N");
  std::vector<WorkerId> ids(static_cast<std::size_t>(num_workers));
  std::iota(ids.begin(), ids.end(), 0);
  auto rng = make_rng(seed, Stream::sampling, {static_cast<std::uint64_t>(round)});
  // partial Fisher-Yates
  for (int k = 0; k < num_active; ++k) {
    std::uniform_int_distribution<int> pick(k, num_workers - 1);
    std::swap(ids[static_cast<std::size_t>(k)], ids[static_cast<std::size_t>(pick(rng))]);
  }
  ids.resize(static_cast<std::size_t>(num_active));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---- ShardObjective -------------------------------------------------------------

ShardObjective::ShardObjective(const model::Architecture& arch, const data::Dataset& dataset,
                               std::span<const data::Index> shard, std::uint64_t batch_seed,
                               data::Index batch_size, GradientMode mode, int anchor_cap)
    : arch_(&arch),
      dataset_(&dataset),
      shard_(shard),
      batch_seed_(batch_seed),
      batch_size_(batch_size),
      mode_(mode),
      anchor_cap_(anchor_cap) {}

model::LossGrad<real> ShardObjective::step_gradient(const ParamVec& x, std::uint64_t step) const {
  if (mode_ == GradientMode::full) return model::full_grad(*arch_, x, *dataset_, shard_);
  const auto batch = data::batch_iter(*dataset_, shard_, batch_size_, batch_seed_, step);
  return model::loss_and_grad(*arch_, x, batch);
}

model::LossGrad<real> ShardObjective::anchor_gradient(const ParamVec& x, int round) const {
  const auto cap = static_cast<data::Index>(anchor_cap_);
  if (shard_.size() <= cap) return model::full_grad(*arch_, x, *dataset_, shard_);
  std::vector<data::Index> rows(shard_.begin(), shard_.end());
  auto rng = make_rng(batch_seed_, Stream::anchor, {static_cast<std::uint64_t>(round)});
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(cap);
  std::sort(rows.begin(), rows.end());
  return model::full_grad(*arch_, x, *dataset_, rows);
}

// ---- worker -------------------------------------------------------------------------

WorkerResult worker_update(WorkerState& ws, const ParamVec& x_t, const LocalObjective& objective,
                           const LocalParams& params, int round) {
  WorkerResult res;
  if (objective.empty()) {
    res.x_final = x_t;
    res.update = ParamVec::Zero(x_t.size());
    if (ws.x_prev.size() > 0) ws.x_prev = x_t;
    return res;
  }

  const bool corrected = params.rule == LocalRule::qp_corrected;
  if (corrected && ws.x_prev.size() != x_t.size())
    throw StructuralError("worker_update: QP-corrected steps need the worker's previous iterate");

  ParamVec x = x_t;
  ParamVec x_before = corrected ? ws.x_prev : ParamVec();
  ParamVec anchor;
  Matrix<real> constraints;
  if (corrected) {
    anchor = objective.anchor_gradient(x_t, round).grad;
    constraints.resize(x_t.size(), 3);
  }

  for (int tau = 0; tau < params.local_steps; ++tau, ++ws.step) {
    auto lg = objective.step_gradient(x, ws.step);
    if (tau == 0) res.first_loss = lg.loss;
    ParamVec& g = lg.grad;

    switch (params.rule) {
      case LocalRule::sgd:
        break;
      case LocalRule::proximal:
        g.noalias() += params.mu * (x - x_t);
        break;
      case LocalRule::qp_corrected: {
        constraints.col(0) = objective.step_gradient(x_before, ws.step).grad;
        constraints.col(1) = anchor;
        constraints.col(2) = x - x_t;
        try {
          g = qp::correct(g, constraints, params.qp);
        } catch (const qp::NonConvergence<real>&) {
          ++res.qp_fallbacks;
        }
        x_before = x;
        break;
      }
    }
    x.noalias() -= params.eta_l * g;
  }

  res.update = x_t - x;
  if (ws.x_prev.size() > 0) ws.x_prev = x;
  res.x_final = std::move(x);
  return res;
}

// ---- server ---------------------------------------------------------------------------

ServerState::ServerState(ParamVec x0, int memory_size, int num_workers)
    : x(std::move(x0)), m_tilde(ParamVec::Zero(x.size())), memory(memory_size, num_workers, x.size()) {}

ParamVec mean_update(std::span<const ParamVec> updates) {
  if (updates.empty()) throw StructuralError("mean_update: no updates");
  ParamVec sum = updates[0];
  for (std::size_t k = 1; k < updates.size(); ++k) sum += updates[k];
  return sum / static_cast<real>(updates.size());
}

std::vector<Eviction> mem_red(MemoryState& memory, std::span<const WorkerId> active) { return memory.reduce(active); }

ServerStep server_update(ServerState& server, std::span<const WorkerId> active, std::span<const ParamVec> updates,
                         const ServerParams& params) {
  ServerStep step;
  step.mean_update = mean_update(updates);
  step.momentum = params.beta1 * server.m_tilde + step.mean_update;

  ParamVec corrected = step.momentum;
  MemoryState& mem = server.memory;
  if (mem.capacity() > 0) {
    mem.absorb(active, updates, params.beta2);
    if ((server.round + 1) % params.gram_check_every == 0) {
      step.gram_drift = mem.gram_drift();
      mem.refresh_gram();
    }
    if (mem.size() > 0) {
      const auto D = mem.directions();
      qp::GramSystem<real> sys{mem.gram(), D.transpose() * step.momentum};
      const Vector<real> warm = mem.warm_start();
      try {
        auto sol = qp::solve_dual(sys, params.qp, &warm);
        corrected = qp::recover_primal(step.momentum, D, sol.z);
        step.qp_sweeps = sol.iterations;
        mem.set_warm_start(sol.z);
      } catch (const qp::NonConvergence<real>& e) {
        step.qp_sweeps = e.best().iterations;
        step.qp_fallback = true;
      }
    }
    mem.clear_new();
  }

  server.x.noalias() -= params.eta_g * corrected;
  server.m_tilde = std::move(corrected);
  ++server.round;
  return step;
}

// ---- Lemma 1 -------------------------------------------------------------------------------

double Lemma1Tracker::observe(const ParamVec& x_t, const ParamVec& x_next, const ParamVec& d_tilde) {
  const double scale = 1.0 / (1.0 - beta1_);
  const ParamVec u_t = x_before_ ? ParamVec(scale * (x_t - beta1_ * *x_before_)) : x_t;
  const ParamVec u_next = scale * (x_next - beta1_ * x_t);
  const double residual = ((u_next - u_t) + (eta_g_ * scale) * d_tilde).norm();
  x_before_ = x_t;
  return residual / (1.0 + u_t.norm());
}

}  // namespace gradma
