#include "gradma/strategies.hpp"

#include <exception>
#include <thread>

namespace gradma {

LocalParams local_params(const RunConfig& cfg, LocalRule rule) {
  LocalParams p;
  p.rule = (rule == LocalRule::qp_corrected && cfg.disable_local_qp) ? LocalRule::sgd : rule;
  p.eta_l = cfg.eta_l;
  p.local_steps = cfg.local_steps;
  p.mu = cfg.mu;
  p.qp.tol = cfg.qp_tol;
  return p;
}

ServerParams server_params(const RunConfig& cfg) {
  ServerParams p;
  p.eta_g = cfg.eta_g;
  p.beta1 = effective_beta1(cfg);
  p.beta2 = cfg.beta2;
  p.qp.tol = cfg.qp_tol;
  p.gram_check_every = cfg.gram_check_every;
  return p;
}

std::vector<WorkerResult> train_workers(RoundContext& ctx, std::span<const WorkerId> active, const LocalParams& params) {
  const ParamVec& x_t = ctx.server.x;
  const int round = ctx.server.round;
  std::vector<WorkerResult> results(active.size());
  for (std::size_t k = 0; k < active.size(); ++k) ctx.comm.send_down(x_t);

  auto train_one = [&](std::size_t k) {
    const auto id = static_cast<std::size_t>(active[k]);
    results[k] = worker_update(ctx.workers[id], x_t, *ctx.objectives[id], params, round);
  };

  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(ctx.cfg.worker_threads), active.size());
  if (threads <= 1) {
    for (std::size_t k = 0; k < active.size(); ++k) train_one(k);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
          try {
            for (std::size_t k = t; k < active.size(); k += threads) train_one(k);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (const auto& r : results) ctx.comm.send_up(r.update);
  return results;
}

namespace {

std::optional<double> mean_first_loss(const std::vector<WorkerResult>& results) {
  double sum = 0;
  int n = 0;
  for (const auto& r : results)
    if (r.first_loss) {
      sum += *r.first_loss;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::vector<ParamVec> take_updates(std::vector<WorkerResult>& results) {
  std::vector<ParamVec> updates;
  updates.reserve(results.size());
  for (auto& r : results) updates.push_back(std::move(r.update));
  return updates;
}

int count_fallbacks(const std::vector<WorkerResult>& results) {
  int n = 0;
  for (const auto& r : results) n += r.qp_fallbacks;
  return n;
}

}  // namespace

RoundOutcome AveragingStrategy::run_round(RoundContext& ctx, std::span<const WorkerId> active) {
  auto results = train_workers(ctx, active, local_params(ctx.cfg, rule_));
  RoundOutcome out;
  out.train_loss = mean_first_loss(results);
  out.qp_l_fallbacks = count_fallbacks(results);
  const auto updates = take_updates(results);
  auto step = server_update(ctx.server, active, updates, server_params(ctx.cfg));
  out.d_tilde = std::move(step.mean_update);
  return out;
}

RoundOutcome MemoryStrategy::run_round(RoundContext& ctx, std::span<const WorkerId> active) {
  evictions_ = mem_red(ctx.server.memory, active);
  auto results = train_workers(ctx, active, local_params(ctx.cfg, rule_));
  RoundOutcome out;
  out.train_loss = mean_first_loss(results);
  out.qp_l_fallbacks = count_fallbacks(results);
  const auto updates = take_updates(results);
  auto step = server_update(ctx.server, active, updates, server_params(ctx.cfg));
  out.d_tilde = step.mean_update + ctx.server.m_tilde - step.momentum;
  if (ctx.server.memory.capacity() > 0) out.qp_g_sweeps = step.qp_sweeps;
  out.qp_g_fallback = step.qp_fallback;
  out.gram_drift = step.gram_drift;
  return out;
}

MifaState::MifaState(int num_workers, Eigen::Index dim)
    : g_old(static_cast<std::size_t>(num_workers), ParamVec::Zero(dim)),
      d_running(ParamVec::Zero(dim)),
      momentum(ParamVec::Zero(dim)) {}

RoundOutcome MifaStrategy::run_round(RoundContext& ctx, std::span<const WorkerId> active) {
  auto results = train_workers(ctx, active, local_params(ctx.cfg, LocalRule::sgd));
  RoundOutcome out;
  out.train_loss = mean_first_loss(results);

  // Worker side: transmit the change against the previously sent update.
  ParamVec delta_sum = ParamVec::Zero(ctx.server.x.size());
  for (std::size_t k = 0; k < active.size(); ++k) {
    auto& g_old = state_.g_old[static_cast<std::size_t>(active[k])];
    delta_sum += results[k].update - g_old;
    g_old = std::move(results[k].update);
  }

  const int n = static_cast<int>(state_.g_old.size());
  state_.d_running += delta_sum / static_cast<real>(n);
  state_.momentum = effective_beta1(ctx.cfg) * state_.momentum + state_.d_running;
  ctx.server.x.noalias() -= ctx.cfg.eta_g * state_.momentum;
  ctx.server.m_tilde = state_.momentum;
  ++ctx.server.round;
  out.d_tilde = state_.d_running;
  return out;
}

std::unique_ptr<Strategy> make_strategy(const RunConfig& cfg, Eigen::Index dim) {
  switch (cfg.strategy) {
    case StrategyTag::fedavg:
    case StrategyTag::fedavgm:
      return std::make_unique<AveragingStrategy>(cfg.strategy, LocalRule::sgd);
    case StrategyTag::fedprox:
    case StrategyTag::fedproxm:
      return std::make_unique<AveragingStrategy>(cfg.strategy, LocalRule::proximal);
    case StrategyTag::gradma_w:
      return std::make_unique<AveragingStrategy>(cfg.strategy, LocalRule::qp_corrected);
    case StrategyTag::mifa:
    case StrategyTag::mifam:
      return std::make_unique<MifaStrategy>(cfg.strategy, cfg.num_workers, dim);
    case StrategyTag::gradma_s:
      return std::make_unique<MemoryStrategy>(cfg.strategy, LocalRule::sgd);
    case StrategyTag::gradma:
      return std::make_unique<MemoryStrategy>(cfg.strategy, LocalRule::qp_corrected);
  }
  throw std::logic_error("make_strategy: unhandled tag");
}

}  // namespace gradma
