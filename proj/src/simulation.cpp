#include "gradma/simulation.hpp"

#include <algorithm>
#include <chrono>

#include "gradma/rng.hpp"

namespace gradma {

Simulation::Simulation(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test) : cfg_(cfg) {
  cfg_.validate();
  train.validate();
  arch_ = {static_cast<int>(train.dim()), cfg_.hidden_dims, train.num_classes, model::Activation::relu};
  arch_.validate();
  partition_ = data::dirichlet_partition(train, cfg_.num_workers, cfg_.omega, cfg_.seed);
  for (int i = 0; i < cfg_.num_workers; ++i) {
    objectives_.push_back(std::make_unique<ShardObjective>(
        arch_, train, partition_.shards[static_cast<std::size_t>(i)],
        derive_seed(cfg_.seed, Stream::batches, {static_cast<std::uint64_t>(i)}),
        static_cast<data::Index>(cfg_.batch_size), cfg_.gradient_mode, cfg_.anchor_cap));
  }
  evaluator_ = [this, &test](const ParamVec& x) { return model::evaluate(arch_, x, test); };
  setup(model::init_params(arch_, cfg_.seed));
}

Simulation::Simulation(const RunConfig& cfg, ParamVec x0, std::vector<std::unique_ptr<LocalObjective>> objectives,
                       Evaluator evaluator)
    : cfg_(cfg), objectives_(std::move(objectives)), evaluator_(std::move(evaluator)) {
  cfg_.validate();
  if (static_cast<int>(objectives_.size()) != cfg_.num_workers)
    throw StructuralError("simulation: need one local objective per worker");
  setup(std::move(x0));
}

void Simulation::setup(ParamVec x0) {
  const bool memory = uses_memory(cfg_.strategy);
  if (memory && cfg_.memory_size > x0.size())
    throw ConfigError("memory_size", "must not exceed the parameter dimension " + std::to_string(x0.size()));
  strategy_ = make_strategy(cfg_, x0.size());
  workers_.resize(static_cast<std::size_t>(cfg_.num_workers));
  for (int i = 0; i < cfg_.num_workers; ++i) {
    auto& w = workers_[static_cast<std::size_t>(i)];
    w.id = i;
    if (strategy_->needs_worker_history()) w.x_prev = x0;
  }
  server_ = ServerState(std::move(x0), memory ? cfg_.memory_size : 0, cfg_.num_workers);
  if (cfg_.record_lemma1) lemma1_.emplace(effective_beta1(cfg_), cfg_.eta_g);
}

RoundRecord Simulation::step() {
  RoundRecord rec;
  rec.round = server_.round;
  rec.active = sample_active(cfg_.num_workers, cfg_.active_workers, cfg_.seed, rec.round);

  CommCounter comm;
  RoundContext ctx{cfg_, objectives_, workers_, server_, comm};
  const ParamVec x_t = server_.x;
  RoundOutcome out;
  try {
    out = strategy_->run_round(ctx, rec.active);
  } catch (const NumericError& e) {
    throw RunAborted(rec.round, e.what());
  }
  if (!server_.x.allFinite()) throw RunAborted(rec.round, "non-finite global parameters");

  rec.uplink_bytes = comm.uplink;
  rec.downlink_bytes = comm.downlink;
  rec.train_loss = out.train_loss;
  rec.qp_g_sweeps = out.qp_g_sweeps;
  rec.qp_l_fallbacks = out.qp_l_fallbacks;
  rec.qp_g_fallback = out.qp_g_fallback;
  rec.gram_drift = out.gram_drift;
  if (lemma1_) rec.lemma1_residual = lemma1_->observe(x_t, server_.x, out.d_tilde);
  return rec;
}

std::vector<MetricsRow> Simulation::run(const std::function<void(const RoundRecord&)>& observer) {
  std::vector<MetricsRow> rows;
  const auto start = std::chrono::steady_clock::now();
  std::optional<double> worst_lemma1;
  while (server_.round < cfg_.rounds) {
    const RoundRecord rec = step();
    if (observer) observer(rec);
    if (rec.lemma1_residual) worst_lemma1 = std::max(worst_lemma1.value_or(0.0), *rec.lemma1_residual);

    const int done = rec.round + 1;
    if (done % cfg_.eval_every != 0 && done != cfg_.rounds) continue;

    MetricsRow row;
    row.round = done;
    if (evaluator_) {
      const auto ev = evaluator_(server_.x);
      row.test_accuracy = ev.accuracy;
      row.test_loss = ev.loss;
      if (!std::isfinite(ev.loss)) throw RunAborted(rec.round, "non-finite test loss");
    }
    row.train_loss = rec.train_loss;
    if (cfg_.record_wall_time)
      row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.uplink_bytes = rec.uplink_bytes;
    row.downlink_bytes = rec.downlink_bytes;
    row.lemma1_residual = worst_lemma1;
    row.qp_g_iterations = rec.qp_g_sweeps;
    rows.push_back(row);
    worst_lemma1.reset();
  }
  return rows;
}

std::vector<MetricsRow> run(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test) {
  Simulation sim(cfg, train, test);
  return sim.run();
}

}  // namespace gradma
