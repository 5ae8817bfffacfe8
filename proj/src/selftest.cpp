#include "gradma/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "gradma/data.hpp"
#include "gradma/flcore.hpp"
#include "gradma/harness.hpp"
#include "gradma/memory.hpp"
#include "gradma/model.hpp"
#include "gradma/qp.hpp"
#include "gradma/rng.hpp"
#include "gradma/simulation.hpp"

namespace gradma::selftest {

namespace {

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

CheckResult named(int id, std::string name) {
  CheckResult r;
  r.id = id;
  r.name = std::move(name);
  return r;
}

CheckResult finish(CheckResult r, const Timer& t, double budget) {
  r.seconds = t.seconds();
  if (r.passed && r.seconds > budget) {
    r.passed = false;
    r.detail += "; exceeded the " + sci(budget) + " s budget";
  }
  return r;
}

data::Dataset small_synthetic(std::uint64_t stream) { return data::gen_synthetic(10, 20, 60, 7, stream); }

RunConfig small_config(StrategyTag tag, std::uint64_t seed) {
  RunConfig c;
  c.strategy = tag;
  c.eta_l = 0.05;
  c.eta_g = 1.0;
  c.local_steps = 3;
  c.num_workers = 20;
  c.active_workers = 5;
  c.rounds = 30;
  c.omega = 0.5;
  c.batch_size = 16;
  c.seed = seed;
  c.hidden_dims = {16};
  c.eval_every = 10;
  return c;
}

// Largest per-coordinate gap between two global trajectories, round by round.
double trajectory_gap(const RunConfig& a, const RunConfig& b, const data::Dataset& train, const data::Dataset& test) {
  Simulation sa(a, train, test), sb(b, train, test);
  double gap = 0;
  for (int t = 0; t < a.rounds; ++t) {
    sa.step();
    sb.step();
    gap = std::max(gap, (sa.params() - sb.params()).cwiseAbs().maxCoeff());
  }
  return gap;
}

}  // namespace

CheckResult qp_oracle_equivalence(int instances, std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(1, "qp oracle equivalence");
  auto rng = make_rng(seed, Stream::qp_fuzz);
  std::uniform_int_distribution<int> dim_dist(1, 8), con_dist(0, 4);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution zero_col(0.1);

  double worst_gap = 0, worst_feas = 0, worst_slack = 0;
  int bad = 0;
  for (int k = 0; k < instances; ++k) {
    const int d = dim_dist(rng), C = con_dist(rng);
    Vector<real> p(d);
    Matrix<real> M(d, C);
    for (auto& v : p) v = normal(rng);
    for (int j = 0; j < C; ++j) {
      for (int i = 0; i < d; ++i) M(i, j) = normal(rng);
      if (zero_col(rng)) M.col(j).setZero();
    }
    const auto sol = qp::correct_with_dual(p, M);
    const Vector<real> oracle = qp::oracle_solve(p, M);
    const double scale = 1 + p.norm();
    const double gap = (sol.corrected - oracle).norm() / scale;
    double feas = 0, slack = 0;
    for (int j = 0; j < C; ++j) {
      const double ip = sol.corrected.dot(M.col(j));
      const double colscale = 1 + p.norm() * M.col(j).norm();
      feas = std::max(feas, std::max(0.0, -ip) / colscale);
      feas = std::max(feas, std::max(0.0, -sol.dual.z(j)));
      slack = std::max(slack, std::abs(sol.dual.z(j) * ip) / (scale * scale));
    }
    worst_gap = std::max(worst_gap, gap);
    worst_feas = std::max(worst_feas, feas);
    worst_slack = std::max(worst_slack, slack);
    if (gap > 1e-6 || feas > 1e-6 || slack > 1e-6) ++bad;
  }
  r.passed = bad == 0;
  r.detail = std::to_string(instances) + " instances, " + std::to_string(bad) + " failing; max gap " + sci(worst_gap) +
             ", feasibility " + sci(worst_feas) + ", slackness " + sci(worst_slack);
  return finish(r, timer, 10);
}

CheckResult gradient_correctness(int coordinates, std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(2, "gradient correctness");
  using LD = long double;
  const std::vector<model::Architecture> shapes{{784, {}, 10}, {784, {200, 200, 200}, 10}};
  const std::vector<std::string> names{"logistic", "784-200-200-200-10"};

  double worst = 0;
  std::string where;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const auto& arch = shapes[s];
    auto rng = make_rng(seed, Stream::qp_fuzz, {100 + s});
    std::normal_distribution<double> normal;
    const int n = 8;
    RowMatrix<real> X(n, arch.input_dim);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = normal(rng);
    std::vector<data::Label> y(n);
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % arch.num_classes;

    ParamVec params = model::init_params(arch, seed);
    for (auto& v : params) v += 0.01 * normal(rng);  // nonzero biases
    const auto analytic = model::loss_and_grad(arch, params, X, y).grad;

    // Central differences evaluated in extended precision.
    const Vector<LD> pl = params.cast<LD>();
    const RowMatrix<LD> Xl = X.cast<LD>();
    std::uniform_int_distribution<Eigen::Index> coord(0, params.size() - 1);
    const LD h = 1e-5L;
    for (int c = 0; c < coordinates; ++c) {
      const Eigen::Index i = coord(rng);
      Vector<LD> plus = pl, minus = pl;
      plus(i) += h;
      minus(i) -= h;
      const LD fd = (model::loss_and_grad(arch, plus, Xl, y).loss - model::loss_and_grad(arch, minus, Xl, y).loss) /
                    (2 * h);
      const double a = analytic(i), f = static_cast<double>(fd);
      const double denom = std::max({std::abs(a), std::abs(f), 1e-12});
      const double rel = std::abs(a - f) / denom;
      if (rel > worst) {
        worst = rel;
        where = names[s] + " coordinate " + std::to_string(i);
      }
    }
  }
  r.passed = worst <= 1e-5;
  r.detail = "max relative error " + sci(worst) + (where.empty() ? "" : " at " + where);
  return finish(r, timer, 30);
}

CheckResult equivalence_lattice(std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(3, "equivalence lattice");
  const auto train = small_synthetic(0), test = small_synthetic(1);

  auto fedavg = small_config(StrategyTag::fedavg, seed);
  auto fedprox = small_config(StrategyTag::fedprox, seed);
  fedprox.mu = 0;
  auto fedavgm0 = small_config(StrategyTag::fedavgm, seed);
  fedavgm0.beta1 = 0;
  auto fedavgm = small_config(StrategyTag::fedavgm, seed);
  fedavgm.beta1 = 0.5;
  fedavgm.eta_g = 0.8;
  auto gradma_s = fedavgm;
  gradma_s.strategy = StrategyTag::gradma_s;
  gradma_s.memory_size = 0;
  gradma_s.beta2 = 0.5;
  auto mifa = small_config(StrategyTag::mifa, seed);
  auto mifam = small_config(StrategyTag::mifam, seed);
  mifam.beta1 = 0;

  struct Pair {
    std::string name;
    RunConfig a, b;
  };
  const std::vector<Pair> pairs{{"fedprox(mu=0)~fedavg", fedprox, fedavg},
                                {"fedavgm(beta1=0)~fedavg", fedavgm0, fedavg},
                                {"gradma_s(m=0)~fedavgm", gradma_s, fedavgm},
                                {"mifam(beta1=0)~mifa", mifam, mifa}};
  r.passed = true;
  for (const auto& p : pairs) {
    const double gap = trajectory_gap(p.a, p.b, train, test);
    if (gap > 1e-12) r.passed = false;
    r.detail += (r.detail.empty() ? "" : ", ") + p.name + " " + sci(gap);
  }
  return finish(r, timer, 60);
}

CheckResult lemma1_identity(std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(4, "lemma 1 identity");
  const auto train = small_synthetic(0), test = small_synthetic(1);
  auto cfg = small_config(StrategyTag::gradma, seed);
  cfg.rounds = 50;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.5;
  cfg.memory_size = 10;
  cfg.record_lemma1 = true;
  Simulation sim(cfg, train, test);
  double worst = 0;
  int rounds = 0, corrected = 0;
  sim.run([&](const RoundRecord& rec) {
    ++rounds;
    if (rec.lemma1_residual) worst = std::max(worst, *rec.lemma1_residual);
    if (rec.qp_g_sweeps && *rec.qp_g_sweeps > 0) ++corrected;
  });
  r.passed = rounds == cfg.rounds && worst <= 1e-8;
  r.detail = std::to_string(rounds) + " rounds (" + std::to_string(corrected) + " with an active memory correction), max residual " +
             sci(worst);
  return finish(r, timer, 60);
}

CheckResult memory_reduction(int rounds, std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(5, "memory reduction invariants");
  const int N = 100, S = 10;
  r.passed = true;
  long long evictions = 0;
  for (int m : {10, 20, 100}) {
    MemoryState mem(m, N, 1);
    std::string failure;
    for (int t = 0; t < rounds && failure.empty(); ++t) {
      const auto active = sample_active(N, S, seed + static_cast<std::uint64_t>(m), t);
      const auto ev = mem.reduce(active);
      evictions += static_cast<long long>(ev.size());
      for (const auto& e : ev) {
        if (std::binary_search(active.begin(), active.end(), e.evicted)) failure = "evicted an active worker";
        if (mem.counter(e.evicted) != 0) failure = "evicted counter not reset";
        if (mem.contains(e.evicted)) failure = "evicted worker still buffered";
      }
      if (mem.size() > m) failure = "buffer exceeds capacity";
      for (WorkerId id : active)
        if (!mem.contains(id)) failure = "active worker not buffered";
      std::vector<ParamVec> updates(active.size(), ParamVec::Ones(1));
      mem.absorb(active, updates, 0.5);
      mem.clear_new();
      // The memory's key set is exactly the buffer.
      const auto& buf = mem.buffered();
      const std::set<WorkerId> keys(buf.begin(), buf.end());
      if (keys.size() != buf.size()) failure = "duplicate buffer entry";
      for (WorkerId id = 0; id < N; ++id) {
        const bool in_buf = keys.count(id) != 0;
        if (in_buf != mem.contains(id)) failure = "key set differs from buffer";
        if (in_buf && buf[static_cast<std::size_t>(mem.slot(id))] != id) failure = "slot map inconsistent";
      }
      if (failure.empty() && mem.columns().cols() != static_cast<Eigen::Index>(buf.size())) failure = "column count";
      if (!failure.empty()) failure = "m=" + std::to_string(m) + " round " + std::to_string(t) + ": " + failure;
    }
    if (!failure.empty()) {
      r.passed = false;
      r.detail += failure + "; ";
    }
  }
  r.detail += std::to_string(rounds) + " rounds per memory size, " + std::to_string(evictions) + " evictions checked";
  return finish(r, timer, 10);
}

CheckResult partition_correctness() {
  Timer timer;
  CheckResult r = named(6, "partition correctness");
  const int N = 100, classes = 10, per_class = 6000;
  std::vector<data::Label> labels;
  for (int k = 0; k < classes; ++k) labels.insert(labels.end(), per_class, k);

  r.passed = true;
  std::vector<double> entropy;
  for (double omega : {1.0, 0.1, 0.01}) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto part = data::dirichlet_partition(labels, classes, N, omega, seed);
      std::vector<int> seen(labels.size(), 0);
      double mean = 0;
      for (const auto& shard : part.shards) {
        for (auto i : shard) ++seen[i];
        mean += data::label_entropy(labels, classes, shard);
      }
      if (part.shards.size() != static_cast<std::size_t>(N) ||
          !std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; })) {
        r.passed = false;
        r.detail += "omega " + sci(omega) + " seed " + std::to_string(seed) + " not a partition; ";
      }
      total += mean / N;
    }
    entropy.push_back(total / 10);
  }
  for (std::size_t k = 1; k < entropy.size(); ++k)
    if (entropy[k] > entropy[k - 1]) r.passed = false;
  r.detail += "mean shard entropy (nats) at omega 1, 0.1, 0.01: " + sci(entropy[0]) + ", " + sci(entropy[1]) + ", " +
              sci(entropy[2]);
  return finish(r, timer, 10);
}

CheckResult communication_accounting(std::uint64_t seed) {
  Timer timer;
  CheckResult r = named(8, "communication accounting");
  const auto train = small_synthetic(0), test = small_synthetic(1);
  r.passed = true;
  int checked = 0;
  for (StrategyTag tag : all_strategies()) {
    for (int S : {1, 5, 20}) {
      auto cfg = small_config(tag, seed);
      cfg.rounds = 4;
      cfg.active_workers = S;
      cfg.omega = 0.01;  // leaves some shards empty
      cfg.beta1 = 0.5;
      cfg.beta2 = 0.5;
      cfg.mu = 0.1;
      cfg.memory_size = uses_memory(tag) ? S : 0;
      Simulation sim(cfg, train, test);
      const auto expect = static_cast<std::uint64_t>(S) * static_cast<std::uint64_t>(sim.dim()) * 8;
      sim.run([&](const RoundRecord& rec) {
        ++checked;
        if (rec.uplink_bytes != expect || rec.downlink_bytes != expect) {
          r.passed = false;
          r.detail += std::string(to_string(tag)) + " S=" + std::to_string(S) + " round " +
                      std::to_string(rec.round) + " moved " + std::to_string(rec.uplink_bytes) + "/" +
                      std::to_string(rec.downlink_bytes) + " bytes, expected " + std::to_string(expect) + "; ";
        }
      });
    }
  }
  r.detail += std::to_string(checked) + " rounds checked across " + std::to_string(all_strategies().size()) +
              " strategies";
  return finish(r, timer, 60);
}

CheckResult determinism(const std::filesystem::path& scratch) {
  Timer timer;
  CheckResult r = named(9, "determinism");
  r.passed = true;
  ExperimentSpec spec;
  spec.config = small_config(StrategyTag::gradma, 0);
  spec.config.memory_size = 8;
  spec.config.beta1 = 0.5;
  spec.config.beta2 = 0.5;
  spec.config.eval_every = 1;
  spec.dataset.synthetic_train_per_class = 60;
  spec.dataset.synthetic_test_per_class = 30;
  spec.seeds = {0, 1};

  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };

  std::vector<std::string> first;
  int compared = 0;
  for (int pass = 0; pass < 2; ++pass) {
    spec.output_dir = (scratch / ("determinism_" + std::to_string(pass))).string();
    std::filesystem::remove_all(spec.output_dir);
    const auto res = run_experiment(spec);
    for (std::size_t k = 0; k < res.seeds.size(); ++k) {
      const auto bytes = read_all(res.seeds[k].csv);
      if (pass == 0) {
        first.push_back(bytes);
      } else {
        ++compared;
        if (bytes.empty() || bytes != first[k]) {
          r.passed = false;
          r.detail += res.seeds[k].csv.filename().string() + " differs; ";
        }
      }
    }
  }
  r.detail += std::to_string(compared) + " CSV pairs compared byte for byte";
  return finish(r, timer, 60);
}

MnistPlan MnistPlan::defaults() {
  MnistPlan plan;
  plan.cells = {
      // Best single-seed cells of a sweep over the learning-rate grid (see README).
      {StrategyTag::fedavg, 1.0, 0.01, 10.0, 0.0, 0.0, 0},
      {StrategyTag::gradma, 1.0, 0.1, 1.0, 0.9, 0.5, 100},
      {StrategyTag::fedavg, 0.01, 0.01, 10.0, 0.0, 0.0, 0},
      {StrategyTag::gradma, 0.01, 0.1, 1.0, 0.9, 0.5, 100},
  };
  return plan;
}

CheckResult mnist_reproduction(const std::filesystem::path& data_dir, const MnistPlan& plan,
                               const std::function<void(const std::string&)>& log) {
  Timer timer;
  CheckResult r = named(7, "mnist reproduction");
  if (data_dir.empty() || !std::filesystem::exists(data_dir / "train-images-idx3-ubyte")) {
    r.skipped = true;
    r.detail = "no MNIST files under '" + data_dir.string() + "'";
    return r;
  }
  const auto splits = data::load_mnist_dir(data_dir);

  auto mean_top = [&](const MnistCell& cell) {
    const auto& seeds = cell.omega == 1.0 ? plan.iid_seeds : plan.seeds;
    double sum = 0;
    for (auto seed : seeds) {
      RunConfig cfg;
      cfg.strategy = cell.strategy;
      cfg.eta_l = cell.eta_l;
      cfg.eta_g = cell.eta_g;
      cfg.beta1 = cell.beta1;
      cfg.beta2 = cell.beta2;
      cfg.memory_size = cell.memory_size;
      cfg.local_steps = 5;
      cfg.num_workers = 100;
      cfg.active_workers = 10;
      cfg.rounds = plan.rounds;
      cfg.batch_size = 64;
      cfg.omega = cell.omega;
      cfg.hidden_dims = plan.hidden_dims;
      cfg.eval_every = plan.eval_every;
      cfg.record_lemma1 = false;
      cfg.worker_threads = plan.worker_threads;
      cfg.seed = seed;
      Timer run_timer;
      double top = 0;
      try {
        top = top_accuracy(run(cfg, splits.train, splits.test));
      } catch (const RunAborted& e) {
        if (log) log(std::string(to_string(cell.strategy)) + " aborted: " + e.what());
      }
      if (log)
        log(std::string(to_string(cell.strategy)) + " omega=" + sci(cell.omega) + " seed=" + std::to_string(seed) +
            " top=" + sci(100 * top) + "% in " + sci(run_timer.seconds()) + " s");
      sum += top;
    }
    return sum / static_cast<double>(seeds.size());
  };

  auto find = [&](StrategyTag tag, double omega) -> const MnistCell& {
    for (const auto& c : plan.cells)
      if (c.strategy == tag && c.omega == omega) return c;
    throw std::invalid_argument("mnist plan lacks a cell");
  };

  const double avg_iid = mean_top(find(StrategyTag::fedavg, 1.0));
  const double gma_iid = mean_top(find(StrategyTag::gradma, 1.0));
  const double avg_skew = mean_top(find(StrategyTag::fedavg, 0.01));
  const double gma_skew = mean_top(find(StrategyTag::gradma, 0.01));

  const bool a = avg_iid >= 0.97 && gma_iid >= avg_iid - 0.005;
  const bool b = gma_skew - avg_skew >= 0.10;
  r.passed = a && b;
  r.detail = "omega=1: fedavg " + sci(100 * avg_iid) + "%, gradma " + sci(100 * gma_iid) + "% (" + (a ? "ok" : "FAIL") +
             "); omega=0.01: fedavg " + sci(100 * avg_skew) + "%, gradma " + sci(100 * gma_skew) + "% (" +
             (b ? "ok" : "FAIL") + ")";
  r.seconds = timer.seconds();
  return r;
}

std::vector<CheckResult> run_fast(const std::filesystem::path& scratch) {
  return {qp_oracle_equivalence(), gradient_correctness(), equivalence_lattice(),      lemma1_identity(),
          memory_reduction(),      partition_correctness(), communication_accounting(), determinism(scratch)};
}

std::string format(const CheckResult& r) {
  std::ostringstream os;
  os << "criterion " << r.id << " [" << (r.skipped ? "SKIP" : r.passed ? "PASS" : "FAIL") << "] " << r.name << ": "
     << r.detail;
  char buf[32];
  std::snprintf(buf, sizeof buf, " (%.2f s)", r.seconds);
  os << buf;
  return os.str();
}

}  // namespace gradma::selftest
