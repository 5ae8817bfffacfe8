#include "gradma/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "gradma/simulation.hpp"

namespace gradma {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, int line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw std::runtime_error("metrics csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& s, int line) {
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("metrics csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.round << ',' << fmt_double(r.test_accuracy) << ',' << fmt_double(r.test_loss) << ','
       << (r.train_loss ? fmt_double(*r.train_loss) : "") << ',' << fmt_double(r.wall_time) << ','
       << r.uplink_bytes << ',' << r.downlink_bytes << ','
       << (r.lemma1_residual ? fmt_double(*r.lemma1_residual) : "") << ','
       << (r.qp_g_iterations ? std::to_string(*r.qp_g_iterations) : "") << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(os, rows);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw std::runtime_error("metrics csv: unexpected header");
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 9) throw std::runtime_error("metrics csv line " + std::to_string(lineno) + ": expected 9 cells");
    MetricsRow r;
    r.round = parse_int<int>(c[0], lineno);
    r.test_accuracy = parse_double(c[1], lineno);
    r.test_loss = parse_double(c[2], lineno);
    if (!c[3].empty()) r.train_loss = parse_double(c[3], lineno);
    r.wall_time = parse_double(c[4], lineno);
    r.uplink_bytes = parse_int<std::uint64_t>(c[5], lineno);
    r.downlink_bytes = parse_int<std::uint64_t>(c[6], lineno);
    if (!c[7].empty()) r.lemma1_residual = parse_double(c[7], lineno);
    if (!c[8].empty()) r.qp_g_iterations = parse_int<int>(c[8], lineno);
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_metrics_csv(is);
}

std::optional<int> rounds_to_accuracy(std::span<const MetricsRow> metrics, double target) {
  for (const auto& r : metrics)
    if (r.test_accuracy >= target) return r.round;
  return std::nullopt;
}

double top_accuracy(std::span<const MetricsRow> metrics) {
  double best = 0;
  for (const auto& r : metrics) best = std::max(best, r.test_accuracy);
  return best;
}

LoadedData load_data(const DatasetSpec& spec) {
  if (spec.kind == "synthetic") {
    return {data::gen_synthetic(spec.synthetic_classes, spec.synthetic_dim, spec.synthetic_train_per_class,
                                spec.data_seed, 0),
            data::gen_synthetic(spec.synthetic_classes, spec.synthetic_dim, spec.synthetic_test_per_class,
                                spec.data_seed, 1)};
  }
  if (spec.kind == "mnist") {
    std::filesystem::path dir = spec.path;
    if (dir.empty()) {
      const char* env = std::getenv(std::string(kDataDirEnv).c_str());
      if (!env || !*env) throw ConfigError("dataset_path", "mnist needs dataset_path or $GRADMA_DATA_DIR");
      dir = env;
    }
    auto splits = data::load_mnist_dir(dir);
    return {std::move(splits.train), std::move(splits.test)};
  }
  if (spec.kind == "gmlb") {
    if (spec.path.empty()) throw ConfigError("dataset_path", "gmlb needs a train file");
    if (spec.test_path.empty()) throw ConfigError("dataset_test_path", "gmlb needs a test file");
    return {data::load_gmlb(spec.path), data::load_gmlb(spec.test_path)};
  }
  throw ConfigError("dataset", "unknown dataset kind '" + spec.kind + "'");
}

std::string metrics_filename(StrategyTag strategy, std::uint64_t seed) {
  return std::string(to_string(strategy)) + "_seed" + std::to_string(seed) + ".csv";
}

namespace {

// summary.csv holds one row per strategy; re-running a strategy replaces its row.
void update_summary(const std::filesystem::path& path, StrategyTag strategy, const ExperimentResult& res) {
  static constexpr std::string_view header = "strategy,seeds,mean_top_accuracy,std_top_accuracy,failed_seeds";
  std::map<std::string, std::string> rows;
  if (std::ifstream is(path); is) {
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line))
      if (!line.empty()) rows[line.substr(0, line.find(','))] = line;
  }
  std::string seeds, failed;
  for (const auto& s : res.seeds) {
    seeds += (seeds.empty() ? "" : ";") + std::to_string(s.seed);
    if (!s.top_accuracy) failed += (failed.empty() ? "" : ";") + std::to_string(s.seed);
  }
  const std::string name(to_string(strategy));
  rows[name] = name + ',' + seeds + ',' + fmt_double(res.mean_top_accuracy) + ',' +
               fmt_double(res.std_top_accuracy) + ',' + failed;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << header << '\n';
  for (const auto& [_, line] : rows) os << line << '\n';
}

SeedResult run_seed(const ExperimentSpec& spec, const LoadedData& data, std::uint64_t seed) {
  SeedResult res;
  res.seed = seed;
  res.csv = std::filesystem::path(spec.output_dir) / metrics_filename(spec.config.strategy, seed);
  RunConfig cfg = spec.config;
  cfg.seed = seed;
  try {
    const auto rows = run(cfg, data.train, data.test);
    write_metrics_csv(res.csv, rows);
    res.top_accuracy = top_accuracy(rows);
  } catch (const RunAborted& e) {
    res.error = e.what();
  }
  return res;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) { return run_experiment(spec, load_data(spec.dataset)); }

ExperimentResult run_experiment(const ExperimentSpec& spec, const LoadedData& data) {
  spec.validate();
  const std::filesystem::path out = spec.output_dir;
  std::filesystem::create_directories(out);
  {
    const auto cfg_path = out / (std::string(to_string(spec.config.strategy)) + "_config.json");
    std::ofstream os(cfg_path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("output_dir", "not writable: " + out.string());
    os << to_config_text(spec);
  }

  ExperimentResult res;
  res.seeds.resize(spec.seeds.size());
  if (spec.parallel_seeds && spec.seeds.size() > 1) {
    std::vector<std::exception_ptr> errors(spec.seeds.size());
    {
      std::vector<std::jthread> pool;
      for (std::size_t k = 0; k < spec.seeds.size(); ++k)
        pool.emplace_back([&, k] {
          try {
            res.seeds[k] = run_seed(spec, data, spec.seeds[k]);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t k = 0; k < spec.seeds.size(); ++k) res.seeds[k] = run_seed(spec, data, spec.seeds[k]);
  }

  double sum = 0, sq = 0;
  int ok = 0;
  for (const auto& s : res.seeds) {
    if (!s.top_accuracy) {
      ++res.failed;
      continue;
    }
    sum += *s.top_accuracy;
    ++ok;
  }
  if (ok > 0) {
    res.mean_top_accuracy = sum / ok;
    for (const auto& s : res.seeds)
      if (s.top_accuracy) sq += (*s.top_accuracy - res.mean_top_accuracy) * (*s.top_accuracy - res.mean_top_accuracy);
    res.std_top_accuracy = std::sqrt(sq / ok);
  }
  update_summary(out / "summary.csv", spec.config.strategy, res);
  return res;
}

}  // namespace gradma
