#include "gradma/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gradma {

namespace {

constexpr std::pair<StrategyTag, std::string_view> kStrategyNames[] = {
    {StrategyTag::fedavg, "fedavg"},     {StrategyTag::fedprox, "fedprox"},   {StrategyTag::fedavgm, "fedavgm"},
    {StrategyTag::fedproxm, "fedproxm"}, {StrategyTag::mifa, "mifa"},         {StrategyTag::mifam, "mifam"},
    {StrategyTag::gradma_w, "gradma_w"}, {StrategyTag::gradma_s, "gradma_s"}, {StrategyTag::gradma, "gradma"},
};

}  // namespace

std::string_view to_string(StrategyTag tag) {
  for (const auto& [t, name] : kStrategyNames)
    if (t == tag) return name;
  return "unknown";
}

StrategyTag parse_strategy(std::string_view name) {
  for (const auto& [t, n] : kStrategyNames)
    if (n == name) return t;
  throw ConfigError("strategy", "unknown strategy '" + std::string(name) + "'");
}

const std::vector<StrategyTag>& all_strategies() {
  static const std::vector<StrategyTag> tags = [] {
    std::vector<StrategyTag> v;
    for (const auto& [t, n] : kStrategyNames) v.push_back(t);
    return v;
  }();
  return tags;
}

std::string_view to_string(GradientMode mode) { return mode == GradientMode::full ? "full" : "minibatch"; }

bool uses_memory(StrategyTag tag) { return tag == StrategyTag::gradma || tag == StrategyTag::gradma_s; }

bool uses_local_qp(StrategyTag tag) { return tag == StrategyTag::gradma || tag == StrategyTag::gradma_w; }

double effective_beta1(const RunConfig& cfg) {
  switch (cfg.strategy) {
    case StrategyTag::fedavgm:
    case StrategyTag::fedproxm:
    case StrategyTag::mifam:
    case StrategyTag::gradma_s:
    case StrategyTag::gradma:
      return cfg.beta1;
    default:
      return 0.0;
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError(key, msg);
  };
  require(eta_l > 0, "eta_l", "must be > 0");
  require(eta_g > 0, "eta_g", "must be > 0");
  require(beta1 >= 0 && beta1 < 1, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "beta2", "must lie in [0, 1)");
  require(mu >= 0, "mu", "must be >= 0");
  require(local_steps >= 1, "local_steps", "must be >= 1");
  require(num_workers >= 1, "num_workers", "must be >= 1");
  require(active_workers >= 1 && active_workers <= num_workers, "active_workers", "must satisfy 1 <= S <= num_workers");
  require(memory_size == 0 || (memory_size >= active_workers && memory_size <= num_workers), "memory_size",
          "must be 0 or satisfy active_workers <= m <= num_workers");
  require(rounds >= 0, "rounds", "must be >= 0");
  require(omega > 0, "omega", "must be > 0");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(anchor_cap >= 1, "anchor_cap", "must be >= 1");
  require(qp_tol > 0, "qp_tol", "must be > 0");
  require(gram_check_every >= 1, "gram_check_every", "must be >= 1");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(worker_threads >= 1, "worker_threads", "must be >= 1");
  for (int h : hidden_dims) require(h >= 1, "hidden_dims", "widths must be >= 1");
}

void ExperimentSpec::validate() const {
  config.validate();
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (dataset.kind != "synthetic" && dataset.kind != "mnist" && dataset.kind != "gmlb")
    throw ConfigError("dataset", "must be one of synthetic, mnist, gmlb");
  if (dataset.kind == "gmlb" && (dataset.path.empty() || dataset.test_path.empty()))
    throw ConfigError("dataset_path", "gmlb datasets need dataset_path and dataset_test_path");
  if (dataset.synthetic_classes < 1 || dataset.synthetic_dim < 1 || dataset.synthetic_train_per_class < 1 ||
      dataset.synthetic_test_per_class < 1)
    throw ConfigError("synthetic_classes", "synthetic dataset sizes must be >= 1");
}

namespace {

using nlohmann::json;

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "wrong value type");
  }
}

struct Field {
  std::function<void(ExperimentSpec&, const json&)> read;
  std::function<void(const ExperimentSpec&, json&)> write;
};

#define GRADMA_FIELD(key, member, type)                                                   \
  {                                                                                        \
    key, Field {                                                                           \
      [](ExperimentSpec& s, const json& v) { s.member = get_as<type>(v, key); },           \
          [](const ExperimentSpec& s, json& out) { out[key] = s.member; }                 \
    }                                                                                      \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"strategy",
       {[](ExperimentSpec& s, const json& v) { s.config.strategy = parse_strategy(get_as<std::string>(v, "strategy")); },
        [](const ExperimentSpec& s, json& out) { out["strategy"] = std::string(to_string(s.config.strategy)); }}},
      {"gradient_mode",
       {[](ExperimentSpec& s, const json& v) {
          const auto m = get_as<std::string>(v, "gradient_mode");
          if (m == "full")
            s.config.gradient_mode = GradientMode::full;
          else if (m == "minibatch")
            s.config.gradient_mode = GradientMode::minibatch;
          else
            throw ConfigError("gradient_mode", "must be 'minibatch' or 'full'");
        },
        [](const ExperimentSpec& s, json& out) { out["gradient_mode"] = std::string(to_string(s.config.gradient_mode)); }}},
      GRADMA_FIELD("eta_l", config.eta_l, double),
      GRADMA_FIELD("eta_g", config.eta_g, double),
      GRADMA_FIELD("beta1", config.beta1, double),
      GRADMA_FIELD("beta2", config.beta2, double),
      GRADMA_FIELD("mu", config.mu, double),
      GRADMA_FIELD("local_steps", config.local_steps, int),
      GRADMA_FIELD("active_workers", config.active_workers, int),
      GRADMA_FIELD("num_workers", config.num_workers, int),
      GRADMA_FIELD("memory_size", config.memory_size, int),
      GRADMA_FIELD("rounds", config.rounds, int),
      GRADMA_FIELD("omega", config.omega, double),
      GRADMA_FIELD("batch_size", config.batch_size, int),
      GRADMA_FIELD("hidden_dims", config.hidden_dims, std::vector<int>),
      GRADMA_FIELD("anchor_cap", config.anchor_cap, int),
      GRADMA_FIELD("disable_local_qp", config.disable_local_qp, bool),
      GRADMA_FIELD("qp_tol", config.qp_tol, double),
      GRADMA_FIELD("gram_check_every", config.gram_check_every, int),
      GRADMA_FIELD("eval_every", config.eval_every, int),
      GRADMA_FIELD("record_lemma1", config.record_lemma1, bool),
      GRADMA_FIELD("record_wall_time", config.record_wall_time, bool),
      GRADMA_FIELD("worker_threads", config.worker_threads, int),
      GRADMA_FIELD("seeds", seeds, std::vector<std::uint64_t>),
      GRADMA_FIELD("output_dir", output_dir, std::string),
      GRADMA_FIELD("parallel_seeds", parallel_seeds, bool),
      GRADMA_FIELD("dataset", dataset.kind, std::string),
      GRADMA_FIELD("dataset_path", dataset.path, std::string),
      GRADMA_FIELD("dataset_test_path", dataset.test_path, std::string),
      GRADMA_FIELD("synthetic_classes", dataset.synthetic_classes, int),
      GRADMA_FIELD("synthetic_dim", dataset.synthetic_dim, int),
      GRADMA_FIELD("synthetic_train_per_class", dataset.synthetic_train_per_class, int),
      GRADMA_FIELD("synthetic_test_per_class", dataset.synthetic_test_per_class, int),
      GRADMA_FIELD("data_seed", dataset.data_seed, std::uint64_t),
  };
  return table;
}

#undef GRADMA_FIELD

const std::vector<std::string> kRequired = {"strategy",       "eta_l",       "eta_g", "local_steps",
                                            "active_workers", "num_workers", "rounds"};

}  // namespace

ExperimentSpec parse_config_text(const std::string& text, const ConfigOverrides& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config", "top level must be an object");

  ExperimentSpec spec;
  const auto& table = fields();
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") {
      spec.seeds = {get_as<std::uint64_t>(value, "seed")};
      continue;
    }
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key, "unknown key");
    it->second.read(spec, value);
  }
  for (const auto& key : kRequired)
    if (!doc.contains(key)) throw ConfigError(key, "missing required key");
  if (doc.contains("seed") && doc.contains("seeds")) throw ConfigError("seed", "give either seed or seeds, not both");

  if (overrides.seed) spec.seeds = {*overrides.seed};
  if (overrides.strategy) spec.config.strategy = parse_strategy(*overrides.strategy);
  if (overrides.output_dir) spec.output_dir = *overrides.output_dir;
  if (overrides.eval_every) spec.config.eval_every = *overrides.eval_every;
  spec.config.seed = spec.seeds.empty() ? 0 : spec.seeds.front();

  spec.validate();
  return spec;
}

ExperimentSpec parse_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string to_config_text(const ExperimentSpec& spec) {
  json out = json::object();
  for (const auto& [key, field] : fields()) field.write(spec, out);
  return out.dump(2) + "\n";
}

}  // namespace gradma
