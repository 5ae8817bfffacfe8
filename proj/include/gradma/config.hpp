#ifndef GRADMA_CONFIG_HPP
#define GRADMA_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gradma {

enum class StrategyTag { fedavg, fedprox, fedavgm, fedproxm, mifa, mifam, gradma_w, gradma_s, gradma };

std::string_view to_string(StrategyTag tag);
StrategyTag parse_strategy(std::string_view name);
const std::vector<StrategyTag>& all_strategies();

enum class GradientMode { minibatch, full };

std::string_view to_string(GradientMode mode);

// Validation failure; key() names the offending configuration key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  StrategyTag strategy = StrategyTag::fedavg;
  double eta_l = 0.1;   // local learning rate
  double eta_g = 1.0;   // global learning rate
  double beta1 = 0.0;   // server momentum
  double beta2 = 0.0;   // memory decay
  double mu = 0.0;      // proximal coefficient (fedprox, fedproxm)
  int local_steps = 5;  // synchronization interval
  int active_workers = 10;
  int num_workers = 100;
  int memory_size = 0;  // 0 disables the server memory
  int rounds = 0;
  double omega = 1.0;   // Dirichlet concentration
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<int> hidden_dims;

  GradientMode gradient_mode = GradientMode::minibatch;
  int anchor_cap = 2048;          // samples used for the per-round anchor gradient
  bool disable_local_qp = false;  // ablation switch for the worker-side correction
  double qp_tol = 1e-8;
  int gram_check_every = 100;
  int eval_every = 5;
  bool record_lemma1 = true;
  bool record_wall_time = false;
  int worker_threads = 1;

  bool operator==(const RunConfig&) const = default;

  // Throws ConfigError. Parameter dimension checks (memory_size <= d) happen at run start.
  void validate() const;
};

// Server momentum actually applied by a strategy (0 for the momentum-free ones).
double effective_beta1(const RunConfig& cfg);
bool uses_memory(StrategyTag tag);
bool uses_local_qp(StrategyTag tag);

struct DatasetSpec {
  std::string kind = "synthetic";  // "synthetic", "mnist" or "gmlb"
  std::string path;                // mnist directory or gmlb train file; empty -> $GRADMA_DATA_DIR
  std::string test_path;           // gmlb test file
  int synthetic_classes = 10;
  int synthetic_dim = 20;
  int synthetic_train_per_class = 200;
  int synthetic_test_per_class = 100;
  std::uint64_t data_seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

struct ExperimentSpec {
  RunConfig config;
  DatasetSpec dataset;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  bool parallel_seeds = false;

  bool operator==(const ExperimentSpec&) const = default;
  void validate() const;
};

// Command-line values that take precedence over the config file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> output_dir;
  std::optional<int> eval_every;
};

// Flat JSON object whose keys are the field names above; "seeds" may be replaced
// by a single "seed". Unknown keys, missing required keys and constraint
// violations raise ConfigError.
ExperimentSpec parse_config_text(const std::string& text, const ConfigOverrides& overrides = {});
ExperimentSpec parse_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
std::string to_config_text(const ExperimentSpec& spec);

inline constexpr std::string_view kDataDirEnv = "GRADMA_DATA_DIR";

}  // namespace gradma

#endif  // GRADMA_CONFIG_HPP
