#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "gradma/config.hpp"
#include "gradma/harness.hpp"
#include "gradma/selftest.hpp"
#include "gradma/simulation.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const gradma::ConfigOverrides& overrides) {
  const auto spec = gradma::parse_config(config_path, overrides);
  const auto res = gradma::run_experiment(spec);
  for (const auto& s : res.seeds) {
    if (s.top_accuracy)
      std::cout << "seed " << s.seed << ": top accuracy " << *s.top_accuracy << " -> " << s.csv.string() << '\n';
    else
      std::cout << "seed " << s.seed << ": FAILED " << s.error << '\n';
  }
  std::cout << gradma::to_string(spec.config.strategy) << ": " << res.mean_top_accuracy << " +- "
            << res.std_top_accuracy << " over " << res.seeds.size() - static_cast<std::size_t>(res.failed)
            << " seed(s)\n";
  return res.failed == 0 ? 0 : 3;
}

int cmd_report(const std::vector<std::string>& files, const std::vector<double>& targets) {
  std::cout << "file";
  for (double t : targets) std::cout << ",rounds_to_" << t;
  std::cout << ",top_accuracy\n";
  for (const auto& f : files) {
    const auto rows = gradma::read_metrics_csv(fs::path(f));
    std::cout << f;
    for (double t : targets) {
      const auto hit = rows.empty() ? std::nullopt : gradma::rounds_to_accuracy(rows, t);
      std::cout << ',' << (hit ? std::to_string(*hit) : "--");
    }
    std::cout << ',' << gradma::top_accuracy(rows) << '\n';
  }
  return 0;
}

int cmd_selftest(const std::string& scratch, bool with_mnist, const std::string& data_dir) {
  fs::path dir = scratch.empty() ? fs::temp_directory_path() / "gradma_selftest" : fs::path(scratch);
  fs::create_directories(dir);
  bool ok = true;
  for (const auto& r : gradma::selftest::run_fast(dir)) {
    std::cout << gradma::selftest::format(r) << std::endl;
    ok = ok && r.passed;
  }
  if (with_mnist) {
    const auto r = gradma::selftest::mnist_reproduction(
        data_dir, gradma::selftest::MnistPlan::defaults(), [](const std::string& line) { std::cout << "  " << line << std::endl; });
    std::cout << gradma::selftest::format(r) << std::endl;
    ok = ok && (r.passed || r.skipped);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with memory-corrected momentum"};
  app.require_subcommand(1);

  std::string config_path;
  gradma::ConfigOverrides overrides;
  std::uint64_t seed = 0;
  std::string strategy, out;
  int eval_every = 0;
  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "Run this single seed instead of the configured list");
  auto* strategy_opt = run->add_option("--strategy", strategy, "Strategy override");
  auto* out_opt = run->add_option("--out", out, "Output directory override");
  auto* eval_opt = run->add_option("--eval-every", eval_every, "Evaluation cadence override")->check(CLI::PositiveNumber);

  std::vector<std::string> files;
  std::vector<double> targets{0.9, 0.95, 0.97};
  auto* report = app.add_subcommand("report", "Rounds to reach target accuracies, per metrics CSV");
  report->add_option("files", files, "Metrics CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--target", targets, "Target accuracies in [0, 1]");

  std::string scratch, data_dir;
  bool with_mnist = false;
  const char* env = std::getenv(std::string(gradma::kDataDirEnv).c_str());
  if (env) data_dir = env;
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  selftest->add_option("--scratch", scratch, "Directory for temporary outputs");
  selftest->add_flag("--mnist", with_mnist, "Also run the MNIST comparison (slow)");
  selftest->add_option("--data-dir", data_dir, "MNIST directory (default $GRADMA_DATA_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (*seed_opt) overrides.seed = seed;
      if (*strategy_opt) overrides.strategy = strategy;
      if (*out_opt) overrides.output_dir = out;
      if (*eval_opt) overrides.eval_every = eval_every;
      return cmd_run(config_path, overrides);
    }
    if (*report) return cmd_report(files, targets);
    return cmd_selftest(scratch, with_mnist, data_dir);
  } catch (const gradma::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
