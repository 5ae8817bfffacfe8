// One PASS/FAIL/SKIP line per acceptance criterion. Exit code 0 when every
// selected criterion passed, 77 when the only selected criterion was skipped.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "gradma/selftest.hpp"

namespace st = gradma::selftest;

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<int> only, skip;
  std::string scratch = (std::filesystem::temp_directory_path() / "gradma_acceptance").string();
  std::string data_dir;
  if (const char* env = std::getenv("GRADMA_DATA_DIR")) data_dir = env;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--skip", skip, "Skip these criteria");
  app.add_option("--scratch", scratch, "Directory for temporary outputs");
  app.add_option("--data-dir", data_dir, "MNIST directory");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> only_set(only.begin(), only.end()), skip_set(skip.begin(), skip.end());
  auto selected = [&](int id) { return (only_set.empty() || only_set.count(id)) && !skip_set.count(id); };
  std::filesystem::create_directories(scratch);

  int failed = 0, passed = 0, skipped = 0;
  auto report = [&](const st::CheckResult& r) {
    std::cout << st::format(r) << std::endl;
    if (r.skipped)
      ++skipped;
    else if (r.passed)
      ++passed;
    else
      ++failed;
  };

  if (selected(1)) report(st::qp_oracle_equivalence());
  if (selected(2)) report(st::gradient_correctness());
  if (selected(3)) report(st::equivalence_lattice());
  if (selected(4)) report(st::lemma1_identity());
  if (selected(5)) report(st::memory_reduction());
  if (selected(6)) report(st::partition_correctness());
  if (selected(7))
    report(st::mnist_reproduction(data_dir, st::MnistPlan::defaults(),
                                  [](const std::string& line) { std::cout << "  " << line << std::endl; }));
  if (selected(8)) report(st::communication_accounting());
  if (selected(9)) report(st::determinism(scratch));

  std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped" << std::endl;
  if (failed > 0) return 1;
  if (passed == 0 && skipped > 0) return 77;
  return 0;
}
