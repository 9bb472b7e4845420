// Runs every acceptance criterion on the default configuration and exits
// non-zero when any of them fails.

#include "parahom/harness/acceptance.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"parahom acceptance suite"};
  std::string out_dir = "acceptance_out";
  std::string config;
  int workers = 1;
  std::vector<int> only;
  bool quiet = false;
  app.add_option("--out", out_dir, "report directory");
  app.add_option("--config", config, "JSON config layered over the defaults");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "criterion ids")->delimiter(',');
  app.add_flag("-q,--quiet", quiet, "no progress log");
  CLI11_PARSE(app, argc, argv);

  try {
    parahom::harness::ExperimentConfig cfg =
        config.empty() ? parahom::harness::ExperimentConfig()
                       : parahom::harness::ExperimentConfig::from_file(config);
    cfg.validate();
    const auto results = parahom::harness::run_acceptance(cfg, workers, std::cout,
                                                          quiet ? nullptr : &std::cerr, out_dir, only);
    int failed = 0;
    for (const auto& r : results) failed += r.pass ? 0 : 1;
    std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed\n";
    return failed ? 1 : 0;
  } catch (const parahom::harness::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
