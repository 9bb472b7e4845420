#ifndef PARAHOM_HARNESS_ACCEPTANCE_HPP
#define PARAHOM_HARNESS_ACCEPTANCE_HPP

#include "parahom/harness/config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace parahom::harness {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string measured;
  double seconds = 0.0;
  json detail;
};

/// Runs the acceptance criteria (all when `only` is empty), printing one
/// PASS/FAIL line per criterion to `out` and progress to `log` (may be null).
/// Reports go to `out_dir` when it is not empty.
std::vector<CriterionResult> run_acceptance(const ExperimentConfig& cfg, int workers, std::ostream& out,
                                            std::ostream* log, const std::string& out_dir,
                                            const std::vector<int>& only = {});

}  // namespace parahom::harness

#endif  // PARAHOM_HARNESS_ACCEPTANCE_HPP
