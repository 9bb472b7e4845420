#ifndef PARAHOM_HARNESS_CONFIG_HPP
#define PARAHOM_HARNESS_CONFIG_HPP

// Experiment configuration: a JSON tree (comments allowed) layered over the
// built-in defaults. The defaults reproduce the acceptance suite; the full
// schema is documented in docs/config.md.

#include "parahom/coeff_models.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace parahom::harness {

using json = nlohmann::json;

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inclusive seed interval written "a..b" (or a single seed "a").
struct SeedRange {
  std::uint64_t first = 1;
  std::uint64_t last = 1;

  static SeedRange parse(const std::string& text);
  std::string str() const;
  std::size_t size() const { return std::size_t(last - first + 1); }
  std::uint64_t operator[](std::size_t i) const { return first + i; }
  /// The first n seeds; throws ConfigError when the range is shorter.
  SeedRange head(std::size_t n, const std::string& what) const;
  bool overlaps(const SeedRange& o) const { return first <= o.last && o.first <= last; }
};

json default_config();

class ExperimentConfig {
 public:
  ExperimentConfig();
  static ExperimentConfig from_file(const std::string& path);

  const json& tree() const { return tree_; }
  /// Recursive merge; unknown keys are rejected.
  void merge(const json& patch);
  /// Sets a dotted key ("theorem2.T") to a value.
  void set(const std::string& dotted, const json& value);

  const json& at(const std::string& dotted) const;
  double number(const std::string& dotted) const;
  std::int64_t integer(const std::string& dotted) const;
  std::string text(const std::string& dotted) const;
  bool flag(const std::string& dotted) const;
  std::vector<double> numbers(const std::string& dotted) const;
  SeedRange seeds(const std::string& name) const;

  /// Throws ConfigError on bad values or overlapping seed sets.
  void validate() const;

  /// FNV-1a 64 of the canonical dump.
  std::uint64_t hash() const;
  std::string hash_hex() const;

 private:
  json tree_;
};

/// Builds a coefficient model from a model section; names are R1, R2,
/// constant, separable2d, asymmetric, fast and sinusoidal.
CoefficientModel model_from_config(const json& section);

}  // namespace parahom::harness

#endif  // PARAHOM_HARNESS_CONFIG_HPP
