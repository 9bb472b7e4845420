#include "parahom/harness/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace parahom::harness {

namespace {

json test_function(double centre, double width, int hermite) {
  return {{"centre", centre}, {"width", width}, {"hermite", hermite}};
}

std::vector<std::string> split_dotted(const std::string& dotted) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts)
    if (p.empty()) throw ConfigError("malformed key '" + dotted + "'");
  return parts;
}

void merge_into(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config: object expected at '" + where + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& dst = base[it.key()];
    if (dst.is_object() && it.value().is_object())
      merge_into(dst, it.value(), key);
    else if (dst.is_object() != it.value().is_object())
      throw ConfigError("config: type mismatch at '" + key + "'");
    else
      dst = it.value();
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& text) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("bad seed range '" + text + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("bad seed range '" + text + "'");
  }
}

}  // namespace

SeedRange SeedRange::parse(const std::string& text) {
  SeedRange r;
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    r.first = r.last = parse_u64(text, text);
  } else {
    r.first = parse_u64(text.substr(0, dots), text);
    r.last = parse_u64(text.substr(dots + 2), text);
  }
  if (r.last < r.first) throw ConfigError("empty seed range '" + text + "'");
  return r;
}

std::string SeedRange::str() const {
  return first == last ? std::to_string(first) : std::to_string(first) + ".." + std::to_string(last);
}

SeedRange SeedRange::head(std::size_t n, const std::string& what) const {
  if (n == 0 || n > size())
    throw ConfigError(what + ": needs " + std::to_string(n) + " seeds, range " + str() + " has " +
                      std::to_string(size()));
  return {first, first + n - 1};
}

json default_config() {
  json c;
  c["schema_version"] = 1;
  c["workers"] = 1;
  c["output"] = {{"dir", "out"}};
  c["model"] = {{"name", "R1"}, {"resolution", 16}, {"ds", 0.01}, {"gamma", nullptr},
                {"c0", 2.0}, {"c1", 1.0}, {"link", "tanh"}};
  c["seeds"] = {
      {"aeff", "100001..100016"},   {"lambda", "110001..110008"}, {"mu", "120001..120004"},
      {"effective", "130001"},      {"clt", "1..2000"},            {"theorem2", "200001..206000"},
      {"spde", "300001..304000"},   {"spde_rate", "400001..400200"}, {"rates", "500001"},
      {"joint", "600001"},          {"corrector", "700001..700002"}};
  c["estimation"] = {{"aeff_horizon", 1e5}, {"lambda_horizon", 2.5e4}, {"lambda_max_lag", 20.0},
                     {"mu_horizon", 2000.0}, {"batches", 50}, {"static_horizon", 20.0}};
  c["effective"] = {{"horizon", 1e4}, {"frozen_stride", 100}, {"equivalence_factor", 3.0},
                    {"joint_ny", 200}, {"joint_half_width", 8.0}};
  c["corrector"] = {{"horizon", 50.0}, {"uniqueness_tol", 1e-8}, {"drift_tol", 1e-12},
                    {"dump_stride", 10}};
  c["initial_layer"] = {{"span", 1.0}, {"resolution", 64}, {"ds", 2.5e-4}, {"rate_tol", 0.01},
                        {"r1_span", 3.0}};
  c["clt"] = {{"eps", 0.05}, {"T", 1.0}, {"checkpoints", {0.25, 0.5, 1.0}},
              {"variance_band", {0.8, 1.2}}, {"skew_z", 3.0}};
  c["theorem2"] = {
      {"eps", {0.2, 0.1, 0.05}},
      {"seed_counts", {6000, 2400, 600}},
      {"T", 0.5},
      {"half_width", 13.5},
      {"initial", {{"amplitude", 1.0}, {"centre", 0.0}, {"width", 1.0}}},
      {"test_functions",
       {test_function(0.0, 1.0, 0), test_function(0.0, 1.0, 2), test_function(1.0, 1.0, 0),
        test_function(0.0, 2.0, 0)}},
      {"diagnostic_seeds", 8},
      {"spde_dt", 1e-3},
      {"spde_points", 512},
      {"spde_count", 4000},
      {"variance_gap_max", 0.3},
      {"mean_z_max", 3.0},
      {"boundary_tol", 1e-8}};
  c["rates"] = {{"model", "R2"}, {"eps", {0.2, 0.1, 0.05}}, {"T", 0.5}, {"half_width", 13.5},
                {"slope", 1.0}, {"slope_tol", 0.15}};
  c["spde_rate"] = {{"dt", {0.02, 0.01, 0.005, 0.0025}}, {"refinement", 16}, {"T", 0.5},
                    {"half_width", 13.5}, {"points", 256}, {"rate", 0.5}, {"rate_tol", 0.1}};
  c["degenerate"] = {{"model", "asymmetric"}, {"T", 0.5}, {"dt", 1e-3}, {"half_width", 13.5},
                     {"points", 256}, {"tol", 1e-6}};
  c["joint"] = {{"model", "fast"}, {"gamma", 10.0}, {"ds", 5e-4}, {"horizon", 2e4},
                {"ny", 400}, {"half_width", 8.0}, {"factor", 3.0}};
  c["oracle"] = {{"tol", 1e-6}, {"horizon", 20.0}};
  return c;
}

ExperimentConfig::ExperimentConfig() : tree_(default_config()) {}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json patch;
  try {
    patch = json::parse(ss.str(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  ExperimentConfig c;
  c.merge(patch);
  return c;
}

void ExperimentConfig::merge(const json& patch) { merge_into(tree_, patch, ""); }

void ExperimentConfig::set(const std::string& dotted, const json& value) {
  const auto parts = split_dotted(dotted);
  json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(patch);
}

const json& ExperimentConfig::at(const std::string& dotted) const {
  const json* node = &tree_;
  for (const auto& p : split_dotted(dotted)) {
    if (!node->is_object() || !node->contains(p)) throw ConfigError("config: missing key '" + dotted + "'");
    node = &(*node)[p];
  }
  return *node;
}

double ExperimentConfig::number(const std::string& dotted) const {
  const json& v = at(dotted);
  if (!v.is_number()) throw ConfigError("config: '" + dotted + "' must be a number");
  return v.get<double>();
}

std::int64_t ExperimentConfig::integer(const std::string& dotted) const {
  const json& v = at(dotted);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return std::int64_t(v.get<double>());
  throw ConfigError("config: '" + dotted + "' must be an integer");
}

std::string ExperimentConfig::text(const std::string& dotted) const {
  const json& v = at(dotted);
  if (!v.is_string()) throw ConfigError("config: '" + dotted + "' must be a string");
  return v.get<std::string>();
}

bool ExperimentConfig::flag(const std::string& dotted) const {
  const json& v = at(dotted);
  if (!v.is_boolean()) throw ConfigError("config: '" + dotted + "' must be true or false");
  return v.get<bool>();
}

std::vector<double> ExperimentConfig::numbers(const std::string& dotted) const {
  const json& v = at(dotted);
  if (!v.is_array()) throw ConfigError("config: '" + dotted + "' must be a list");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError("config: '" + dotted + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

SeedRange ExperimentConfig::seeds(const std::string& name) const {
  const json& v = at("seeds." + name);
  if (v.is_number_unsigned() || v.is_number_integer()) return SeedRange::parse(std::to_string(v.get<std::uint64_t>()));
  if (!v.is_string()) throw ConfigError("config: seeds." + name + " must be a string 'a..b'");
  return SeedRange::parse(v.get<std::string>());
}

void ExperimentConfig::validate() const {
  auto positive = [&](const std::string& k) {
    if (!(number(k) > 0)) throw ConfigError("config: '" + k + "' must be positive");
  };
  if (!at("model.gamma").is_null()) positive("model.gamma");
  for (const char* k : {"model.ds", "estimation.aeff_horizon", "estimation.lambda_horizon",
                        "estimation.lambda_max_lag", "estimation.mu_horizon", "estimation.static_horizon",
                        "effective.horizon", "clt.eps", "clt.T", "theorem2.T", "theorem2.half_width",
                        "theorem2.spde_dt", "rates.T", "spde_rate.T", "degenerate.T", "degenerate.dt",
                        "joint.ds", "joint.horizon", "joint.gamma", "corrector.horizon", "initial_layer.span",
                        "initial_layer.ds"})
    positive(k);
  if (integer("model.resolution") < 4) throw ConfigError("config: model.resolution must be at least 4");
  if (integer("workers") < 1) throw ConfigError("config: workers must be at least 1");

  for (const char* k : {"theorem2.eps", "rates.eps"}) {
    const auto e = numbers(k);
    if (e.empty()) throw ConfigError(std::string("config: '") + k + "' is empty");
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!(e[i] > 0 && e[i] < 1)) throw ConfigError(std::string("config: '") + k + "' entries must lie in (0, 1)");
      if (i && !(e[i] < e[i - 1])) throw ConfigError(std::string("config: '") + k + "' must be strictly descending");
    }
  }
  const auto counts = numbers("theorem2.seed_counts");
  if (counts.size() != numbers("theorem2.eps").size())
    throw ConfigError("config: theorem2.seed_counts must have one entry per eps");
  const SeedRange ens = seeds("theorem2");
  for (double c : counts) {
    if (c < 2 || std::floor(c) != c) throw ConfigError("config: theorem2.seed_counts must be integers >= 2");
    ens.head(std::size_t(c), "theorem2");
  }
  if (!at("theorem2.test_functions").is_array() || at("theorem2.test_functions").empty())
    throw ConfigError("config: theorem2.test_functions must be a non-empty list");
  for (const auto& f : at("theorem2.test_functions")) {
    if (!f.is_object() || !f.contains("centre") || !f.contains("width") || !f.contains("hermite"))
      throw ConfigError("config: test functions need centre, width and hermite");
    if (!(f["width"].get<double>() > 0) || f["hermite"].get<int>() < 0 || f["hermite"].get<int>() > 6)
      throw ConfigError("config: test function width must be positive and hermite in 0..6");
  }
  if (integer("theorem2.spde_count") < 2 || std::size_t(integer("theorem2.spde_count")) > seeds("spde").size())
    throw ConfigError("config: theorem2.spde_count exceeds seeds.spde");
  const auto cp = numbers("clt.checkpoints");
  if (cp.empty()) throw ConfigError("config: clt.checkpoints is empty");
  for (double t : cp)
    if (!(t > 0 && t <= number("clt.T") * (1 + 1e-12))) throw ConfigError("config: clt checkpoints must lie in (0, T]");
  if (numbers("clt.variance_band").size() != 2) throw ConfigError("config: clt.variance_band needs two numbers");
  const auto dts = numbers("spde_rate.dt");
  if (dts.size() < 2) throw ConfigError("config: spde_rate.dt needs at least two steps");
  for (double d : dts)
    if (!(d > 0)) throw ConfigError("config: spde_rate.dt entries must be positive");

  // Tensor-estimation seeds must not touch the comparison ensembles.
  std::vector<std::pair<std::string, SeedRange>> all;
  for (auto it = at("seeds").begin(); it != at("seeds").end(); ++it) all.emplace_back(it.key(), seeds(it.key()));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i].second.overlaps(all[j].second))
        throw ConfigError("config: seed sets '" + all[i].first + "' and '" + all[j].first + "' overlap");
  model_from_config(at("model"));
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string s = tree_.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

CoefficientModel model_from_config(const json& section) {
  try {
    const std::string name = section.at("name").get<std::string>();
    const int res = section.at("resolution").get<int>();
    const double ds = section.at("ds").get<double>();
    const json& g = section.at("gamma");
    if (name == "fast") return make_fast_driver(res, g.is_null() ? 10.0 : g.get<double>(), ds);
    if (name == "sinusoidal") {
      DriverSpec d;
      d.gamma = g.is_null() ? 1.0 : g.get<double>();
      d.sigma = Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0 * d.gamma));
      d.ds = ds;
      return make_sinusoidal_1d(res, section.at("c0").get<double>(), section.at("c1").get<double>(),
                                link_from_name(section.at("link").get<std::string>()), d);
    }
    return make_model(name, res, ds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: model section: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: model: ") + e.what());
  }
}

}  // namespace parahom::harness
