// parahom command line: experiments and the acceptance suite.

#include "parahom/harness/acceptance.hpp"
#include "parahom/harness/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace parahom;
using namespace parahom::harness;

namespace {

struct Common {
  std::string config, seeds, out, model;
  int workers = 0;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file layered over the defaults")->check(CLI::ExistingFile);
  app->add_option("--seeds", c.seeds, "seed range a..b for the experiment's ensemble");
  app->add_option("--out", c.out, "output directory (default: output.dir of the config)");
  app->add_option("--workers", c.workers, "worker threads (default: workers of the config)")->check(CLI::PositiveNumber);
  app->add_option("--model", c.model, "model name: R1, R2, constant, separable2d, asymmetric, fast, sinusoidal");
  app->add_option("--set", c.sets, "override a config key, e.g. --set theorem2.T=0.25 (repeatable)");
  app->add_flag("-q,--quiet", c.quiet, "no progress output on stderr");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

ExperimentConfig load(const Common& c, const std::string& seed_key) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig() : ExperimentConfig::from_file(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), parse_value(s.substr(eq + 1)));
  }
  if (!c.model.empty()) {
    cfg.set("model.name", c.model);
    if (seed_key == "rates") cfg.set("rates.model", c.model);
  }
  if (c.workers > 0) cfg.set("workers", c.workers);
  if (!c.out.empty()) cfg.set("output.dir", c.out);
  if (!c.seeds.empty()) {
    if (seed_key.empty()) throw ConfigError("--seeds is not used by this command");
    const SeedRange r = SeedRange::parse(c.seeds);
    cfg.set("seeds." + seed_key, r.str());
    if (seed_key == "theorem2") {
      json counts = json::array();
      for (std::size_t i = 0; i < cfg.numbers("theorem2.eps").size(); ++i) counts.push_back(r.size());
      cfg.set("theorem2.seed_counts", counts);
      cfg.set("theorem2.diagnostic_seeds", std::min<std::int64_t>(cfg.integer("theorem2.diagnostic_seeds"), std::int64_t(r.size())));
    }
  }
  cfg.validate();
  return cfg;
}

struct Run {
  ExperimentConfig cfg;
  std::string out, hash;
  int workers = 1;
  Log log;
  CoefficientModel model;

  Run(const Common& c, const std::string& seed_key) : cfg(load(c, seed_key)) {
    out = cfg.text("output.dir");
    hash = cfg.hash_hex();
    workers = int(cfg.integer("workers"));
    log.os = c.quiet ? nullptr : &std::cerr;
    model = model_from_config(cfg.at("model"));
    ensure_directory(out);
    write_json_report(join_path(out, "config.json"), {{"config", cfg.tree()}}, hash);
  }
  std::string path(const std::string& f) const { return join_path(out, f); }
  TensorEstimate tensors(const CoefficientModel& m) {
    TensorEstimate te = estimate_tensors(m, cfg, workers, log);
    write_json_report(path("tensors_" + m.name() + ".json"), te.to_json(), hash);
    return te;
  }
};

int verdict(bool ok, const std::string& what) {
  std::cout << (ok ? "PASS " : "FAIL ") << what << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parahom: parabolic homogenisation experiments"};
  app.require_subcommand(1);
  Common c;

  auto* eff = app.add_subcommand("effective", "a^eff by every route with the forward/reversed equivalence report");
  auto* clt = app.add_subcommand("clt", "invariance principle for eps chi_{2,1}(t / eps^2)");
  auto* t2 = app.add_subcommand("theorem2", "U^eps ensembles against the limit SPDE ensemble");
  auto* rates = app.add_subcommand("rates", "convergence rate of u^eps to u0 with and without the corrector");
  auto* dump = app.add_subcommand("corrector-dump", "write a corrector trajectory (CSV flux, binary values)");
  auto* tens = app.add_subcommand("tensors", "estimate a^eff, Lambda and mu from the estimation seeds");
  auto* acc = app.add_subcommand("acceptance", "run the acceptance suite with one PASS/FAIL line per criterion");
  std::vector<int> only;
  acc->add_option("--only", only, "criterion ids to run (default: all)")->delimiter(',');
  for (auto* s : {eff, clt, t2, rates, dump, tens, acc}) add_common(s, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*eff) {
      Run r(c, "effective");
      const EffectiveReport rep = run_effective(r.model, r.cfg, r.log);
      rep.table().write(r.path("effective_" + rep.model + ".csv"), r.hash);
      write_json_report(r.path("effective_" + rep.model + ".json"), rep.to_json(), r.hash);
      std::cout << rep.table().str(r.hash);
      return verdict(rep.equivalent, "forward/reversed equivalence, max |z| " + std::to_string(rep.equivalence.max_z));
    }
    if (*clt) {
      Run r(c, "clt");
      const TensorEstimate te = r.tensors(r.model);
      const CltReport rep = run_clt(r.model, te, r.cfg, r.workers, r.log);
      rep.table().write(r.path("clt_" + rep.model + ".csv"), r.hash);
      write_json_report(r.path("clt_" + rep.model + ".json"), rep.to_json(), r.hash);
      std::cout << rep.table().str(r.hash);
      return verdict(rep.pass, "variance ratio band and skewness at t = T, covariance PSD");
    }
    if (*t2) {
      Run r(c, "theorem2");
      const TensorEstimate te = r.tensors(r.model);
      const Theorem2Report rep = run_theorem2(r.model, te, r.cfg, r.workers, r.log);
      rep.table().write(r.path("theorem2_" + rep.model + ".csv"), r.hash);
      rep.samples_table().write(r.path("theorem2_" + rep.model + "_samples.csv"), r.hash);
      write_json_report(r.path("theorem2_" + rep.model + ".json"), rep.to_json(), r.hash);
      std::cout << rep.table().str(r.hash);
      std::ostringstream os;
      os << "variance gaps decreasing " << rep.variance_decreasing << ", small " << rep.variance_small
         << ", mean z " << rep.mean_ok << ", Xi_eps1 decreasing " << rep.xi1_decreasing;
      return verdict(rep.variance_decreasing && rep.variance_small && rep.mean_ok && rep.xi1_decreasing, os.str());
    }
    if (*rates) {
      Run r(c, "rates");
      const CoefficientModel m = [&] {
        json s = r.cfg.at("model");
        s["name"] = r.cfg.text("rates.model");
        return model_from_config(s);
      }();
      const TensorEstimate te = r.tensors(m);
      const RatesReport rep = run_rates(m, te, r.cfg, r.workers, r.log);
      rep.table().write(r.path("rates_" + rep.model + ".csv"), r.hash);
      write_json_report(r.path("rates_" + rep.model + ".json"), rep.to_json(), r.hash);
      std::cout << rep.table().str(r.hash);
      return verdict(rep.pass, "log-log slope " + std::to_string(rep.slope) + " (CI " + std::to_string(rep.slope_lo) +
                                   ".." + std::to_string(rep.slope_hi) + ")");
    }
    if (*dump) {
      Run r(c, "corrector");
      const json j = run_corrector_dump(r.model, r.cfg, r.out);
      std::cout << j.dump(2) << std::endl;
      return 0;
    }
    if (*tens) {
      Run r(c, "");
      const TensorEstimate te = r.tensors(r.model);
      std::cout << te.to_json().dump(2) << std::endl;
      return 0;
    }
    if (*acc) {
      Run r(c, "");
      const auto results = run_acceptance(r.cfg, r.workers, std::cout, r.log.os, r.out, only);
      int failed = 0;
      for (const auto& res : results) failed += !res.pass;
      std::cout << (failed ? "FAIL " : "PASS ") << results.size() - std::size_t(failed) << "/" << results.size()
                << " criteria" << std::endl;
      return failed ? 1 : 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return 2;
  } catch (const ResolutionError& e) {
    std::cerr << "configuration error (resolution): " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
