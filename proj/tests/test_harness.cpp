#include "doctest.h"

#include "parahom/harness/config.hpp"
#include "parahom/harness/experiments.hpp"
#include "parahom/harness/io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

using namespace parahom;
using namespace parahom::harness;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("parahom_test_" + name);
  std::filesystem::create_directories(p);
  return p.string();
}

TensorEstimate fixed_tensors(double aeff, double lambda) {
  TensorEstimate t;
  t.model = "R1";
  t.aeff = Mat::Constant(1, 1, aeff);
  t.aeff_se = Mat::Zero(1, 1);
  t.lambda.values = Mat::Constant(1, 1, lambda);
  t.lambda.sqrt = Mat::Constant(1, 1, std::sqrt(lambda));
  t.lambda.standard_error = Mat::Zero(1, 1);
  t.mu.values = Vec::Zero(1);
  t.mu.standard_error = Vec::Zero(1);
  return t;
}

}  // namespace

TEST_CASE("seed ranges") {
  const SeedRange r = SeedRange::parse("3..7");
  CHECK(r.size() == 5);
  CHECK(r[2] == 5);
  CHECK(r.str() == "3..7");
  CHECK(SeedRange::parse("9").size() == 1);
  CHECK(r.head(2, "x").last == 4);
  CHECK_THROWS_AS(r.head(6, "x"), ConfigError);
  CHECK_THROWS_AS(SeedRange::parse("7..3"), ConfigError);
  CHECK_THROWS_AS(SeedRange::parse("a..b"), ConfigError);
  CHECK(r.overlaps(SeedRange::parse("7..9")));
  CHECK(!r.overlaps(SeedRange::parse("8..9")));
}

TEST_CASE("defaults validate and hash stably") {
  ExperimentConfig a, b;
  CHECK_NOTHROW(a.validate());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash_hex().size() == 16);
  b.set("clt.eps", 0.1);
  CHECK(a.hash() != b.hash());
  CHECK(b.number("clt.eps") == 0.1);
  CHECK(a.seeds("aeff").size() == 16);
}

TEST_CASE("bad configurations are rejected") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("clt.nope", 1), ConfigError);
  CHECK_THROWS_AS(c.merge(json{{"bogus", 1}}), ConfigError);

  ExperimentConfig overlap;
  overlap.set("seeds.clt", "100001..100002");
  CHECK_THROWS_AS(overlap.validate(), ConfigError);

  ExperimentConfig order;
  order.set("theorem2.eps", json::array({0.05, 0.1}));
  CHECK_THROWS_AS(order.validate(), ConfigError);

  ExperimentConfig horizon;
  horizon.set("estimation.aeff_horizon", -1.0);
  CHECK_THROWS_AS(horizon.validate(), ConfigError);

  ExperimentConfig model;
  model.set("model.name", "unknown");
  CHECK_THROWS_AS(model.validate(), ConfigError);
}

TEST_CASE("config files accept comments") {
  const std::string path = temp_dir("cfg") + "/c.json";
  {
    std::ofstream os(path);
    os << "{\n  // shorter run\n  \"clt\": {\"eps\": 0.1}\n}\n";
  }
  const ExperimentConfig c = ExperimentConfig::from_file(path);
  CHECK(c.number("clt.eps") == 0.1);
  CHECK(c.number("clt.T") == ExperimentConfig().number("clt.T"));
  CHECK_THROWS_AS(ExperimentConfig::from_file(path + ".missing"), ConfigError);
}

TEST_CASE("CSV output is deterministic with full precision") {
  CsvTable t({"name", "value"});
  t.row({"a,b", 0.1}).row({"c", 1.0 / 3.0});
  const std::string s = t.str("abc");
  CHECK(s == t.str("abc"));
  CHECK(s.rfind("# config_hash=abc\n", 0) == 0);
  CHECK(s.find("\"a,b\"") != std::string::npos);
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("binary matrices round-trip") {
  const std::string path = temp_dir("bin") + "/m.bin";
  Eigen::MatrixXd m(3, 2);
  m << 1, 2, 3, 4, 5, 1.0 / 7.0;
  write_binary_matrix(path, m, json{{"kind", "test"}}, "abc");
  CHECK(read_binary_matrix(path) == m);
  std::ifstream side(path + ".json");
  const json j = json::parse(side);
  CHECK(j.at("rows") == 3);
  CHECK(j.at("config_hash") == "abc");
}

TEST_CASE("parallel map keeps index order and rethrows") {
  auto square = [](std::size_t i) { return int(i * i); };
  const auto a = parallel_map<int>(50, 1, square);
  const auto b = parallel_map<int>(50, 3, square);
  CHECK(a == b);
  CHECK(a[7] == 49);
  CHECK_THROWS_AS(parallel_map<int>(10, 2,
                                    [](std::size_t i) -> int {
                                      if (i == 4) throw std::runtime_error("boom");
                                      return 0;
                                    }),
                  std::runtime_error);
}

TEST_CASE("CLT samples do not depend on the worker count") {
  ExperimentConfig c;
  c.set("seeds.clt", "1..8");
  c.set("clt.eps", 0.2);
  c.set("clt.T", 0.25);
  c.set("clt.checkpoints", json::array({0.125, 0.25}));
  const CoefficientModel m = make_r1(16);
  const TensorEstimate t = fixed_tensors(1.8986, 0.0058);
  const CltReport one = run_clt(m, t, c, 1);
  const CltReport two = run_clt(m, t, c, 2);
  CHECK(one.samples.rows() == 8);
  CHECK(one.samples == two.samples);
  CHECK(one.table().str(c.hash_hex()) == two.table().str(c.hash_hex()));
}

TEST_CASE("static model gives a degenerate CLT") {
  ExperimentConfig c;
  c.set("seeds.clt", "1..8");
  c.set("clt.T", 0.25);
  c.set("clt.checkpoints", json::array({0.25}));
  const CoefficientModel m = make_r2(16);
  const Mat aeff = solve_elliptic_corrector(m.base()).aeff;
  TensorEstimate t = fixed_tensors(aeff(0, 0), 0.0);
  t.time_independent = true;
  const CltReport r = run_clt(m, t, c, 1);
  CHECK(r.degenerate);
  CHECK(r.samples.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("U0 moment formula matches an SPDE ensemble") {
  const double aeff = 1.9, mu = 0.2, lambda = 0.01, T = 0.5, L = 13.5;
  const InitialData g = InitialData::gaussian(1.0, 0.0, 1.0);
  std::vector<TestFunctional> phi = {{0.0, 1.0, 0}, {0.0, 1.0, 2}, {1.0, 1.0, 0}};
  const U0Prediction pred = predict_u0_moments(aeff, mu, lambda, g, L, T, phi);

  SpectralOptions o;
  for (const auto& f : phi) o.test_functions.push_back(f);
  const SpatialDomain d = SpatialDomain::spectral(L, 256);
  const int paths = 400;
  Mat proj(paths, 3);
  for (int p = 0; p < paths; ++p) {
    const WienerPath w = sample_wiener(1, T, 1e-3, 9000 + p);
    proj.row(p) = solve_spde(aeff, mu, Mat::Constant(1, 1, std::sqrt(lambda)), g, d, T, w, o)
                      .projections.transpose();
  }
  for (int k = 0; k < 3; ++k) {
    const Moments m = moments(proj.col(k));
    CHECK(std::abs(m.mean - pred.mean(k)) < 4 * m.mean_se() + 1e-3 * std::abs(pred.mean(k)));
    CHECK(std::abs(m.variance - pred.variance(k)) < 4 * m.variance_se() + 1e-2 * pred.variance(k));
  }
}
