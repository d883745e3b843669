#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mlhoqmc/errors.hpp"
#include "mlhoqmc/harness.hpp"

using namespace mlhoqmc;
using namespace mlhoqmc::harness;
using est::EstimatorKind;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mlhoqmc_test_harness_" + name);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<ConvergenceRecord> power_law(double rate, int n, double noise = 0.0, unsigned seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-noise, noise);
  std::vector<ConvergenceRecord> out;
  for (int i = 0; i < n; ++i) {
    ConvergenceRecord r;
    r.L = i;
    r.work = std::pow(16.0, i + 1);
    r.error = 3.0 * std::pow(r.work, rate) * (1.0 + U(rng));
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("slope fits") {
  CHECK(fit_slope(power_law(-2.0 / 3.0, 8), 3) == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
  auto flat = power_law(0.0, 6);
  CHECK(std::abs(fit_slope(flat, 3)) < 1e-12);
  // skipped points are the cheapest ones, whatever the input order
  auto rev = power_law(-0.5, 8);
  rev[0].error = rev[1].error = rev[2].error = 1e9;
  std::reverse(rev.begin(), rev.end());
  CHECK(fit_slope(rev, 3) == doctest::Approx(-0.5).epsilon(1e-12));
  for (unsigned seed = 1; seed <= 20; ++seed)
    CHECK(std::abs(fit_slope(power_law(-0.5, 10, 0.05, seed), 3) + 0.5) <= 0.05);
  CHECK_THROWS_AS(fit_slope(power_law(-1, 4), 3), ConfigError);
  auto zero = power_law(-1, 6);
  zero[4].error = 0.0;
  CHECK_THROWS_AS(fit_slope(zero, 3), ConfigError);
}

TEST_CASE("synthetic data") {
  const auto spec = field::FieldSpec::make(field::Law::Affine, 16);
  DataConfig cfg;
  cfg.truth_level = 4;
  const auto exact = generate_data(spec, {}, 0.0, cfg);
  const double obs = fem::ForwardSolver(spec, fem::MeshLevel::make(4)).solve(DataConfig::default_truth()).observation;
  CHECK(exact.delta == obs);
  const auto a = generate_data(spec, {}, 1.0, cfg);
  const auto b = generate_data(spec, {}, 1.0, cfg);
  CHECK(a.delta == b.delta);
  const auto c = generate_data(spec, {}, 0.01, cfg);
  CHECK(c.delta - obs == doctest::Approx(0.1 * (a.delta - obs)).epsilon(1e-12));
  cfg.seed += 1;
  CHECK(generate_data(spec, {}, 1.0, cfg).delta != a.delta);
  CHECK_THROWS_AS(generate_data(spec, {}, -1.0, cfg), ConfigError);
  CHECK_THROWS_AS(generate_data(field::FieldSpec::make(field::Law::Affine, 8), {}, 1.0, cfg), ConfigError);
  const auto truth = DataConfig::default_truth();
  REQUIRE(truth.size() == 16);
  CHECK(truth[0] == 0.3);
  CHECK(truth[1] == -0.3);
}

TEST_CASE("config keys: nested and dotted forms agree") {
  const auto a = plan_from_json(R"({"noise": {"gamma": [1, 0.1]}, "schedule": {"L": 3, "cap_exponent": 0},
                                    "estimator": {"kind": "ml-split"}, "mc": {"seed": 7}})");
  const auto b = plan_from_json(R"({"noise.gamma": [1, 0.1], "schedule.L": 3, "schedule.cap_exponent": 0,
                                    "estimator.kind": ["ml-split"], "mc.seed": 7})");
  for (const auto* p : {&a, &b}) {
    CHECK(p->gammas == std::vector<double>{1, 0.1});
    CHECK(p->L_max == 3);
    CHECK(p->schedule.cap_exponent == 0);
    CHECK(p->kinds == std::vector<EstimatorKind>{EstimatorKind::MlSplit});
    CHECK(p->run.seed == 7u);
    CHECK(p->ref_level() == 4);
    CHECK_FALSE(p->delta.has_value());
  }
  const auto d = plan_from_json(R"({"noise.delta": 0.5, "noise.gamma": 0.1})");
  REQUIRE(d.delta.has_value());
  CHECK(*d.delta == 0.5);
  CHECK(plan_from_json(R"({"study.mode": "forward"})").mode == StudyMode::Forward);
  CHECK(plan_from_json("{}").L_max == 5);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(plan_from_json("{"), ConfigError);
  CHECK_THROWS_AS(plan_from_json("[1]"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"noise": {"gama": 1}})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"schedule.L": "five"})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"schedule": {"L": 2}, "schedule.L": 3})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"noise.gamma": -1})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"noise.generate": false})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"noise.generate": true, "noise.delta": 1})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"schedule.L": 4, "reference.level": 4})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"estimator.kind": "best"})"), ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"fem.solver": "lu"})"), ConfigError);
}

TEST_CASE("CSV round trip") {
  std::vector<ConvergenceRecord> rs(2);
  rs[0] = {EstimatorKind::SlRatio, 1, 256, 0.125, 1.0 / 3.0};
  rs[1] = {EstimatorKind::MlmcSplit, 4, 1.6777216e7, 1e-17, -2.5};
  std::stringstream ss;
  write_csv(ss, rs);
  CHECK(ss.str().rfind("kind,L,work,error,value\n", 0) == 0);
  const auto back = read_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].kind == EstimatorKind::SlRatio);
  CHECK(back[0].value == 1.0 / 3.0);
  CHECK(back[1].kind == EstimatorKind::MlmcSplit);
  CHECK(back[1].work == 1.6777216e7);
  CHECK(back[1].error == 1e-17);
  std::stringstream bad("kind,L,work\n");
  CHECK_THROWS_AS(read_csv(bad), ConfigError);
  std::stringstream bad2("kind,L,work,error,value\nml-split,1,x,1,1\n");
  CHECK_THROWS_AS(read_csv(bad2), ConfigError);
}

TEST_CASE("single-kind single-level study") {
  StudyPlan plan;
  plan.vector_dir = scratch("vectors");
  plan.L_min = plan.L_max = 2;
  plan.reference_level = 3;
  plan.kinds = {EstimatorKind::MlSplit};
  const auto res = run_study(plan);
  REQUIRE(res.per_gamma.size() == 1);
  const auto& g = res.per_gamma[0];
  REQUIRE(g.records.size() == 1);
  CHECK(g.records[0].L == 2);
  CHECK(g.records[0].work == static_cast<double>(est::schedule_qmc(2).work()));
  CHECK(g.records[0].error == std::abs(g.records[0].value - g.reference));
  CHECK(g.data.has_value());
  CHECK_FALSE(res.vector_files.empty());
}

TEST_CASE("forward mode reproduces the prior-mean estimator") {
  StudyPlan plan;
  plan.mode = StudyMode::Forward;
  plan.vector_dir = scratch("vectors");
  plan.L_min = plan.L_max = 2;
  plan.reference_level = 3;
  plan.kinds = {EstimatorKind::SlRatio};
  const auto res = run_study(plan);
  est::Problem pb;
  pb.field = field::FieldSpec::make(field::Law::Affine, 16);
  pb.noise = est::NoiseModel::prior();
  cbc::VectorStore vs(plan.vector_dir);
  const auto direct = est::sl_ratio(pb, 2, vs, {});
  CHECK(res.per_gamma[0].records[0].value == direct.value);
  CHECK(std::isinf(res.per_gamma[0].gamma));
}

TEST_CASE("studies are reproducible byte for byte") {
  StudyPlan plan;
  plan.vector_dir = scratch("vectors");
  plan.L_max = 2;
  plan.gammas = {1.0, 0.1};
  plan.kinds = {EstimatorKind::SlRatio, EstimatorKind::MlRatio, EstimatorKind::MlSplit, EstimatorKind::MlmcRatio};
  plan.run.repetitions = 2;
  const auto out1 = scratch("run1"), out2 = scratch("run2");
  const auto a = run_study(plan);
  plan.run.threads = 2;
  const auto b = run_study(plan);
  const auto pa = write_study(out1, plan, a, "{}", 0.0);
  const auto pb = write_study(out2, plan, b, "{}", 0.0);
  REQUIRE(pa.size() == 2);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    std::ifstream x(pa[i]), y(pb[i]);
    std::stringstream sx, sy;
    sx << x.rdbuf();
    sy << y.rdbuf();
    CHECK(sx.str() == sy.str());
    CHECK(sx.str().size() > 40);
  }
  CHECK(std::filesystem::exists(out1 / "manifest.json"));
  // records sorted by work within each kind, non-negative errors
  for (const auto& g : a.per_gamma)
    for (std::size_t i = 1; i < g.records.size(); ++i) {
      CHECK(g.records[i].error >= 0.0);
      if (g.records[i].kind == g.records[i - 1].kind) CHECK(g.records[i].work >= g.records[i - 1].work);
    }
}

TEST_CASE("file digest") {
  const auto p = scratch("digest") / "x.txt";
  std::ofstream(p) << "a";
  CHECK(file_digest(p) == "af63dc4c8601ec8c");  // FNV-1a 64 of "a"
  CHECK_THROWS_AS(file_digest(scratch("digest") / "missing"), ConfigError);
}
