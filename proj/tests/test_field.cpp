#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mlhoqmc/errors.hpp"
#include "mlhoqmc/field.hpp"

using namespace mlhoqmc;

TEST_CASE("mode enumeration") {
  const auto one = field::enumerate_modes(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].k1 == 1);
  CHECK(one[0].k2 == 1);
  CHECK(one[0].mu == 0.25);

  const auto three = field::enumerate_modes(3);
  CHECK(three[1].k1 == 1);
  CHECK(three[1].k2 == 2);
  CHECK(three[2].k1 == 2);
  CHECK(three[2].k2 == 1);
  CHECK(three[1].mu == 1.0 / 25);
  CHECK(three[2].mu == 1.0 / 25);
  CHECK_THROWS(field::enumerate_modes(0));
}

TEST_CASE("enumeration matches brute-force sort and is prefix-stable") {
  const int s = 1024;
  const auto modes = field::enumerate_modes(s);
  std::vector<std::tuple<int, int, int>> all;
  for (int k1 = 1; k1 <= 60; ++k1)
    for (int k2 = 1; k2 <= 60; ++k2) all.emplace_back(k1 * k1 + k2 * k2, k1, k2);
  std::sort(all.begin(), all.end());
  for (int j = 0; j < s; ++j) {
    REQUIRE(modes[j].k1 == std::get<1>(all[j]));
    REQUIRE(modes[j].k2 == std::get<2>(all[j]));
    const double w = std::get<0>(all[j]);
    REQUIRE(modes[j].mu == 1.0 / (w * w));
    if (j) REQUIRE(modes[j - 1].mu >= modes[j].mu);
  }
  const auto shorter = field::enumerate_modes(100);
  for (int j = 0; j < 100; ++j) CHECK((shorter[j].k1 == modes[j].k1 && shorter[j].k2 == modes[j].k2));
}

TEST_CASE("coefficient examples") {
  const auto affine = field::FieldSpec::make(field::Law::Affine, 8);
  const auto logaff = field::FieldSpec::make(field::Law::LogAffine, 8);
  const std::vector<double> zero(8, 0.0);
  CHECK(field::eval_coefficient(affine, zero, 0.3, 0.7) == 0.5);
  CHECK(field::eval_coefficient(logaff, zero, 0.3, 0.7) == 1.0);
  const std::vector<double> y1{0.5};
  CHECK(field::eval_coefficient(affine, y1, 0.5, 0.5) == doctest::Approx(0.625).epsilon(1e-15));
  const std::vector<double> too_long(9, 0.0);
  CHECK_THROWS(field::eval_coefficient(affine, too_long, 0.5, 0.5));
  CHECK(field::parse_law("logaffine") == field::Law::LogAffine);
  CHECK_THROWS_AS(field::parse_law("lognormal"), ConfigError);
  CHECK_THROWS_AS(field::FieldSpec::make(field::Law::Affine, 4, 0.0), ConfigError);
}

TEST_CASE("truncation and zero padding agree") {
  const auto spec = field::FieldSpec::make(field::Law::Affine, 32);
  std::vector<double> y(32);
  for (int j = 0; j < 32; ++j) y[j] = 0.5 * std::sin(j + 1.0);
  CHECK(field::truncate(y, 32) == y);
  const auto t = field::truncate(y, 10);
  std::vector<double> padded = t;
  padded.resize(32, 0.0);
  for (double x1 : {0.1, 0.45, 0.8})
    for (double x2 : {0.2, 0.5, 0.95})
      CHECK(field::eval_coefficient(spec, t, x1, x2) == field::eval_coefficient(spec, padded, x1, x2));
  CHECK_THROWS(field::truncate(y, 33));
}

TEST_CASE("affine law is linear in y") {
  const auto spec = field::FieldSpec::make(field::Law::Affine, 16);
  std::vector<double> a(16, 0.0), b(16, 0.0), ab(16, 0.0);
  for (int j = 0; j < 8; ++j) a[j] = ab[j] = 0.3 - 0.07 * j;
  for (int j = 8; j < 16; ++j) b[j] = ab[j] = -0.4 + 0.05 * j;
  for (double x1 : {0.13, 0.77})
    for (double x2 : {0.31, 0.59}) {
      const double lhs = field::eval_coefficient(spec, ab, x1, x2);
      const double rhs = field::eval_coefficient(spec, a, x1, x2) + field::eval_coefficient(spec, b, x1, x2) - 0.5;
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
    }
}

TEST_CASE("affine positivity margin") {
  const int s = 1024;
  const auto spec = field::FieldSpec::make(field::Law::Affine, s);
  double mu_sum = 0.0;
  for (const auto& md : spec.modes) mu_sum += md.mu;
  const double margin = 0.5 - mu_sum / 2;
  REQUIRE(margin > 0.0);
  std::vector<double> xs(64);
  for (int i = 0; i < 64; ++i) xs[i] = (i + 0.5) / 64;
  field::TensorCoefficient tc(spec, xs);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  std::vector<double> y(s), out(64 * 64), scratch;
  double lowest = 1.0;
  for (int k = 0; k < 1000; ++k) {
    for (auto& v : y) v = U(rng);
    tc.evaluate(y, out, scratch);
    lowest = std::min(lowest, *std::min_element(out.begin(), out.end()));
  }
  CHECK(lowest >= margin);
}

TEST_CASE("tensor evaluation matches pointwise evaluation") {
  for (auto law : {field::Law::Affine, field::Law::LogAffine}) {
    const auto spec = field::FieldSpec::make(law, 40);
    std::vector<double> xs{0.05, 0.21, 0.5, 0.64, 0.99};
    field::TensorCoefficient tc(spec, xs);
    std::vector<double> y(25);
    for (int j = 0; j < 25; ++j) y[j] = 0.49 * std::cos(3.0 * j);
    std::vector<double> out(25), scratch;
    tc.evaluate(y, out, scratch);
    for (std::size_t i1 = 0; i1 < 5; ++i1)
      for (std::size_t i2 = 0; i2 < 5; ++i2)
        CHECK(out[i1 * 5 + i2] == doctest::Approx(field::eval_coefficient(spec, y, xs[i1], xs[i2])).epsilon(1e-13));
    const std::vector<double> zero(3, 0.0);
    tc.evaluate(zero, out, scratch);
    CHECK(out[7] == (law == field::Law::Affine ? 0.5 : 1.0));
  }
}
