#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mlhoqmc/cbc.hpp"
#include "mlhoqmc/errors.hpp"
#include "oracles.hpp"

using namespace mlhoqmc;
using gf2::Poly2;

namespace {

// Walsh series of the kernel, summed term by term up to 2^(m+12). Beyond
// that every dyadic block of 2^m indices shares one leading-bit weight and
// its characters sum to 2^m [x = 0], so the tail is added in closed form.
double kernel_by_series(std::uint64_t x_bits, int m, int alpha) {
  const int lambda = std::max(alpha, 2);
  double sum = 0.0;
  const std::uint64_t K = std::uint64_t{1} << (m + 12);
  for (std::uint64_t k = 1; k < K; ++k) {
    int lead = 0;
    for (std::uint64_t t = k; t; t >>= 1) ++lead;
    // wal_k(x) = (-1)^{sum_i kappa_i xi_{i+1}}, xi_{i+1} = bit (m-1-i) of x_bits
    int parity = 0;
    for (int i = 0; i < m; ++i)
      if ((k >> i) & 1u) parity ^= static_cast<int>((x_bits >> (m - 1 - i)) & 1u);
    sum += (parity ? -1.0 : 1.0) * std::ldexp(1.0, -lambda * lead);
  }
  if (x_bits == 0)
    for (int a = m + 13; a < m + 200; ++a) sum += std::ldexp(1.0, a - 1 - lambda * a);
  return sum;
}

// Criterion evaluated by explicit enumeration of coordinate subsets and
// order multi-indices. comps may end part-way through a block.
double brute_criterion(int m, const std::vector<std::uint64_t>& comps, const cbc::SpodWeights& w) {
  const int alpha = w.alpha;
  const auto& P = gf2::table_modulus(m);
  const int blocks = (static_cast<int>(comps.size()) + alpha - 1) / alpha;
  const std::size_t N = std::size_t{1} << m;
  const double c_blk = w.walsh_constant * std::pow(2.0, alpha * (alpha - 1) / 2);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> Y(static_cast<std::size_t>(blocks), 1.0);
    for (std::size_t c = 0; c < comps.size(); ++c) {
      const std::uint64_t num = oracle::remainder(oracle::schoolbook_mul(n, comps[c]), P.poly().bits());
      const double x = oracle::v_m(num, P.poly().bits(), m);
      Y[c / alpha] *= 1.0 + cbc::walsh_kernel(static_cast<std::uint64_t>(std::ldexp(x, m)), m, alpha);
    }
    for (auto& y : Y) y -= 1.0;
    for (unsigned u = 1; u < (1u << blocks); ++u) {
      std::vector<int> members;
      for (int j = 0; j < blocks; ++j)
        if (u & (1u << j)) members.push_back(j);
      std::vector<int> nu(members.size(), 1);
      for (;;) {
        int order = 0;
        double prod = 1.0;
        for (std::size_t i = 0; i < members.size(); ++i) {
          order += nu[i];
          prod *= c_blk * (nu[i] == alpha ? 2.0 : 1.0) * std::pow(w.beta[members[i]], nu[i]) * Y[members[i]];
        }
        total += std::tgamma(order + 1.0) * prod;
        std::size_t i = 0;
        while (i < nu.size() && nu[i] == alpha) nu[i++] = 1;
        if (i == nu.size()) break;
        ++nu[i];
      }
    }
  }
  return total / static_cast<double>(N);
}

cbc::SpodWeights weights(int s, int alpha, double C = 0.1, cbc::LevelClass cls = cbc::LevelClass::Base) {
  const auto modes = field::enumerate_modes(s);
  return cbc::make_weights(modes, alpha, C, cls);
}

std::vector<std::uint64_t> masks(const plr::GeneratingVector& gv) {
  std::vector<std::uint64_t> out;
  for (auto g : gv.components) out.push_back(g.bits());
  return out;
}

}  // namespace

TEST_CASE("spod weight") {
  const auto w = weights(4, 2);
  CHECK(cbc::spod_weight({}, {}, w) == 1.0);
  const std::vector<int> u{0};
  CHECK(cbc::spod_weight(u, std::vector<int>{1}, w) == doctest::Approx(0.25).epsilon(1e-15));
  // order factor is (sum of nu)! : 2! * 2^1 * (1/4)^2
  CHECK(cbc::spod_weight(u, std::vector<int>{2}, w) == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<int> u2{0, 1};
  CHECK(cbc::spod_weight(u2, std::vector<int>{1, 2}, w) == doctest::Approx(6.0 * 0.25 * 2.0 / 625.0).epsilon(1e-14));
  CHECK_THROWS(cbc::spod_weight(u, std::vector<int>{3}, w));
  CHECK_THROWS(cbc::spod_weight(u, std::vector<int>{0}, w));
}

TEST_CASE("weights follow the mode enumeration") {
  const auto modes = field::enumerate_modes(6);
  const auto base = cbc::make_weights(modes, 2, 0.1, cbc::LevelClass::Base);
  const auto inc = cbc::make_weights(modes, 2, 0.1, cbc::LevelClass::Increment);
  for (int j = 0; j < 6; ++j) {
    CHECK(base.beta[j] == modes[j].mu);
    CHECK(inc.beta[j] == doctest::Approx(modes[j].mu * std::numbers::pi * std::max(modes[j].k1, modes[j].k2)));
    if (j) CHECK(base.beta[j] <= base.beta[j - 1]);
  }
  CHECK(cbc::parse_level_class("increment") == cbc::LevelClass::Increment);
  CHECK_THROWS_AS(cbc::parse_level_class("fine"), ConfigError);
  cbc::SpodWeights bad = base;
  bad.walsh_constant = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("kernel closed form matches its Walsh series") {
  for (int alpha : {1, 2, 3})
    for (int m = 1; m <= 5; ++m)
      for (std::uint64_t x = 0; x < (std::uint64_t{1} << m); ++x)
        REQUIRE(cbc::walsh_kernel(x, m, alpha) == doctest::Approx(kernel_by_series(x, m, alpha)).epsilon(1e-9));
  CHECK(cbc::walsh_kernel(0, 4, 2) == 0.5);
  CHECK(cbc::walsh_kernel(8, 4, 2) == -0.25);
}

TEST_CASE("quality: explicit small cases") {
  SUBCASE("s = 1, m = 2, four-point sum") {
    const auto w = weights(1, 2);
    plr::GeneratingVector gv{2, 2, 1, {Poly2(1), Poly2(2)}};
    const auto pts = plr::classical_points(gv.modulus(), gv.components, 2);
    double direct = 0.0;
    const double c = 0.1 * 2.0;
    const double coeff = c * w.beta[0] + 2.0 * c * 2.0 * w.beta[0] * w.beta[0];
    for (std::size_t n = 0; n < 4; ++n) {
      const double Y = (1 + cbc::walsh_kernel(pts.raw(n, 0), 2, 2)) * (1 + cbc::walsh_kernel(pts.raw(n, 1), 2, 2)) - 1;
      direct += coeff * Y;
    }
    CHECK(cbc::quality(gv, w).value == doctest::Approx(direct / 4).epsilon(1e-13));
  }
  SUBCASE("zero weights") {
    auto w = weights(3, 2);
    std::fill(w.beta.begin(), w.beta.end(), 0.0);
    plr::GeneratingVector gv{5, 2, 3, {Poly2(1), Poly2(3), Poly2(7), Poly2(11), Poly2(13), Poly2(17)}};
    CHECK(cbc::quality(gv, w).value == 0.0);
  }
  SUBCASE("multi-coordinate enumeration") {
    for (int alpha : {1, 2, 3}) {
      const auto w = weights(3, alpha, 0.7, cbc::LevelClass::Increment);
      plr::GeneratingVector gv{5, alpha, 3, {}};
      for (int c = 0; c < 3 * alpha; ++c) gv.components.emplace_back(1 + (7 * c + 3) % 31);
      CHECK(cbc::quality(gv, w).value == doctest::Approx(brute_criterion(5, masks(gv), w)).epsilon(1e-12));
    }
  }
  SUBCASE("appending a zero-weight coordinate leaves the score unchanged") {
    auto w = weights(3, 2);
    w.beta[2] = 0.0;
    plr::GeneratingVector gv{6, 2, 3, {Poly2(1), Poly2(9), Poly2(21), Poly2(40), Poly2(5), Poly2(63)}};
    CHECK(cbc::quality(gv, w).value == doctest::Approx(cbc::quality(gv.truncated(2), w).value).epsilon(1e-14));
  }
}

TEST_CASE("s = 1, alpha = 1 equals the exhaustive minimizer") {
  for (int m = 1; m <= 9; ++m) {
    const auto w = weights(1, 1);
    const auto gv = cbc::cbc_construct(m, 1, w);
    double best = 1e300;
    std::uint64_t arg = 0;
    for (std::uint64_t g = 1; g < (std::uint64_t{1} << m); ++g) {
      plr::GeneratingVector cand{m, 1, 1, {Poly2(g)}};
      const double q = cbc::quality(cand, w).value;
      if (q < best - 1e-13) {
        best = q;
        arg = g;
      }
    }
    CHECK(gv.components[0].bits() == arg);
  }
}

TEST_CASE("greedy optimality against brute-force criterion") {
  for (int alpha : {1, 2}) {
    const int m = 5;
    const int s = 3;
    const auto w = weights(s, alpha, 0.1, cbc::LevelClass::Increment);
    const auto gv = cbc::cbc_construct(m, s, w);
    std::vector<std::uint64_t> prefix;
    for (int c = 0; c < alpha * s; ++c) {
      double best = 1e300;
      std::vector<double> all;
      for (std::uint64_t g = 1; g < 32; ++g) {
        auto trial = prefix;
        trial.push_back(g);
        all.push_back(brute_criterion(m, trial, w));
        best = std::min(best, all.back());
      }
      const std::uint64_t chosen = gv.components[c].bits();
      const double tol = 1e-12 * std::max(std::abs(best), 1e-3);
      CHECK(all[chosen - 1] <= best + tol);
      // smallest mask among ties
      for (std::uint64_t g = 1; g < chosen; ++g) CHECK(all[g - 1] > best + tol);
      // the library's own candidate scores agree with the enumeration
      std::vector<Poly2> pfx;
      for (auto p : prefix) pfx.emplace_back(p);
      const auto scores = cbc::candidate_scores(m, pfx, w);
      for (std::uint64_t g = 1; g < 32; ++g) CHECK(scores[g - 1] == doctest::Approx(all[g - 1]).epsilon(1e-11));
      prefix.push_back(chosen);
    }
  }
}

TEST_CASE("FFT and direct candidate scoring give the same vector") {
  const auto w = weights(6, 2, 0.1, cbc::LevelClass::Increment);
  cbc::CbcOptions direct;
  direct.direct_below_m = 99;
  cbc::CbcOptions fast;
  fast.direct_below_m = 1;
  for (int m : {4, 7, 9}) {
    const auto a = cbc::cbc_construct(m, 6, w, direct);
    const auto b = cbc::cbc_construct(m, 6, w, fast);
    CHECK(a.components == b.components);
    CHECK(cbc::quality(a, w).value == doctest::Approx(cbc::quality(b, w).value).epsilon(1e-12));
  }
}

TEST_CASE("CBC beats random vectors, is deterministic and prefix-consistent") {
  const int m = 6, s = 4, alpha = 2;
  const auto w = weights(s, alpha);
  const auto gv = cbc::cbc_construct(m, s, w);
  gv.validate();
  CHECK(gv == gv);
  const double q = cbc::quality(gv, w).value;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::uint64_t> G(1, 63);
  double best_random = 1e300;
  for (int trial = 0; trial < 32; ++trial) {
    plr::GeneratingVector r{m, alpha, s, {}};
    for (int c = 0; c < alpha * s; ++c) r.components.emplace_back(G(rng));
    best_random = std::min(best_random, cbc::quality(r, w).value);
  }
  CHECK(q <= best_random);
  CHECK(cbc::cbc_construct(m, s, w).components == gv.components);
  const auto longer = cbc::cbc_construct(m, 8, weights(8, alpha));
  CHECK(longer.truncated(s).components == gv.components);
}

TEST_CASE("argument validation") {
  const auto w = weights(2, 2);
  CHECK_THROWS_AS(cbc::cbc_construct(0, 2, w), ConfigError);
  CHECK_THROWS_AS(cbc::cbc_construct(5, 3, w), ConfigError);
  CHECK_THROWS_AS(cbc::cbc_construct(40, 1, w), ConfigError);
}

TEST_CASE("order-2 rules integrate a smooth product at a higher-order rate") {
  const int s = 8;
  const auto w = weights(s, 2);
  std::vector<double> lx, ly;
  for (int m = 6; m <= 12; ++m) {
    const auto pts = plr::interlaced_points(cbc::cbc_construct(m, s, w));
    const double q = plr::qmc_average(pts, [&](std::span<const double> x) {
      double f = 1.0;
      for (int j = 0; j < s; ++j) {
        const double y = x[j] - 0.5;
        f *= 1.0 + w.beta[j] * (y * y - 1.0 / 12);
      }
      return f;
    });
    lx.push_back(std::log(std::ldexp(1.0, m)));
    ly.push_back(std::log(std::abs(q - 1.0)));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= lx.size();
  my /= ly.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  CHECK(sxy / sxx <= -1.5);
}

TEST_CASE("vector store caches and truncates") {
  const auto dir = std::filesystem::temp_directory_path() / "mlhoqmc_store_test";
  std::filesystem::remove_all(dir);
  const auto modes = field::enumerate_modes(16);
  cbc::VectorStore store(dir);
  const auto a = store.get(6, 8, 2, 0.1, cbc::LevelClass::Base, modes);
  CHECK(std::filesystem::exists(store.path_for(6, 2, 0.1, cbc::LevelClass::Base)));
  cbc::VectorStore again(dir, false);
  const auto b = again.get(6, 4, 2, 0.1, cbc::LevelClass::Base, modes);
  CHECK(b.components == a.truncated(4).components);
  CHECK_THROWS_AS(again.get(6, 16, 2, 0.1, cbc::LevelClass::Base, modes), ConfigError);
  CHECK_THROWS_AS(again.get(7, 4, 2, 0.1, cbc::LevelClass::Base, modes), ConfigError);
  std::filesystem::remove_all(dir);
}
