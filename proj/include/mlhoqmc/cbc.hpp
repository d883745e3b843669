#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "mlhoqmc/field.hpp"
#include "mlhoqmc/plr.hpp"

namespace mlhoqmc::cbc {

/// Which beta sequence feeds the weights: the coarsest level integrates the
/// posterior density itself, finer levels integrate level differences.
enum class LevelClass { Base, Increment };

LevelClass parse_level_class(std::string_view name);
std::string_view to_string(LevelClass cls);

struct SpodWeights {
  int alpha = 2;
  std::vector<double> beta;
  double walsh_constant = 0.1;

  /// Throws std::invalid_argument on alpha < 1, C <= 0 or negative beta.
  void validate() const;
};

/// beta_j = mu_j (Base) or mu_j * pi * max(k1_j, k2_j) (Increment).
SpodWeights make_weights(std::span<const field::KlMode> modes, int alpha, double walsh_constant, LevelClass cls);

/// |nu|! * prod_{j in u} 2^{delta(nu_j, alpha)} beta_{u_j}^{nu_j}, where
/// |nu| = sum_j nu_j and u holds 0-based coordinate indices.
double spod_weight(std::span<const int> u, std::span<const int> nu, const SpodWeights& w);

/// Walsh-series kernel omega(x) = sum_{k>=1} 2^{-lambda mu1(k)} wal_k(x) with
/// lambda = max(alpha, 2) and mu1(k) the position of the leading bit of k,
/// evaluated in closed form at x = k_bits * 2^{-m}.
double walsh_kernel(std::uint64_t k_bits, int m, int alpha);

struct QualityScore {
  double value = 0.0;
};

/// Worst-case error criterion minimized by the construction, evaluated
/// directly over the 2^m points.
QualityScore quality(const plr::GeneratingVector& gv, const SpodWeights& w);

struct CbcOptions {
  /// Below this m the candidate scores are computed by direct summation
  /// instead of FFT-based cyclic correlation.
  int direct_below_m = 8;
};

/// Greedy component-by-component construction of alpha*s polynomials.
/// Ties (relative 1e-12) go to the smallest mask.
plr::GeneratingVector cbc_construct(int m, int s, const SpodWeights& w, const CbcOptions& opt = {});

/// Scores of every candidate for the next component given fixed prefix
/// components (alpha-major order). scores[g-1] belongs to mask g. Used by the
/// greedy-optimality checks.
std::vector<double> candidate_scores(int m, std::span<const gf2::Poly2> prefix, const SpodWeights& w);

/// File-backed cache of generating vectors keyed by (m, alpha, class, C).
/// A stored vector of dimension s' >= s is truncated on lookup, since the
/// greedy construction is prefix-consistent in s.
class VectorStore {
 public:
  explicit VectorStore(std::filesystem::path dir, bool build_missing = true);

  plr::GeneratingVector get(int m, int s, int alpha, double walsh_constant, LevelClass cls,
                            std::span<const field::KlMode> modes);
  std::filesystem::path path_for(int m, int alpha, double walsh_constant, LevelClass cls) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  bool build_missing_;
  std::mutex mutex_;
  std::map<std::tuple<int, int, int, double>, plr::GeneratingVector> memo_;
};

}  // namespace mlhoqmc::cbc
