#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlhoqmc/cbc.hpp"
#include "mlhoqmc/fem.hpp"
#include "mlhoqmc/field.hpp"
#include "mlhoqmc/plr.hpp"

namespace mlhoqmc::est {

// ---------------------------------------------------------------- schedules

struct ScheduleParams {
  double tau = 2.0;
  double d = 2.0;
  double theta = 2.0;
  double t = 1.0;
  double p0 = 0.5;
  double pt = 2.0 / 3.0;
  int ell0 = 1;
  /// Offset added to L in the dimension cap 2^{p0 tau (L + offset) / (theta (1 - p0))}.
  /// 1 gives s = 2^{L+1} at the finest levels, 0 gives 2^L.
  int cap_exponent = 1;
  /// Use the tabulated sample numbers where available.
  bool pin_table = true;
};

enum class SampleKind { Qmc, Mc };

struct LevelSchedule {
  int L = 0;
  SampleKind kind = SampleKind::Qmc;
  ScheduleParams params;
  std::vector<double> h;
  std::vector<int> s;
  std::vector<int> m;               // log2 N_l for QMC; floor(log2 N_l) for MC
  std::vector<std::uint64_t> N;     // samples per level
  bool pinned = false;              // sample numbers taken from the table

  int levels() const { return L + 1; }
  /// sum_l N_l h_l^{-2} s_l
  std::uint64_t work() const;
};

/// s_l = ceil(min(2^{tau d l / (theta t)}, cap)), non-decreasing in l.
std::vector<int> truncation_dimensions(int L, const ScheduleParams& p);

/// m_l from the Lagrangian optimum with ceilings as printed.
std::vector<int> qmc_exponents_formula(int L, const ScheduleParams& p);

/// N_0 = 2^{2Lt} ceil((C E)^2), N_l = ceil(N_0 ratio_l^{2/3}).
std::vector<std::uint64_t> mc_samples_formula(int L, const ScheduleParams& p);

/// Tabulated exponents (empty when L is outside the table).
std::vector<int> table_qmc(int L);
std::vector<int> table_mc(int L);

LevelSchedule schedule_qmc(int L, const ScheduleParams& p = {});
LevelSchedule schedule_mc(int L, const ScheduleParams& p = {});

// --------------------------------------------------------- posterior problem

struct NoiseModel {
  /// Observation noise variance; infinity switches the data off (prior mode).
  double gamma = 1.0;
  double delta = 0.0;
  int K = 1;

  void validate() const;
  bool is_prior() const { return std::isinf(gamma); }
  static NoiseModel prior() { return {std::numeric_limits<double>::infinity(), 0.0, 1}; }
};

/// 0.5 (delta - g)^2 / gamma; zero in prior mode.
double potential(double g_value, const NoiseModel& noise);

enum class QoiKind { Functional, Constant };

struct Problem {
  field::FieldSpec field;
  fem::FemOptions fem;
  NoiseModel noise;
  QoiKind qoi = QoiKind::Functional;
  double eps_z = 1e-300;
};

struct PointValue {
  double density = 1.0;  // Theta
  double qoi = 0.0;      // phi
};

/// Solves on the given level with the first y.size() parameters active.
PointValue theta(const Problem& pb, int level, std::span<const double> y);

/// Level-indexed solver cache shared by the estimators (thread-safe reads).
class LevelEvaluator {
 public:
  LevelEvaluator(const Problem& pb, int max_level);
  PointValue operator()(int level, std::span<const double> y, fem::Workspace& ws) const;
  const Problem& problem() const { return pb_; }

 private:
  Problem pb_;
  std::vector<fem::ForwardSolver> solvers_;
};

// --------------------------------------------------------------- estimators

enum class EstimatorKind { SlRatio, MlRatio, MlSplit, McSl, MlmcRatio, MlmcSplit };

std::string_view to_string(EstimatorKind k);
EstimatorKind parse_kind(std::string_view name);
bool is_mc(EstimatorKind k);

/// Per-level quadrature averages. "fine" evaluations use level l with s_l
/// parameters, "coarse" ones level l-1 with the first s_{l-1} parameters at
/// the same points.
struct LevelSums {
  int level = 0;
  std::uint64_t N = 0;
  int s = 0;
  int s_coarse = 0;
  double h = 0.0;
  double zp_fine = 0, zp_coarse = 0, z_fine = 0, z_coarse = 0;
  double dzp = 0, dz = 0;  // averages of pointwise differences
};

struct EstimatorRun {
  EstimatorKind kind = EstimatorKind::MlRatio;
  double value = 0.0;
  double numerator = 0.0;    // telescoped Z' estimate (ratio kinds)
  double denominator = 0.0;  // telescoped Z estimate (ratio kinds)
  std::uint64_t work = 0;
  std::vector<LevelSums> per_level;
  std::vector<double> repetitions;  // MC kinds: one value per repetition
  std::string provenance;
};

struct RunOptions {
  int threads = 1;
  /// QMC settings
  int alpha = 2;
  double walsh_constant = 0.1;
  /// MC settings
  int repetitions = 5;
  std::uint64_t seed = 12345;
};

/// Source of per-level point sets: one generating vector per (m, s, class).
using VectorSource = cbc::VectorStore;

/// Quadrature average over a point set (coordinates mapped by y = x - 1/2)
/// of the four level-l integrands and their differences. s_coarse <= 0
/// skips the coarse evaluation (level 0, single-level runs).
LevelSums level_sums_qmc(const LevelEvaluator& ev, int level, int s, int s_coarse, const plr::PointSet& pts, int threads);

/// Same for N i.i.d. uniform points on [-1/2, 1/2]^s drawn from
/// per-chunk seeded engines keyed by (seed, repetition, level, chunk).
LevelSums level_sums_mc(const LevelEvaluator& ev, int level, int s, int s_coarse, std::uint64_t N, std::uint64_t seed,
                        int repetition, int threads);

/// Combinators over per-level sums.
double combine_ratio(std::span<const LevelSums> levels, double eps_z, double* num = nullptr, double* den = nullptr);
double combine_split(std::span<const LevelSums> levels, double eps_z);

/// Single level: N = 2^m points (default m = L + 1), s parameters (default 2^{L+1}).
EstimatorRun sl_ratio(const Problem& pb, int L, VectorSource& vectors, const RunOptions& opt, std::optional<int> m = {},
                      std::optional<int> s = {});
EstimatorRun ml_ratio(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors, const RunOptions& opt);
EstimatorRun ml_split(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors, const RunOptions& opt);

/// Both multilevel QMC combinators from one set of forward solves.
std::pair<EstimatorRun, EstimatorRun> ml_qmc_both(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors,
                                                  const RunOptions& opt);

/// MC kinds: McSl (N samples on level L, default 16^{L+1}), MlmcRatio,
/// MlmcSplit. value is the mean over repetitions.
EstimatorRun mc_estimator(const Problem& pb, EstimatorKind kind, const LevelSchedule& sch, const RunOptions& opt,
                          std::optional<std::uint64_t> sl_samples = {});

/// Both MLMC combinators from shared samples.
std::pair<EstimatorRun, EstimatorRun> mlmc_both(const Problem& pb, const LevelSchedule& sch, const RunOptions& opt);

}  // namespace mlhoqmc::est
