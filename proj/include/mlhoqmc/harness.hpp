#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlhoqmc/estimators.hpp"

namespace mlhoqmc::harness {

struct ConvergenceRecord {
  est::EstimatorKind kind = est::EstimatorKind::MlSplit;
  int L = 0;
  double work = 0.0;
  double error = 0.0;
  double value = 0.0;
};

/// Least-squares slope of log(error) against log(work) after dropping the
/// first `skip` records (in work order). Throws ConfigError with fewer than
/// two usable records or a non-positive error/work.
double fit_slope(std::span<const ConvergenceRecord> records, int skip = 3);
double fit_slope(std::span<const double> work, std::span<const double> error, int skip = 0);

/// Synthetic observation data from a fixed truth parameter.
struct DataConfig {
  std::uint64_t seed = 2024;
  int truth_level = 7;
  /// Nonzero entries of the truth vector; the rest is zero.
  std::vector<double> truth = default_truth();

  static std::vector<double> default_truth();
};

struct GeneratedData {
  double observation = 0.0;  // exact fine-level observation at the truth
  double draw = 0.0;         // standard normal draw
  double delta = 0.0;        // observation + sqrt(gamma) * draw
  double gamma = 0.0;
};

/// gamma = 0 is accepted here and returns the exact observation.
GeneratedData generate_data(const field::FieldSpec& spec, const fem::FemOptions& fem, double gamma,
                            const DataConfig& cfg);

enum class StudyMode { Forward, Bayes };

struct StudyPlan {
  StudyMode mode = StudyMode::Bayes;
  field::Law law = field::Law::Affine;
  std::vector<double> gammas{1.0};
  int L_min = 0;
  int L_max = 5;
  std::vector<est::EstimatorKind> kinds{est::EstimatorKind::SlRatio, est::EstimatorKind::MlRatio,
                                        est::EstimatorKind::MlSplit};
  /// Reference: multilevel splitting on this level with the default cap,
  /// i.e. s = 2^{reference_level + 1}. Defaults to L_max + 1.
  std::optional<int> reference_level;
  est::ScheduleParams schedule;
  est::RunOptions run;
  fem::FemOptions fem;
  double eps_z = 1e-300;
  /// Explicit data; otherwise generated per gamma from `data`.
  std::optional<double> delta;
  DataConfig data;
  std::filesystem::path vector_dir = "vectors";
  bool build_cbc = true;
  std::optional<std::uint64_t> mc_sl_samples;

  int ref_level() const { return reference_level.value_or(L_max + 1); }
  /// Throws ConfigError on an inconsistent plan.
  void validate() const;
};

struct GammaResult {
  double gamma = 0.0;  // infinity in forward mode
  double delta = 0.0;
  std::optional<GeneratedData> data;
  double reference = 0.0;
  std::uint64_t reference_work = 0;
  std::vector<ConvergenceRecord> records;  // sorted by work within each kind
  std::map<est::EstimatorKind, double> slopes;
};

struct StudyResult {
  std::vector<GammaResult> per_gamma;
  std::vector<std::string> vector_files;
};

/// Runs every (gamma, kind, L) estimator and the reference. Deterministic.
StudyResult run_study(const StudyPlan& plan);

/// CSV `kind,L,work,error,value` with a header row.
void write_csv(std::ostream& os, std::span<const ConvergenceRecord> records);
std::vector<ConvergenceRecord> read_csv(std::istream& is);

/// Writes one CSV per gamma plus manifest.json into out_dir; returns the CSV paths.
std::vector<std::filesystem::path> write_study(const std::filesystem::path& out_dir, const StudyPlan& plan,
                                               const StudyResult& result, const std::string& config_echo,
                                               double wall_seconds);

/// Builds a plan from a JSON document. Keys may be nested objects or dotted
/// names ("noise.gamma"); unknown keys are rejected.
StudyPlan plan_from_json(const std::string& text);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace mlhoqmc::harness
