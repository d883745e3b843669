#include "mlhoqmc/estimators.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

#include "mlhoqmc/compensated_sum.hpp"
#include "mlhoqmc/errors.hpp"

namespace mlhoqmc::est {

// ---------------------------------------------------------------- schedules

namespace {

// Sample-number exponents of the published runs.
const std::vector<std::vector<int>> kTableQmc = {
    {1},
    {3, 1},
    {5, 3, 1},
    {7, 5, 3, 1},
    {9, 7, 5, 3, 1},
    {11, 9, 6, 5, 3, 2},
    {13, 11, 8, 6, 5, 3, 2},
    {15, 13, 10, 8, 6, 5, 3, 2},
    {17, 15, 12, 10, 8, 6, 5, 3, 2},
};

const std::vector<std::vector<int>> kTableMc = {
    {1},
    {5, 2},
    {10, 7, 4},
    {15, 11, 8, 5},
    {19, 15, 12, 9, 7},
    {24, 20, 16, 13, 10, 8},
    {28, 24, 20, 17, 14, 11, 9},
};

// ceil that ignores representation noise just above an integer
double safe_ceil(double x) { return std::ceil(x - 1e-9); }

void check_L(int L) {
  if (L < 0 || L > 10) throw ConfigError("schedule.L must lie in [0, 10]");
}

std::vector<double> mesh_widths(int L, int ell0) {
  std::vector<double> h;
  for (int l = 0; l <= L; ++l) h.push_back(std::ldexp(1.0, -(l + ell0)));
  return h;
}

}  // namespace

std::uint64_t LevelSchedule::work() const {
  std::uint64_t w = 0;
  for (int l = 0; l <= L; ++l) {
    const std::uint64_t inv_h2 = std::uint64_t{1} << (2 * (l + params.ell0));
    w += N[static_cast<std::size_t>(l)] * inv_h2 * static_cast<std::uint64_t>(s[static_cast<std::size_t>(l)]);
  }
  return w;
}

std::vector<int> truncation_dimensions(int L, const ScheduleParams& p) {
  check_L(L);
  const double cap = p.p0 * p.tau * (L + p.cap_exponent) / (p.theta * (1.0 - p.p0));
  std::vector<int> s;
  for (int l = 0; l <= L; ++l) {
    const double grow = p.tau * p.d * l / (p.theta * p.t);
    s.push_back(static_cast<int>(safe_ceil(std::exp2(std::min(grow, cap)))));
  }
  return s;
}

std::vector<int> qmc_exponents_formula(int L, const ScheduleParams& p) {
  const auto s = truncation_dimensions(L, p);
  const auto h = mesh_widths(L, p.ell0);
  double E = 0.0;
  for (int l = 0; l <= L; ++l) E += std::pow(s[l] * std::pow(h[l], p.tau * p.pt - p.d), 1.0 / (1.0 + p.pt));
  const double q = p.pt / (1.0 + p.pt);
  const double m0 = safe_ceil(p.pt * (p.tau * (L + p.ell0) + std::log2(E)) - q * (p.ell0 * (p.tau + p.d) + std::log2(s[0])));
  std::vector<int> m;
  for (int l = 0; l <= L; ++l) {
    const double ml = l == 0 ? m0 : safe_ceil(m0 - q * (l * (p.tau + p.d) + std::log2(static_cast<double>(s[l]) / s[0])));
    m.push_back(std::max(1, static_cast<int>(ml)));
  }
  return m;
}

std::vector<std::uint64_t> mc_samples_formula(int L, const ScheduleParams& p) {
  const auto s = truncation_dimensions(L, p);
  const auto h = mesh_widths(L, p.ell0);
  double E = 0.0;
  for (int l = 0; l <= L; ++l) E += std::cbrt(s[l] * std::pow(h[l], 2 * p.tau - p.d));
  const double C = std::cbrt(std::pow(h[0], p.tau + p.d) / s[0]);
  const double N0 = std::exp2(2.0 * L * p.t) * safe_ceil((C * E) * (C * E));
  std::vector<std::uint64_t> N;
  for (int l = 0; l <= L; ++l) {
    const double ratio = std::pow(h[l] / h[0], p.tau + p.d) * s[0] / s[l];
    // The ceiling is applied to the whole product; applied to the ratio
    // alone it would round every N_l up to N_0.
    N.push_back(static_cast<std::uint64_t>(std::max(1.0, safe_ceil(N0 * std::pow(ratio, 2.0 / 3.0)))));
  }
  return N;
}

std::vector<int> table_qmc(int L) {
  if (L < 0 || L >= static_cast<int>(kTableQmc.size())) return {};
  return kTableQmc[static_cast<std::size_t>(L)];
}

std::vector<int> table_mc(int L) {
  if (L < 0 || L >= static_cast<int>(kTableMc.size())) return {};
  return kTableMc[static_cast<std::size_t>(L)];
}

LevelSchedule schedule_qmc(int L, const ScheduleParams& p) {
  LevelSchedule sch;
  sch.L = L;
  sch.kind = SampleKind::Qmc;
  sch.params = p;
  sch.h = mesh_widths(L, p.ell0);
  sch.s = truncation_dimensions(L, p);
  const auto tab = table_qmc(L);
  sch.pinned = p.pin_table && !tab.empty();
  sch.m = sch.pinned ? tab : qmc_exponents_formula(L, p);
  for (int m : sch.m) sch.N.push_back(std::uint64_t{1} << m);
  return sch;
}

LevelSchedule schedule_mc(int L, const ScheduleParams& p) {
  LevelSchedule sch;
  sch.L = L;
  sch.kind = SampleKind::Mc;
  sch.params = p;
  sch.h = mesh_widths(L, p.ell0);
  sch.s = truncation_dimensions(L, p);
  const auto tab = table_mc(L);
  sch.pinned = p.pin_table && !tab.empty();
  if (sch.pinned) {
    sch.m = tab;
    for (int m : tab) sch.N.push_back(std::uint64_t{1} << m);
  } else {
    sch.N = mc_samples_formula(L, p);
    for (auto n : sch.N) sch.m.push_back(static_cast<int>(std::floor(std::log2(static_cast<double>(n)))));
  }
  return sch;
}

// --------------------------------------------------------- posterior problem

void NoiseModel::validate() const {
  if (K != 1) throw ConfigError("only scalar observations (K = 1) are supported");
  if (!(gamma > 0.0)) throw ConfigError("noise.gamma must be positive");
  if (!std::isfinite(delta)) throw ConfigError("noise.delta must be finite");
}

double potential(double g_value, const NoiseModel& noise) {
  if (noise.is_prior()) return 0.0;
  const double r = noise.delta - g_value;
  return 0.5 * r * r / noise.gamma;
}

namespace {

PointValue to_point_value(const Problem& pb, const fem::ForwardSolver::Functionals& f) {
  PointValue v;
  v.density = pb.noise.is_prior() ? 1.0 : std::exp(-potential(f.observation, pb.noise));
  v.qoi = pb.qoi == QoiKind::Constant ? 1.0 : f.qoi;
  return v;
}

}  // namespace

PointValue theta(const Problem& pb, int level, std::span<const double> y) {
  fem::ForwardSolver solver(pb.field, fem::MeshLevel::make(level), pb.fem);
  fem::Workspace ws;
  return to_point_value(pb, solver.solve_functionals(y, ws));
}

LevelEvaluator::LevelEvaluator(const Problem& pb, int max_level) : pb_(pb) {
  pb_.noise.validate();
  solvers_.reserve(static_cast<std::size_t>(max_level) + 1);
  for (int l = 0; l <= max_level; ++l) solvers_.emplace_back(pb_.field, fem::MeshLevel::make(l), pb_.fem);
}

PointValue LevelEvaluator::operator()(int level, std::span<const double> y, fem::Workspace& ws) const {
  return to_point_value(pb_, solvers_.at(static_cast<std::size_t>(level)).solve_functionals(y, ws));
}

// --------------------------------------------------------------- estimators

std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::SlRatio: return "sl-ratio";
    case EstimatorKind::MlRatio: return "ml-ratio";
    case EstimatorKind::MlSplit: return "ml-split";
    case EstimatorKind::McSl: return "mc-sl";
    case EstimatorKind::MlmcRatio: return "mlmc-ratio";
    case EstimatorKind::MlmcSplit: return "mlmc-split";
  }
  return "?";
}

EstimatorKind parse_kind(std::string_view name) {
  for (auto k : {EstimatorKind::SlRatio, EstimatorKind::MlRatio, EstimatorKind::MlSplit, EstimatorKind::McSl,
                 EstimatorKind::MlmcRatio, EstimatorKind::MlmcSplit})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown estimator kind '" + std::string(name) + "'");
}

bool is_mc(EstimatorKind k) {
  return k == EstimatorKind::McSl || k == EstimatorKind::MlmcRatio || k == EstimatorKind::MlmcSplit;
}

namespace {

// Six running sums per chunk: zp_fine, zp_coarse, z_fine, z_coarse, dzp, dz.
using ChunkSums = std::array<CompensatedSum, 6>;

// Runs body(chunk, workspace) for every chunk on up to `threads` workers.
// Results must be written per chunk; reduction happens afterwards in chunk
// order, so the outcome does not depend on the thread count.
template <class Body>
void for_each_chunk(std::size_t chunks, int threads, Body&& body) {
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), chunks));
  if (workers <= 1) {
    fem::Workspace ws;
    for (std::size_t c = 0; c < chunks; ++c) body(c, ws);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      fem::Workspace ws;
      try {
        for (std::size_t c = next++; c < chunks; c = next++) body(c, ws);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = chunks;
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void accumulate(ChunkSums& acc, const PointValue& fine, const PointValue* coarse) {
  const double a = fine.qoi * fine.density;
  acc[0] += a;
  acc[2] += fine.density;
  if (coarse) {
    const double b = coarse->qoi * coarse->density;
    acc[1] += b;
    acc[3] += coarse->density;
    acc[4] += a - b;
    acc[5] += fine.density - coarse->density;
  } else {
    acc[4] += a;
    acc[5] += fine.density;
  }
}

LevelSums reduce(const std::vector<ChunkSums>& parts, int level, std::uint64_t N, int s, int s_coarse) {
  LevelSums out;
  out.level = level;
  out.N = N;
  out.s = s;
  out.s_coarse = std::max(s_coarse, 0);
  std::array<CompensatedSum, 6> total;
  for (const auto& p : parts)
    for (std::size_t k = 0; k < 6; ++k) total[k] += p[k].value();
  const double inv = 1.0 / static_cast<double>(N);
  out.zp_fine = total[0].value() * inv;
  out.zp_coarse = total[1].value() * inv;
  out.z_fine = total[2].value() * inv;
  out.z_coarse = total[3].value() * inv;
  out.dzp = total[4].value() * inv;
  out.dz = total[5].value() * inv;
  return out;
}

constexpr std::size_t kQmcChunk = 64;
constexpr std::size_t kMcChunk = 4096;

}  // namespace

LevelSums level_sums_qmc(const LevelEvaluator& ev, int level, int s, int s_coarse, const plr::PointSet& pts, int threads) {
  if (s < 1 || s > pts.dim()) throw std::invalid_argument("level_sums_qmc: point set dimension below s");
  if (s_coarse > s) throw std::invalid_argument("level_sums_qmc: coarse dimension exceeds fine dimension");
  const bool coarse = s_coarse > 0 && level > 0;
  const std::size_t N = pts.size();
  const std::size_t chunks = (N + kQmcChunk - 1) / kQmcChunk;
  std::vector<ChunkSums> parts(chunks);
  for_each_chunk(chunks, threads, [&](std::size_t c, fem::Workspace& ws) {
    std::vector<double> x(static_cast<std::size_t>(pts.dim()));
    for (std::size_t n = c * kQmcChunk; n < std::min(N, (c + 1) * kQmcChunk); ++n) {
      pts.to_unit_cube(n, x);
      for (int j = 0; j < s; ++j) x[j] -= 0.5;
      const std::span<const double> y(x.data(), static_cast<std::size_t>(s));
      const PointValue f = ev(level, y, ws);
      if (coarse) {
        const PointValue g = ev(level - 1, y.first(static_cast<std::size_t>(s_coarse)), ws);
        accumulate(parts[c], f, &g);
      } else {
        accumulate(parts[c], f, nullptr);
      }
    }
  });
  auto out = reduce(parts, level, N, s, coarse ? s_coarse : 0);
  out.h = std::ldexp(1.0, -(level + 1));
  return out;
}

LevelSums level_sums_mc(const LevelEvaluator& ev, int level, int s, int s_coarse, std::uint64_t N, std::uint64_t seed,
                        int repetition, int threads) {
  if (s < 1) throw std::invalid_argument("level_sums_mc: s must be >= 1");
  if (N == 0) throw std::invalid_argument("level_sums_mc: N must be >= 1");
  const bool coarse = s_coarse > 0 && level > 0;
  const std::size_t chunks = static_cast<std::size_t>((N + kMcChunk - 1) / kMcChunk);
  std::vector<ChunkSums> parts(chunks);
  for_each_chunk(chunks, threads, [&](std::size_t c, fem::Workspace& ws) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(repetition), static_cast<std::uint32_t>(level),
                     static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(sq);
    std::uniform_real_distribution<double> U(-0.5, 0.5);
    std::vector<double> y(static_cast<std::size_t>(s));
    const std::uint64_t end = std::min<std::uint64_t>(N, (c + 1) * kMcChunk);
    for (std::uint64_t n = c * kMcChunk; n < end; ++n) {
      for (auto& v : y) v = U(rng);
      const PointValue f = ev(level, y, ws);
      if (coarse) {
        const PointValue g = ev(level - 1, std::span<const double>(y).first(static_cast<std::size_t>(s_coarse)), ws);
        accumulate(parts[c], f, &g);
      } else {
        accumulate(parts[c], f, nullptr);
      }
    }
  });
  auto out = reduce(parts, level, N, s, coarse ? s_coarse : 0);
  out.h = std::ldexp(1.0, -(level + 1));
  return out;
}

double combine_ratio(std::span<const LevelSums> levels, double eps_z, double* num, double* den) {
  CompensatedSum zp, z;
  for (const auto& lv : levels) {
    zp += lv.dzp;
    z += lv.dz;
  }
  if (num) *num = zp.value();
  if (den) *den = z.value();
  if (!(z.value() > eps_z)) throw NumericalError("normalization estimate below floor (Z = " + std::to_string(z.value()) + ")");
  const double v = zp.value() / z.value();
  if (!std::isfinite(v)) throw NumericalError("ratio estimate is not finite");
  return v;
}

double combine_split(std::span<const LevelSums> levels, double eps_z) {
  CompensatedSum total;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& lv = levels[i];
    if (!(lv.z_fine > eps_z)) throw NumericalError("level normalization below floor");
    total += lv.zp_fine / lv.z_fine;
    if (i > 0) {
      if (!(lv.z_coarse > eps_z)) throw NumericalError("level normalization below floor");
      total += -(lv.zp_coarse / lv.z_coarse);
    }
  }
  const double v = total.value();
  if (!std::isfinite(v)) throw NumericalError("splitting estimate is not finite");
  return v;
}

namespace {

void require_schedule(const LevelSchedule& sch) {
  if (sch.params.ell0 != 1) throw ConfigError("the solver hierarchy uses ell0 = 1");
}

void require_modes(const Problem& pb, int s) {
  if (s > pb.field.s_max()) throw ConfigError("field.s_max (" + std::to_string(pb.field.s_max()) + ") is below the required dimension " + std::to_string(s));
}

std::string vector_note(VectorSource& vs, int m, int alpha, double C, cbc::LevelClass cls) {
  return vs.path_for(m, alpha, C, cls).filename().string();
}

}  // namespace

EstimatorRun sl_ratio(const Problem& pb, int L, VectorSource& vectors, const RunOptions& opt, std::optional<int> m_opt,
                      std::optional<int> s_opt) {
  if (L < 0) throw ConfigError("L must be >= 0");
  const int m = m_opt.value_or(L + 1);
  const int s = s_opt.value_or(1 << (L + 1));
  require_modes(pb, s);
  const auto gv = vectors.get(m, s, opt.alpha, opt.walsh_constant, cbc::LevelClass::Base, pb.field.modes);
  const auto pts = plr::interlaced_points(gv);
  const LevelEvaluator ev(pb, L);
  EstimatorRun run;
  run.kind = EstimatorKind::SlRatio;
  run.per_level.push_back(level_sums_qmc(ev, L, s, 0, pts, opt.threads));
  run.value = combine_ratio(run.per_level, pb.eps_z, &run.numerator, &run.denominator);
  run.work = (std::uint64_t{1} << (2 * (L + 1))) * static_cast<std::uint64_t>(s) * (std::uint64_t{1} << m);
  run.provenance = vector_note(vectors, m, opt.alpha, opt.walsh_constant, cbc::LevelClass::Base);
  return run;
}

std::pair<EstimatorRun, EstimatorRun> ml_qmc_both(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors,
                                                  const RunOptions& opt) {
  if (sch.kind != SampleKind::Qmc) throw ConfigError("multilevel QMC needs a QMC schedule");
  require_schedule(sch);
  require_modes(pb, *std::max_element(sch.s.begin(), sch.s.end()));
  const LevelEvaluator ev(pb, sch.L);
  EstimatorRun ratio;
  ratio.kind = EstimatorKind::MlRatio;
  std::string note;
  for (int l = 0; l <= sch.L; ++l) {
    const auto cls = l == 0 ? cbc::LevelClass::Base : cbc::LevelClass::Increment;
    const int m = sch.m[static_cast<std::size_t>(l)];
    const int s = sch.s[static_cast<std::size_t>(l)];
    const auto gv = vectors.get(m, s, opt.alpha, opt.walsh_constant, cls, pb.field.modes);
    const auto pts = plr::interlaced_points(gv);
    ratio.per_level.push_back(level_sums_qmc(ev, l, s, l == 0 ? 0 : sch.s[static_cast<std::size_t>(l - 1)], pts, opt.threads));
    if (!note.empty()) note += ';';
    note += vector_note(vectors, m, opt.alpha, opt.walsh_constant, cls) + "[s=" + std::to_string(s) + "]";
  }
  ratio.work = sch.work();
  ratio.provenance = note;
  EstimatorRun split = ratio;
  split.kind = EstimatorKind::MlSplit;
  ratio.value = combine_ratio(ratio.per_level, pb.eps_z, &ratio.numerator, &ratio.denominator);
  split.value = combine_split(split.per_level, pb.eps_z);
  return {ratio, split};
}

EstimatorRun ml_ratio(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors, const RunOptions& opt) {
  return ml_qmc_both(pb, sch, vectors, opt).first;
}

EstimatorRun ml_split(const Problem& pb, const LevelSchedule& sch, VectorSource& vectors, const RunOptions& opt) {
  return ml_qmc_both(pb, sch, vectors, opt).second;
}

std::pair<EstimatorRun, EstimatorRun> mlmc_both(const Problem& pb, const LevelSchedule& sch, const RunOptions& opt) {
  if (opt.repetitions < 1) throw ConfigError("mc.repetitions must be >= 1");
  require_schedule(sch);
  require_modes(pb, *std::max_element(sch.s.begin(), sch.s.end()));
  const LevelEvaluator ev(pb, sch.L);
  EstimatorRun ratio, split;
  ratio.kind = EstimatorKind::MlmcRatio;
  split.kind = EstimatorKind::MlmcSplit;
  CompensatedSum mean_r, mean_s;
  for (int r = 0; r < opt.repetitions; ++r) {
    std::vector<LevelSums> levels;
    for (int l = 0; l <= sch.L; ++l)
      levels.push_back(level_sums_mc(ev, l, sch.s[static_cast<std::size_t>(l)], l == 0 ? 0 : sch.s[static_cast<std::size_t>(l - 1)],
                                     sch.N[static_cast<std::size_t>(l)], opt.seed, r, opt.threads));
    double num = 0, den = 0;
    ratio.repetitions.push_back(combine_ratio(levels, pb.eps_z, &num, &den));
    split.repetitions.push_back(combine_split(levels, pb.eps_z));
    mean_r += ratio.repetitions.back();
    mean_s += split.repetitions.back();
    if (r == 0) {
      ratio.per_level = split.per_level = levels;
      ratio.numerator = num;
      ratio.denominator = den;
    }
  }
  ratio.value = mean_r.value() / opt.repetitions;
  split.value = mean_s.value() / opt.repetitions;
  ratio.work = split.work = sch.work();
  ratio.provenance = split.provenance = "mt19937_64 seed=" + std::to_string(opt.seed) + " R=" + std::to_string(opt.repetitions);
  return {ratio, split};
}

EstimatorRun mc_estimator(const Problem& pb, EstimatorKind kind, const LevelSchedule& sch, const RunOptions& opt,
                          std::optional<std::uint64_t> sl_samples) {
  if (kind == EstimatorKind::MlmcRatio) return mlmc_both(pb, sch, opt).first;
  if (kind == EstimatorKind::MlmcSplit) return mlmc_both(pb, sch, opt).second;
  if (kind != EstimatorKind::McSl) throw ConfigError("mc_estimator: not a Monte Carlo kind");
  if (opt.repetitions < 1) throw ConfigError("mc.repetitions must be >= 1");
  const int L = sch.L;
  const int s = 1 << (L + 1);
  require_modes(pb, s);
  const std::uint64_t N = sl_samples.value_or(std::uint64_t{1} << (4 * (L + 1)));
  const LevelEvaluator ev(pb, L);
  EstimatorRun run;
  run.kind = kind;
  CompensatedSum mean;
  for (int r = 0; r < opt.repetitions; ++r) {
    std::vector<LevelSums> levels{level_sums_mc(ev, L, s, 0, N, opt.seed, r, opt.threads)};
    double num = 0, den = 0;
    run.repetitions.push_back(combine_ratio(levels, pb.eps_z, &num, &den));
    mean += run.repetitions.back();
    if (r == 0) {
      run.per_level = levels;
      run.numerator = num;
      run.denominator = den;
    }
  }
  run.value = mean.value() / opt.repetitions;
  run.work = (std::uint64_t{1} << (2 * (L + 1))) * static_cast<std::uint64_t>(s) * N;
  run.provenance = "mt19937_64 seed=" + std::to_string(opt.seed) + " R=" + std::to_string(opt.repetitions);
  return run;
}

}  // namespace mlhoqmc::est
