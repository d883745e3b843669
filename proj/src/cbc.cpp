#include "mlhoqmc/cbc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mlhoqmc/compensated_sum.hpp"
#include "mlhoqmc/errors.hpp"

namespace mlhoqmc::cbc {

LevelClass parse_level_class(std::string_view name) {
  if (name == "base") return LevelClass::Base;
  if (name == "increment") return LevelClass::Increment;
  throw ConfigError("unknown level class '" + std::string(name) + "' (expected base|increment)");
}

std::string_view to_string(LevelClass cls) { return cls == LevelClass::Base ? "base" : "increment"; }

void SpodWeights::validate() const {
  if (alpha < 1) throw std::invalid_argument("SpodWeights: alpha must be >= 1");
  if (!(walsh_constant > 0.0)) throw std::invalid_argument("SpodWeights: Walsh constant must be positive");
  for (double b : beta)
    if (!(b >= 0.0)) throw std::invalid_argument("SpodWeights: beta must be non-negative");
}

SpodWeights make_weights(std::span<const field::KlMode> modes, int alpha, double walsh_constant, LevelClass cls) {
  SpodWeights w;
  w.alpha = alpha;
  w.walsh_constant = walsh_constant;
  w.beta.reserve(modes.size());
  for (const auto& md : modes)
    w.beta.push_back(cls == LevelClass::Base ? md.mu : md.mu * std::numbers::pi * std::max(md.k1, md.k2));
  w.validate();
  return w;
}

double spod_weight(std::span<const int> u, std::span<const int> nu, const SpodWeights& w) {
  if (u.size() != nu.size()) throw std::invalid_argument("spod_weight: u and nu differ in length");
  double prod = 1.0;
  int order = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (nu[i] < 1 || nu[i] > w.alpha) throw std::invalid_argument("spod_weight: nu entries must lie in [1, alpha]");
    if (u[i] < 0 || static_cast<std::size_t>(u[i]) >= w.beta.size()) throw std::invalid_argument("spod_weight: coordinate out of range");
    order += nu[i];
    prod *= (nu[i] == w.alpha ? 2.0 : 1.0) * std::pow(w.beta[static_cast<std::size_t>(u[i])], nu[i]);
  }
  return std::tgamma(order + 1.0) * prod;
}

double walsh_kernel(std::uint64_t k_bits, int m, int alpha) {
  const int lambda = std::max(alpha, 2);
  const double denom = std::ldexp(1.0, lambda) - 2.0;
  if (k_bits == 0) return 1.0 / denom;
  const int t0 = m - static_cast<int>(std::bit_width(k_bits));
  return (1.0 - std::ldexp(std::ldexp(1.0, lambda) - 1.0, (1 - lambda) * (t0 + 1))) / denom;
}

namespace {

// Running state of the criterion over all N points for a growing prefix of
// components. U[n][l] holds l! times the order-l part of the weighted
// product sum over completed blocks; Pp holds the product of (1 + omega)
// over the components already placed in the open block.
class CriterionState {
 public:
  CriterionState(int m, int s_max, const SpodWeights& w)
      : m_(m), alpha_(w.alpha), n_(std::size_t{1} << m), kmax_(w.alpha * s_max), w_(w) {
    if (static_cast<std::size_t>(s_max) > w.beta.size()) throw std::invalid_argument("CBC: more coordinates than weights");
    const std::size_t width = static_cast<std::size_t>(kmax_) + 1;
    U_.assign(n_ * width, 0.0);
    for (std::size_t n = 0; n < n_; ++n) U_[n * width] = 1.0;
    Pp_.assign(n_, 1.0);
    c_blk_ = w.walsh_constant * std::ldexp(1.0, alpha_ * (alpha_ - 1) / 2);
  }

  std::size_t size() const { return n_; }
  int block() const { return block_; }

  // w_j(nu) for the open block.
  double block_weight(int nu) const {
    const double b = w_.beta[static_cast<std::size_t>(block_)];
    return c_blk_ * (nu == alpha_ ? 2.0 : 1.0) * std::pow(b, nu);
  }

  // A(n) = sum_k U[n][k] a_k with a_k = sum_nu w(nu) (k+nu)!/k!.
  void coupling(std::vector<double>& A) const {
    const int kcur = alpha_ * block_;
    std::vector<double> a(static_cast<std::size_t>(kcur) + 1, 0.0);
    for (int k = 0; k <= kcur; ++k) {
      double falling = 1.0;
      for (int nu = 1; nu <= alpha_; ++nu) {
        falling *= static_cast<double>(k + nu);
        a[static_cast<std::size_t>(k)] += block_weight(nu) * falling;
      }
    }
    const std::size_t width = static_cast<std::size_t>(kmax_) + 1;
    A.resize(n_);
    for (std::size_t n = 0; n < n_; ++n) {
      const double* u = U_.data() + n * width;
      double acc = 0.0;
      for (int k = 0; k <= kcur; ++k) acc += u[k] * a[static_cast<std::size_t>(k)];
      A[n] = acc;
    }
  }

  const std::vector<double>& partial_product() const { return Pp_; }

  // Current criterion value including the open block.
  double value() const {
    std::vector<double> A;
    coupling(A);
    return value(A);
  }

  double value(const std::vector<double>& A) const {
    const std::size_t width = static_cast<std::size_t>(kmax_) + 1;
    const int kcur = alpha_ * block_;
    CompensatedSum total;
    for (std::size_t n = 0; n < n_; ++n) {
      const double* u = U_.data() + n * width;
      double acc = 0.0;
      for (int k = 1; k <= kcur; ++k) acc += u[k];
      total += acc + A[n] * (Pp_[n] - 1.0);
    }
    return total.value() / static_cast<double>(n_);
  }

  // Adds one component with m-bit point values x[n].
  void place(std::span<const std::uint64_t> x) {
    for (std::size_t n = 0; n < n_; ++n) Pp_[n] *= 1.0 + walsh_kernel(x[n], m_, alpha_);
    if (++r_ < alpha_) return;
    const std::size_t width = static_cast<std::size_t>(kmax_) + 1;
    const int knew = alpha_ * (block_ + 1);
    double wn[64];
    for (int nu = 1; nu <= alpha_; ++nu) wn[nu] = block_weight(nu);
    for (std::size_t n = 0; n < n_; ++n) {
      const double Y = Pp_[n] - 1.0;
      double* u = U_.data() + n * width;
      for (int l = knew; l >= 1; --l) {
        double acc = 0.0;
        double falling = 1.0;
        for (int nu = 1; nu <= std::min(alpha_, l); ++nu) {
          falling *= static_cast<double>(l - nu + 1);
          acc += wn[nu] * falling * u[l - nu];
        }
        u[l] += Y * acc;
      }
      Pp_[n] = 1.0;
    }
    r_ = 0;
    ++block_;
  }

  int placed() const { return alpha_ * block_ + r_; }

 private:
  int m_;
  int alpha_;
  std::size_t n_;
  int kmax_;
  const SpodWeights& w_;
  double c_blk_ = 0.0;
  std::vector<double> U_, Pp_;
  int block_ = 0;
  int r_ = 0;
};

std::mutex& fftw_planner_mutex() {
  static std::mutex mu;
  return mu;
}

// Cyclic structure of the nonzero residues: pow_[a] = gamma^a mod P and
// vexp_[c] = v_m(gamma^c / P) as an m-bit integer.
struct CyclicTables {
  std::size_t M = 0;
  std::vector<std::uint64_t> pow, vexp;
  std::vector<std::uint32_t> log;  // log[mask] for mask in 1..M

  explicit CyclicTables(int m) {
    const auto& P = gf2::table_modulus(m);
    M = (std::size_t{1} << m) - 1;
    pow.resize(M);
    vexp.resize(M);
    log.assign(M + 1, 0);
    const gf2::Poly2 gamma = gf2::primitive_element(P);
    std::vector<std::uint64_t> basis(static_cast<std::size_t>(m));
    for (int b = 0; b < m; ++b) basis[static_cast<std::size_t>(b)] = gf2::truncated_expansion(gf2::Poly2(std::uint64_t{1} << b), P);
    gf2::Poly2 cur(1);
    for (std::size_t a = 0; a < M; ++a) {
      pow[a] = cur.bits();
      log[cur.bits()] = static_cast<std::uint32_t>(a);
      std::uint64_t v = 0;
      std::uint64_t bits = cur.bits();
      for (std::size_t b = 0; bits != 0; ++b, bits >>= 1)
        if (bits & 1u) v ^= basis[b];
      vexp[a] = v;
      cur = P.mulmod(cur, gamma);
    }
  }
};

// S(b) = sum_a c[a] * omega[(a + b) mod M], by FFT or direct summation.
class Correlator {
 public:
  Correlator(std::vector<double> omega, bool use_fft) : omega_(std::move(omega)), fft_(use_fft) {
    M_ = omega_.size();
    if (!fft_) return;
    const std::size_t H = M_ / 2 + 1;
    real_ = fftw_alloc_real(M_);
    spec_ = fftw_alloc_complex(H);
    omega_hat_ = fftw_alloc_complex(H);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(M_), real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(M_), spec_, real_, FFTW_ESTIMATE);
    std::copy(omega_.begin(), omega_.end(), real_);
    fftw_execute(fwd_);
    std::memcpy(omega_hat_, spec_, H * sizeof(fftw_complex));
  }
  Correlator(const Correlator&) = delete;
  Correlator& operator=(const Correlator&) = delete;
  ~Correlator() {
    if (!fft_) return;
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
    fftw_free(omega_hat_);
  }

  void correlate(const std::vector<double>& c, std::vector<double>& out) {
    out.assign(M_, 0.0);
    if (!fft_) {
      for (std::size_t b = 0; b < M_; ++b) {
        double acc = 0.0;
        for (std::size_t a = 0; a < M_; ++a) {
          const std::size_t idx = a + b < M_ ? a + b : a + b - M_;
          acc += c[a] * omega_[idx];
        }
        out[b] = acc;
      }
      return;
    }
    const std::size_t H = M_ / 2 + 1;
    std::copy(c.begin(), c.end(), real_);
    fftw_execute(fwd_);
    for (std::size_t k = 0; k < H; ++k) {
      const double cr = spec_[k][0];
      const double ci = -spec_[k][1];
      const double orr = omega_hat_[k][0];
      const double oi = omega_hat_[k][1];
      spec_[k][0] = cr * orr - ci * oi;
      spec_[k][1] = cr * oi + ci * orr;
    }
    fftw_execute(inv_);
    const double scale = 1.0 / static_cast<double>(M_);
    for (std::size_t b = 0; b < M_; ++b) out[b] = real_[b] * scale;
  }

 private:
  std::vector<double> omega_;
  bool fft_;
  std::size_t M_ = 0;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_complex* omega_hat_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

// Full criterion value for every candidate mask g = gamma^b, indexed by b.
// Returns a magnitude scale for tie detection.
double score_candidates(CriterionState& st, const CyclicTables& tab, Correlator& corr, int m, int alpha,
                        std::vector<double>& scores) {
  std::vector<double> A;
  st.coupling(A);
  const auto& Pp = st.partial_product();
  const double base = st.value(A);
  const double inv_n = 1.0 / static_cast<double>(st.size());
  std::vector<double> c(tab.M);
  for (std::size_t a = 0; a < tab.M; ++a) {
    const std::size_t n = tab.pow[a];
    c[a] = A[n] * Pp[n];
  }
  corr.correlate(c, scores);
  const double zero_term = A[0] * Pp[0] * walsh_kernel(0, m, alpha);
  for (auto& sc : scores) sc = base + (zero_term + sc) * inv_n;
  return std::abs(base) + std::abs(zero_term) * inv_n;
}

// Ties are judged on the scale of the criterion itself: several candidate
// sets (e.g. the first component of a block) tie exactly with a true value
// near zero, so a purely relative test would split them on rounding noise.
std::size_t pick_best(const std::vector<double>& scores, const CyclicTables& tab, double scale) {
  const double best = *std::min_element(scores.begin(), scores.end());
  for (double sc : scores) scale = std::max(scale, std::abs(sc));
  const double tol = 1e-12 * scale;
  std::size_t arg = 0;
  std::uint64_t best_mask = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t b = 0; b < scores.size(); ++b)
    if (scores[b] <= best + tol && tab.pow[b] < best_mask) {
      best_mask = tab.pow[b];
      arg = b;
    }
  return arg;
}

void check_args(int m, int s, const SpodWeights& w) {
  w.validate();
  if (m < 1 || m > 20) throw ConfigError("CBC: m must lie in [1, 20]");
  if (s < 1) throw ConfigError("CBC: s must be >= 1");
  if (w.alpha * m > 64) throw ConfigError("CBC: alpha * m exceeds 64 bits");
  if (static_cast<std::size_t>(s) > w.beta.size()) throw ConfigError("CBC: fewer weights than coordinates");
}

std::vector<double> omega_table(const CyclicTables& tab, int m, int alpha) {
  std::vector<double> om(tab.M);
  for (std::size_t c = 0; c < tab.M; ++c) om[c] = walsh_kernel(tab.vexp[c], m, alpha);
  return om;
}

// Point values x[n] = v_m(n g / P) for the mask g = gamma^b.
void column_values(const CyclicTables& tab, std::size_t b, std::vector<std::uint64_t>& x) {
  x.assign(tab.M + 1, 0);
  for (std::size_t a = 0; a < tab.M; ++a) {
    const std::size_t c = a + b < tab.M ? a + b : a + b - tab.M;
    x[tab.pow[a]] = tab.vexp[c];
  }
}

}  // namespace

QualityScore quality(const plr::GeneratingVector& gv, const SpodWeights& w) {
  gv.validate();
  if (w.alpha != gv.alpha) throw std::invalid_argument("quality: alpha mismatch between vector and weights");
  if (static_cast<std::size_t>(gv.s) > w.beta.size()) throw std::invalid_argument("quality: fewer weights than coordinates");
  const plr::PointSet pts = plr::classical_points(gv.modulus(), gv.components, gv.m);
  CriterionState st(gv.m, gv.s, w);
  std::vector<std::uint64_t> x(pts.size());
  for (int c = 0; c < gv.alpha * gv.s; ++c) {
    for (std::size_t n = 0; n < pts.size(); ++n) x[n] = pts.raw(n, c);
    st.place(x);
  }
  return {std::max(0.0, st.value())};
}

std::vector<double> candidate_scores(int m, std::span<const gf2::Poly2> prefix, const SpodWeights& w) {
  const int s_needed = static_cast<int>(prefix.size()) / w.alpha + 1;
  check_args(m, s_needed, w);
  const CyclicTables tab(m);
  CriterionState st(m, s_needed, w);
  std::vector<std::uint64_t> x;
  for (auto g : prefix) {
    if (g.is_zero() || g.degree() >= m) throw std::invalid_argument("candidate_scores: prefix component out of range");
    column_values(tab, tab.log[g.bits()], x);
    st.place(x);
  }
  Correlator corr(omega_table(tab, m, w.alpha), false);
  std::vector<double> by_log;
  score_candidates(st, tab, corr, m, w.alpha, by_log);
  std::vector<double> by_mask(tab.M);
  for (std::size_t b = 0; b < tab.M; ++b) by_mask[tab.pow[b] - 1] = by_log[b];
  return by_mask;
}

plr::GeneratingVector cbc_construct(int m, int s, const SpodWeights& w, const CbcOptions& opt) {
  check_args(m, s, w);
  const CyclicTables tab(m);
  Correlator corr(omega_table(tab, m, w.alpha), m >= opt.direct_below_m);
  CriterionState st(m, s, w);

  plr::GeneratingVector gv{m, w.alpha, s, {}};
  gv.components.reserve(static_cast<std::size_t>(w.alpha) * s);
  std::vector<double> scores;
  std::vector<std::uint64_t> x;
  for (int c = 0; c < w.alpha * s; ++c) {
    const double scale = score_candidates(st, tab, corr, m, w.alpha, scores);
    const std::size_t b = pick_best(scores, tab, scale);
    gv.components.emplace_back(tab.pow[b]);
    column_values(tab, b, x);
    st.place(x);
  }
  return gv;
}

VectorStore::VectorStore(std::filesystem::path dir, bool build_missing) : dir_(std::move(dir)), build_missing_(build_missing) {}

std::filesystem::path VectorStore::path_for(int m, int alpha, double walsh_constant, LevelClass cls) const {
  char name[96];
  std::snprintf(name, sizeof name, "plr_m%d_a%d_%s_C%g.txt", m, alpha, std::string(to_string(cls)).c_str(), walsh_constant);
  return dir_ / name;
}

plr::GeneratingVector VectorStore::get(int m, int s, int alpha, double walsh_constant, LevelClass cls,
                                       std::span<const field::KlMode> modes) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto key = std::make_tuple(m, alpha, static_cast<int>(cls), walsh_constant);
  if (auto it = memo_.find(key); it != memo_.end() && it->second.s >= s) return it->second.truncated(s);

  const auto path = path_for(m, alpha, walsh_constant, cls);
  if (!dir_.empty() && std::filesystem::exists(path)) {
    auto gv = plr::load_vector(path);
    if (gv.m != m || gv.alpha != alpha) throw ConfigError("vector file " + path.string() + " does not match its key");
    if (gv.s >= s) {
      memo_[key] = gv;
      return gv.truncated(s);
    }
  }
  if (!build_missing_) throw ConfigError("missing generating vector " + path.string() + " (enable building)");
  if (modes.size() < static_cast<std::size_t>(s)) throw ConfigError("VectorStore: fewer modes than coordinates");
  const SpodWeights w = make_weights(modes.first(static_cast<std::size_t>(s)), alpha, walsh_constant, cls);
  auto gv = cbc_construct(m, s, w);
  if (!dir_.empty()) {
    std::filesystem::create_directories(dir_);
    plr::save_vector(path, gv);
  }
  memo_[key] = gv;
  return gv;
}

}  // namespace mlhoqmc::cbc
