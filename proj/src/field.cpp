#include "mlhoqmc/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

#include "mlhoqmc/errors.hpp"

namespace mlhoqmc::field {

Law parse_law(std::string_view name) {
  if (name == "affine") return Law::Affine;
  if (name == "logaffine" || name == "log-affine") return Law::LogAffine;
  throw ConfigError("unknown field law '" + std::string(name) + "' (expected affine|logaffine)");
}

std::string_view to_string(Law law) { return law == Law::Affine ? "affine" : "logaffine"; }

std::vector<KlMode> enumerate_modes(int s) {
  if (s < 1) throw std::invalid_argument("enumerate_modes: s must be >= 1");
  // Grow the radius until the disc k1^2+k2^2 <= r holds at least s pairs;
  // every pair with a smaller key is then inside the disc.
  int r = 2;
  std::vector<KlMode> modes;
  for (;;) {
    modes.clear();
    const int kmax = static_cast<int>(std::sqrt(static_cast<double>(r))) + 1;
    for (int k1 = 1; k1 <= kmax; ++k1)
      for (int k2 = 1; k2 <= kmax; ++k2)
        if (k1 * k1 + k2 * k2 <= r) modes.push_back({k1, k2, 0.0});
    if (static_cast<int>(modes.size()) >= s) break;
    r *= 2;
  }
  std::sort(modes.begin(), modes.end(), [](const KlMode& a, const KlMode& b) {
    return std::make_tuple(a.wavenumber_sq(), a.k1, a.k2) < std::make_tuple(b.wavenumber_sq(), b.k1, b.k2);
  });
  modes.resize(static_cast<std::size_t>(s));
  for (auto& mode : modes) {
    const double w = mode.wavenumber_sq();
    mode.mu = 1.0 / (w * w);
  }
  return modes;
}

FieldSpec FieldSpec::make(Law law, int s_max, double u0) {
  FieldSpec spec;
  spec.modes = enumerate_modes(s_max);
  spec.law = law;
  spec.u0 = u0;
  if (law == Law::Affine && !(u0 > 0.0)) throw ConfigError("field.u0 must be positive for the affine law");
  return spec;
}

double eval_coefficient(const FieldSpec& spec, std::span<const double> y, double x1, double x2) {
  if (y.size() > spec.modes.size()) throw std::invalid_argument("eval_coefficient: more parameters than modes");
  constexpr double pi = std::numbers::pi;
  double sum = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    const auto& md = spec.modes[j];
    sum += y[j] * md.mu * std::sin(md.k1 * pi * x1) * std::sin(md.k2 * pi * x2);
  }
  const double u = spec.law == Law::Affine ? spec.u0 + sum : std::exp(sum);
  if (!(u > 0.0)) throw NumericalError("diffusion coefficient is not positive");
  return u;
}

std::vector<double> truncate(std::span<const double> y, int s_target) {
  if (s_target < 0 || static_cast<std::size_t>(s_target) > y.size())
    throw std::invalid_argument("truncate: target dimension exceeds parameter length");
  return {y.begin(), y.begin() + s_target};
}

TensorCoefficient::TensorCoefficient(const FieldSpec& spec, std::vector<double> xs) : spec_(spec), xs_(std::move(xs)) {
  for (const auto& md : spec_.modes) kmax_ = std::max({kmax_, md.k1, md.k2});
  const std::size_t n = xs_.size();
  sines_.resize(static_cast<std::size_t>(kmax_) * n);
  for (int k = 0; k < kmax_; ++k)
    for (std::size_t i = 0; i < n; ++i) sines_[k * n + i] = std::sin((k + 1) * std::numbers::pi * xs_[i]);
}

void TensorCoefficient::evaluate(std::span<const double> y, std::span<double> out, std::vector<double>& scratch) const {
  const std::size_t n = xs_.size();
  if (out.size() != n * n) throw std::invalid_argument("TensorCoefficient::evaluate: output has wrong size");
  if (y.size() > spec_.modes.size()) throw std::invalid_argument("TensorCoefficient::evaluate: too many parameters");

  int k1max = 0;
  int k2max = 0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 0.0) continue;
    k1max = std::max(k1max, spec_.modes[j].k1);
    k2max = std::max(k2max, spec_.modes[j].k2);
  }
  const double base = spec_.law == Law::Affine ? spec_.u0 : 0.0;
  if (k1max == 0) {
    std::fill(out.begin(), out.end(), spec_.law == Law::Affine ? base : 1.0);
    return;
  }

  // amp[k1][k2] = sum of y_j mu_j over the mode (k1, k2); row-major k1max x k2max.
  const std::size_t a1 = static_cast<std::size_t>(k1max);
  const std::size_t a2 = static_cast<std::size_t>(k2max);
  scratch.assign(a1 * a2 + a1 * n, 0.0);
  double* amp = scratch.data();
  double* partial = scratch.data() + a1 * a2;  // partial[k1 * n + i2]
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 0.0) continue;
    const auto& md = spec_.modes[j];
    amp[(md.k1 - 1) * a2 + (md.k2 - 1)] += y[j] * md.mu;
  }
  for (std::size_t k1 = 0; k1 < a1; ++k1) {
    double* row = partial + k1 * n;
    for (std::size_t k2 = 0; k2 < a2; ++k2) {
      const double c = amp[k1 * a2 + k2];
      if (c == 0.0) continue;
      const double* sk = sines_.data() + k2 * n;
      for (std::size_t i2 = 0; i2 < n; ++i2) row[i2] += c * sk[i2];
    }
  }
  for (std::size_t i1 = 0; i1 < n; ++i1) {
    double* o = out.data() + i1 * n;
    std::fill(o, o + n, base);
    for (std::size_t k1 = 0; k1 < a1; ++k1) {
      const double s1 = sines_[k1 * n + i1];
      const double* row = partial + k1 * n;
      for (std::size_t i2 = 0; i2 < n; ++i2) o[i2] += s1 * row[i2];
    }
  }
  if (spec_.law == Law::LogAffine) {
    for (auto& v : out) v = std::exp(v);
  } else {
    for (auto v : out)
      if (!(v > 0.0)) throw NumericalError("diffusion coefficient is not positive");
  }
}

}  // namespace mlhoqmc::field
