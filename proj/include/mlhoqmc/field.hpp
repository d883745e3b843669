#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace mlhoqmc::field {

/// Sine mode sin(k1 pi x1) sin(k2 pi x2) with amplitude mu = (k1^2+k2^2)^{-2}.
struct KlMode {
  int k1 = 1;
  int k2 = 1;
  double mu = 0.25;

  int wavenumber_sq() const { return k1 * k1 + k2 * k2; }
};

enum class Law { Affine, LogAffine };

Law parse_law(std::string_view name);
std::string_view to_string(Law law);

/// First s modes ordered by k1^2+k2^2 ascending, ties by (k1, k2)
/// lexicographically ascending.
std::vector<KlMode> enumerate_modes(int s);

struct FieldSpec {
  std::vector<KlMode> modes;
  double u0 = 0.5;
  Law law = Law::Affine;

  static FieldSpec make(Law law, int s_max, double u0 = 0.5);
  int s_max() const { return static_cast<int>(modes.size()); }
};

/// Pointwise coefficient. Affine: u0 + sum_j y_j mu_j sin(..)sin(..).
/// Log-affine: exp(sum_j y_j mu_j sin(..)sin(..)). Only the first y.size()
/// modes contribute. Throws mlhoqmc::NumericalError on a non-positive value.
double eval_coefficient(const FieldSpec& spec, std::span<const double> y, double x1, double x2);

/// First s_target entries of y.
std::vector<double> truncate(std::span<const double> y, int s_target);

/// Evaluates the coefficient on a tensor grid xs x xs. Sine tables are built
/// once; each evaluation costs O(K^2 n + K n^2) for K the largest wavenumber
/// among the active modes and n = xs.size().
class TensorCoefficient {
 public:
  TensorCoefficient(const FieldSpec& spec, std::vector<double> xs);

  std::size_t grid_size() const { return xs_.size(); }

  /// out[i1 * n + i2] = u(y)(xs[i1], xs[i2]). out.size() must equal n*n;
  /// scratch is resized as needed.
  void evaluate(std::span<const double> y, std::span<double> out, std::vector<double>& scratch) const;

 private:
  FieldSpec spec_;
  std::vector<double> xs_;
  int kmax_ = 0;
  std::vector<double> sines_;  // sines_[k * n + i] = sin((k+1) pi xs[i])
};

}  // namespace mlhoqmc::field
