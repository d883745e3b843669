#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mlhoqmc/gf2poly.hpp"

namespace mlhoqmc::plr {

/// Generating vector of an interlaced polynomial lattice rule (base 2).
/// Holds alpha * s component polynomials, each of degree < m; the modulus is
/// the built-in table entry for degree m.
struct GeneratingVector {
  int m = 0;
  int alpha = 1;
  int s = 0;
  std::vector<gf2::Poly2> components;

  /// Throws std::invalid_argument when sizes or degrees are inconsistent.
  void validate() const;
  const gf2::Modulus& modulus() const { return gf2::table_modulus(m); }

  /// First s_target coordinates (alpha * s_target components).
  GeneratingVector truncated(int s_target) const;

  friend bool operator==(const GeneratingVector&, const GeneratingVector&) = default;
};

/// N points in [0,1)^s stored as integers; coordinate value is
/// integer * 2^{-precision_bits}.
class PointSet {
 public:
  PointSet(std::size_t n_points, int dim, int precision_bits);

  std::size_t size() const { return n_; }
  int dim() const { return s_; }
  int precision_bits() const { return bits_; }

  std::span<const std::uint64_t> point(std::size_t n) const {
    return {data_.data() + n * static_cast<std::size_t>(s_), static_cast<std::size_t>(s_)};
  }
  std::span<std::uint64_t> point(std::size_t n) {
    return {data_.data() + n * static_cast<std::size_t>(s_), static_cast<std::size_t>(s_)};
  }
  std::uint64_t raw(std::size_t n, int j) const { return data_[n * static_cast<std::size_t>(s_) + j]; }
  double coordinate(std::size_t n, int j) const { return std::ldexp(static_cast<double>(raw(n, j)), -bits_); }

  /// Writes coordinates of point n as doubles into out (size >= dim()).
  void to_unit_cube(std::size_t n, std::span<double> out) const;

  friend bool operator==(const PointSet&, const PointSet&) = default;

 private:
  std::size_t n_;
  int s_;
  int bits_;
  std::vector<std::uint64_t> data_;
};

/// Classical rule: point n, coordinate j is v_m(n(x) g_j(x) / P(x)).
PointSet classical_points(const gf2::Modulus& P, std::span<const gf2::Poly2> g, int m);

/// Digit interlacing of alpha m-bit values into one (alpha*m)-bit value:
/// digit a of input j lands at position j + (a-1) alpha (positions counted
/// from the most significant digit, starting at 1).
std::uint64_t interlace_scalar(std::span<const std::uint64_t> inputs, int m);

/// Interlaced rule of order gv.alpha with 2^m points in gv.s dimensions.
PointSet interlaced_points(const GeneratingVector& gv);

/// Equal-weight average (1/N) sum_n f(x_n) with x_n in [0,1)^s. The sum runs
/// in ascending n with per-component compensated accumulation. f writes
/// its values into the provided output span (fixed width `width`).
std::vector<double> qmc_average(const PointSet& points, std::size_t width,
                                const std::function<void(std::span<const double>, std::span<double>)>& f);

/// Scalar convenience overload.
double qmc_average(const PointSet& points, const std::function<double(std::span<const double>)>& f);

/// Line-oriented vector file: header "b m alpha s", then alpha*s lines with
/// hexadecimal coefficient masks. Lines starting with '#' are ignored.
void write_vector(std::ostream& os, const GeneratingVector& gv);
GeneratingVector read_vector(std::istream& is);
void save_vector(const std::filesystem::path& path, const GeneratingVector& gv);
GeneratingVector load_vector(const std::filesystem::path& path);

/// One row per point, coordinates as decimal fractions.
void write_points_csv(std::ostream& os, const PointSet& points);

}  // namespace mlhoqmc::plr
