#pragma once

#include <cstdint>
#include <vector>

namespace mlhoqmc::gf2 {

/// Polynomial over GF(2) stored as a coefficient mask; bit i is the
/// coefficient of x^i. Degrees up to 63 are representable, which covers
/// products of two polynomials of degree < 32.
class Poly2 {
 public:
  constexpr Poly2() = default;
  constexpr explicit Poly2(std::uint64_t bits) : bits_(bits) {}

  constexpr std::uint64_t bits() const { return bits_; }
  constexpr bool is_zero() const { return bits_ == 0; }

  /// Degree of the polynomial; the zero polynomial reports kZeroDegree.
  int degree() const;
  static constexpr int kZeroDegree = -1;

  constexpr bool coeff(int i) const { return (bits_ >> i) & 1u; }

  friend constexpr Poly2 operator+(Poly2 a, Poly2 b) { return Poly2(a.bits_ ^ b.bits_); }
  friend constexpr bool operator==(Poly2 a, Poly2 b) = default;

 private:
  std::uint64_t bits_ = 0;
};

/// Carry-less product. Throws std::overflow_error if the result would not
/// fit in 64 coefficient bits.
Poly2 mul(Poly2 a, Poly2 b);

/// Remainder of a modulo p (p nonzero).
Poly2 mod(Poly2 a, Poly2 p);

Poly2 gcd(Poly2 a, Poly2 b);

/// True iff p (degree >= 1) has no factor of degree 1..deg(p)-1.
bool is_irreducible(Poly2 p);

/// Irreducible modulus of degree m with nonzero constant term.
class Modulus {
 public:
  /// Validates irreducibility; throws std::invalid_argument otherwise.
  explicit Modulus(Poly2 p);

  Poly2 poly() const { return poly_; }
  int m() const { return m_; }

  /// (a * b) mod P for a, b already reduced.
  Poly2 mulmod(Poly2 a, Poly2 b) const;

 private:
  Poly2 poly_;
  int m_;
};

/// Largest degree covered by the built-in modulus table.
inline constexpr int kMaxTableDegree = 32;

/// Canonical modulus of degree m in [1, 32]: the irreducible polynomial with
/// nonzero constant term of smallest Hamming weight, ties broken by smallest
/// mask. Throws std::out_of_range outside the table.
const Modulus& table_modulus(int m);

/// First `count` coefficients t_1, t_2, ... of the expansion of
/// numerator / P in powers of x^{-1}. Requires deg(numerator) < m.
std::vector<std::uint8_t> laurent_digits(Poly2 numerator, const Modulus& P, int count);

/// v_m(numerator / P) as an m-bit integer whose most significant bit is t_1,
/// i.e. the real value is the returned integer times 2^{-m}.
std::uint64_t truncated_expansion(Poly2 numerator, const Modulus& P);

/// Smallest-mask element of multiplicative order 2^m - 1 in GF(2)[x]/P.
Poly2 primitive_element(const Modulus& P);

}  // namespace mlhoqmc::gf2
