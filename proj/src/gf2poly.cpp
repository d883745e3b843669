#include "mlhoqmc/gf2poly.hpp"

#include <array>
#include <bit>
#include <stdexcept>
#include <string>

namespace mlhoqmc::gf2 {

int Poly2::degree() const {
  if (bits_ == 0) return kZeroDegree;
  return 63 - std::countl_zero(bits_);
}

Poly2 mul(Poly2 a, Poly2 b) {
  if (a.is_zero() || b.is_zero()) return Poly2{};
  if (a.degree() + b.degree() > 63) throw std::overflow_error("gf2::mul: product degree exceeds 63");
  std::uint64_t x = a.bits();
  std::uint64_t y = b.bits();
  std::uint64_t r = 0;
  while (y != 0) {
    if (y & 1u) r ^= x;
    y >>= 1;
    x <<= 1;
  }
  return Poly2(r);
}

Poly2 mod(Poly2 a, Poly2 p) {
  if (p.is_zero()) throw std::domain_error("gf2::mod: zero modulus");
  const int dp = p.degree();
  std::uint64_t r = a.bits();
  for (int d = Poly2(r).degree(); d >= dp; d = Poly2(r).degree()) r ^= p.bits() << (d - dp);
  return Poly2(r);
}

Poly2 gcd(Poly2 a, Poly2 b) {
  while (!b.is_zero()) {
    Poly2 r = mod(a, b);
    a = b;
    b = r;
  }
  return a;
}

namespace {

// (a*b) mod p for deg a, deg b < deg p <= 32, without the 64-bit product.
Poly2 mulmod_raw(Poly2 a, Poly2 b, Poly2 p) {
  const int dp = p.degree();
  const std::uint64_t top = std::uint64_t{1} << dp;
  std::uint64_t x = a.bits();
  std::uint64_t y = b.bits();
  std::uint64_t r = 0;
  while (y != 0) {
    if (y & 1u) r ^= x;
    y >>= 1;
    x <<= 1;
    if (x & top) x ^= p.bits();
  }
  return Poly2(r);
}

}  // namespace

// Ben-Or: p of degree d is irreducible iff gcd(p, x^{2^i} - x) = 1 for all
// 1 <= i <= d/2.
bool is_irreducible(Poly2 p) {
  const int d = p.degree();
  if (d < 1) throw std::invalid_argument("gf2::is_irreducible: degree must be >= 1");
  if (d == 1) return true;
  if (!p.coeff(0)) return false;
  if (d > 32) throw std::out_of_range("gf2::is_irreducible: degree above 32 unsupported");
  const Poly2 x(2);
  Poly2 t = x;
  for (int i = 1; i <= d / 2; ++i) {
    t = mulmod_raw(t, t, p);
    if (gcd(p, t + x) != Poly2(1)) return false;
  }
  return true;
}

Modulus::Modulus(Poly2 p) : poly_(p), m_(p.degree()) {
  if (m_ < 1 || m_ > kMaxTableDegree)
    throw std::invalid_argument("Modulus: degree must lie in [1, 32]");
  if (!p.coeff(0)) throw std::invalid_argument("Modulus: constant term must be 1");
  if (!is_irreducible(p)) throw std::invalid_argument("Modulus: polynomial is reducible");
}

Poly2 Modulus::mulmod(Poly2 a, Poly2 b) const { return mulmod_raw(a, b, poly_); }

namespace {

constexpr std::array<std::uint64_t, kMaxTableDegree> kTable = {
    0x3,        0x7,        0xb,         0x13,        0x25,       0x43,       0x83,
    0x11b,      0x203,      0x409,       0x805,       0x1009,     0x201b,     0x4021,
    0x8003,     0x1002b,    0x20009,     0x40009,     0x80027,    0x100009,   0x200005,
    0x400003,   0x800021,   0x100001b,   0x2000009,   0x400001b,  0x8000027,  0x10000003,
    0x20000005, 0x40000003, 0x80000009,  0x10000008d};

std::array<Modulus, kMaxTableDegree> build_table() {
  return [&]<std::size_t... I>(std::index_sequence<I...>) {
    return std::array<Modulus, kMaxTableDegree>{Modulus(Poly2(kTable[I]))...};
  }(std::make_index_sequence<kMaxTableDegree>{});
}

}  // namespace

const Modulus& table_modulus(int m) {
  static const std::array<Modulus, kMaxTableDegree> table = build_table();
  if (m < 1 || m > kMaxTableDegree)
    throw std::out_of_range("no built-in modulus of degree " + std::to_string(m));
  return table[static_cast<std::size_t>(m - 1)];
}

std::vector<std::uint8_t> laurent_digits(Poly2 numerator, const Modulus& P, int count) {
  if (count < 1) throw std::invalid_argument("laurent_digits: count must be >= 1");
  if (numerator.degree() >= P.m())
    throw std::invalid_argument("laurent_digits: numerator must be reduced modulo P");
  const std::uint64_t top = std::uint64_t{1} << P.m();
  std::uint64_t r = numerator.bits();
  std::vector<std::uint8_t> digits(static_cast<std::size_t>(count));
  for (auto& t : digits) {
    r <<= 1;
    if (r & top) {
      t = 1;
      r ^= P.poly().bits();
    } else {
      t = 0;
    }
  }
  return digits;
}

std::uint64_t truncated_expansion(Poly2 numerator, const Modulus& P) {
  if (numerator.degree() >= P.m())
    throw std::invalid_argument("truncated_expansion: numerator must be reduced modulo P");
  const std::uint64_t top = std::uint64_t{1} << P.m();
  std::uint64_t r = numerator.bits();
  std::uint64_t v = 0;
  for (int l = 0; l < P.m(); ++l) {
    r <<= 1;
    v <<= 1;
    if (r & top) {
      v |= 1u;
      r ^= P.poly().bits();
    }
  }
  return v;
}

Poly2 primitive_element(const Modulus& P) {
  const int m = P.m();
  const std::uint64_t order = (std::uint64_t{1} << m) - 1;
  if (order == 1) return Poly2(1);
  std::vector<std::uint64_t> primes;
  std::uint64_t rest = order;
  for (std::uint64_t q = 3; q * q <= rest; q += 2) {
    if (rest % q == 0) {
      primes.push_back(q);
      while (rest % q == 0) rest /= q;
    }
  }
  if (rest > 1) primes.push_back(rest);

  auto power = [&](Poly2 g, std::uint64_t e) {
    Poly2 acc(1);
    while (e != 0) {
      if (e & 1u) acc = P.mulmod(acc, g);
      g = P.mulmod(g, g);
      e >>= 1;
    }
    return acc;
  };
  for (std::uint64_t c = 2; c <= order; ++c) {
    const Poly2 g(c);
    bool primitive = true;
    for (auto q : primes) {
      if (power(g, order / q) == Poly2(1)) {
        primitive = false;
        break;
      }
    }
    if (primitive) return g;
  }
  throw std::logic_error("primitive_element: none found (modulus not irreducible?)");
}

}  // namespace mlhoqmc::gf2
