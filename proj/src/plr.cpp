#include "mlhoqmc/plr.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mlhoqmc/compensated_sum.hpp"

namespace mlhoqmc::plr {

void GeneratingVector::validate() const {
  if (m < 1 || m > gf2::kMaxTableDegree) throw std::invalid_argument("GeneratingVector: m out of range");
  if (alpha < 1) throw std::invalid_argument("GeneratingVector: alpha must be >= 1");
  if (s < 1) throw std::invalid_argument("GeneratingVector: s must be >= 1");
  if (alpha * m > 64) throw std::invalid_argument("GeneratingVector: alpha*m exceeds 64 bits");
  if (components.size() != static_cast<std::size_t>(alpha) * static_cast<std::size_t>(s))
    throw std::invalid_argument("GeneratingVector: expected alpha*s components");
  for (auto g : components)
    if (g.degree() >= m) throw std::invalid_argument("GeneratingVector: component degree must be < m");
}

GeneratingVector GeneratingVector::truncated(int s_target) const {
  if (s_target < 1 || s_target > s) throw std::invalid_argument("GeneratingVector::truncated: bad dimension");
  GeneratingVector out{m, alpha, s_target, {}};
  out.components.assign(components.begin(), components.begin() + static_cast<std::ptrdiff_t>(alpha) * s_target);
  return out;
}

PointSet::PointSet(std::size_t n_points, int dim, int precision_bits)
    : n_(n_points), s_(dim), bits_(precision_bits), data_(n_points * static_cast<std::size_t>(dim), 0) {
  if (dim < 0 || precision_bits < 0 || precision_bits > 64) throw std::invalid_argument("PointSet: bad shape");
}

void PointSet::to_unit_cube(std::size_t n, std::span<double> out) const {
  const auto p = point(n);
  for (int j = 0; j < s_; ++j) out[j] = std::ldexp(static_cast<double>(p[j]), -bits_);
}

namespace {

// v_m is GF(2)-linear in the numerator: precompute images of x^b.
std::vector<std::uint64_t> expansion_basis(const gf2::Modulus& P) {
  std::vector<std::uint64_t> basis(static_cast<std::size_t>(P.m()));
  for (int b = 0; b < P.m(); ++b) basis[b] = gf2::truncated_expansion(gf2::Poly2(std::uint64_t{1} << b), P);
  return basis;
}

std::uint64_t apply_basis(const std::vector<std::uint64_t>& basis, std::uint64_t a) {
  std::uint64_t v = 0;
  for (std::size_t b = 0; a != 0; ++b, a >>= 1)
    if (a & 1u) v ^= basis[b];
  return v;
}

}  // namespace

PointSet classical_points(const gf2::Modulus& P, std::span<const gf2::Poly2> g, int m) {
  if (P.m() != m) throw std::invalid_argument("classical_points: modulus degree differs from m");
  for (auto gj : g)
    if (gj.degree() >= m) throw std::invalid_argument("classical_points: component degree must be < m");
  const std::size_t N = std::size_t{1} << m;
  const int d = static_cast<int>(g.size());
  PointSet pts(N, d, m);
  const auto basis = expansion_basis(P);
  for (std::size_t n = 0; n < N; ++n) {
    auto row = pts.point(n);
    const gf2::Poly2 nx(n);
    for (int j = 0; j < d; ++j) row[j] = apply_basis(basis, P.mulmod(nx, g[j]).bits());
  }
  return pts;
}

std::uint64_t interlace_scalar(std::span<const std::uint64_t> inputs, int m) {
  const int alpha = static_cast<int>(inputs.size());
  if (alpha * m > 64) throw std::invalid_argument("interlace_scalar: alpha*m exceeds 64 bits");
  std::uint64_t out = 0;
  // Walk digits from most significant: digit a of every input in turn.
  for (int a = 1; a <= m; ++a) {
    for (int j = 0; j < alpha; ++j) {
      const std::uint64_t digit = (inputs[j] >> (m - a)) & 1u;
      out = (out << 1) | digit;
    }
  }
  return out;
}

PointSet interlaced_points(const GeneratingVector& gv) {
  gv.validate();
  const PointSet classical = classical_points(gv.modulus(), gv.components, gv.m);
  if (gv.alpha == 1) return classical;
  PointSet pts(classical.size(), gv.s, gv.alpha * gv.m);
  for (std::size_t n = 0; n < classical.size(); ++n) {
    const auto src = classical.point(n);
    auto dst = pts.point(n);
    for (int j = 0; j < gv.s; ++j)
      dst[j] = interlace_scalar(src.subspan(static_cast<std::size_t>(j * gv.alpha), static_cast<std::size_t>(gv.alpha)), gv.m);
  }
  return pts;
}

std::vector<double> qmc_average(const PointSet& points, std::size_t width,
                                const std::function<void(std::span<const double>, std::span<double>)>& f) {
  std::vector<CompensatedSum> sums(width);
  std::vector<double> x(static_cast<std::size_t>(points.dim()));
  std::vector<double> value(width);
  for (std::size_t n = 0; n < points.size(); ++n) {
    points.to_unit_cube(n, x);
    f(x, value);
    for (std::size_t k = 0; k < width; ++k) sums[k].add(value[k]);
  }
  std::vector<double> out(width);
  const double inv = 1.0 / static_cast<double>(points.size());
  for (std::size_t k = 0; k < width; ++k) out[k] = sums[k].value() * inv;
  return out;
}

double qmc_average(const PointSet& points, const std::function<double(std::span<const double>)>& f) {
  return qmc_average(points, 1, [&](std::span<const double> x, std::span<double> out) { out[0] = f(x); })[0];
}

void write_vector(std::ostream& os, const GeneratingVector& gv) {
  gv.validate();
  os << 2 << ' ' << gv.m << ' ' << gv.alpha << ' ' << gv.s << '\n';
  for (auto g : gv.components) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(g.bits()));
    os << buf << '\n';
  }
}

GeneratingVector read_vector(std::istream& is) {
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return true;
    }
    return false;
  };
  if (!next_line()) throw std::runtime_error("vector file: missing header");
  GeneratingVector gv;
  int base = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> base >> gv.m >> gv.alpha >> gv.s)) throw std::runtime_error("vector file: malformed header");
  }
  if (base != 2) throw std::runtime_error("vector file: only base 2 is supported");
  const long count = static_cast<long>(gv.alpha) * gv.s;
  if (gv.alpha < 1 || gv.s < 1 || count > (1L << 24)) throw std::runtime_error("vector file: bad dimensions");
  gv.components.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    if (!next_line()) throw std::runtime_error("vector file: too few components");
    std::size_t used = 0;
    unsigned long long mask = 0;
    try {
      mask = std::stoull(line, &used, 16);
    } catch (const std::exception&) {
      throw std::runtime_error("vector file: bad component '" + line + "'");
    }
    gv.components.emplace_back(mask);
  }
  try {
    gv.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("vector file: ") + e.what());
  }
  return gv;
}

void save_vector(const std::filesystem::path& path, const GeneratingVector& gv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_vector(os, gv);
}

GeneratingVector load_vector(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_vector(is);
}

void write_points_csv(std::ostream& os, const PointSet& points) {
  char buf[40];
  for (std::size_t n = 0; n < points.size(); ++n) {
    for (int j = 0; j < points.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", points.coordinate(n, j));
      if (j) os << ',';
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace mlhoqmc::plr
