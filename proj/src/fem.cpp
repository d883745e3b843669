#include "mlhoqmc/fem.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mlhoqmc/errors.hpp"

namespace mlhoqmc::fem {

MeshLevel MeshLevel::make(int level, int ell0) {
  if (level < 0 || ell0 < 1 || level + ell0 > 12)
    throw std::invalid_argument("MeshLevel: level + ell0 must lie in [1, 12]");
  MeshLevel m;
  m.level = level;
  m.ell0 = ell0;
  m.n_per_side = 1 << (level + ell0);
  m.h = std::ldexp(1.0, -(level + ell0));
  return m;
}

namespace {

struct Gauss1d {
  std::vector<double> xi;  // on [0,1]
  std::vector<double> w;   // sums to 1
};

Gauss1d gauss_rule(int order) {
  if (order == 2) {
    const double d = 0.5 / std::sqrt(3.0);
    return {{0.5 - d, 0.5 + d}, {0.5, 0.5}};
  }
  if (order == 3) {
    const double d = 0.5 * std::sqrt(0.6);
    return {{0.5 - d, 0.5, 0.5 + d}, {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0}};
  }
  throw ConfigError("fem.quad_order must be 2 or 3");
}

// Local node a sits at (a & 1, a >> 1) on the reference square.
constexpr int kDx[4] = {0, 1, 0, 1};
constexpr int kDy[4] = {0, 0, 1, 1};

double shape(int a, double xi, double eta) {
  const double fx = kDx[a] ? xi : 1.0 - xi;
  const double fy = kDy[a] ? eta : 1.0 - eta;
  return fx * fy;
}

void shape_grad(int a, double xi, double eta, double& gx, double& gy) {
  const double sx = kDx[a] ? 1.0 : -1.0;
  const double sy = kDy[a] ? 1.0 : -1.0;
  gx = sx * (kDy[a] ? eta : 1.0 - eta);
  gy = sy * (kDx[a] ? xi : 1.0 - xi);
}

std::vector<double> subdomain_weights(const MeshLevel& lv, Subdomain sub) {
  const int n = lv.n_per_side;
  const int half = n / 2;
  const int lo = sub == Subdomain::UpperRight ? half : 0;
  const int hi = sub == Subdomain::UpperRight ? n : half;
  const double w = 0.25 * lv.h * lv.h;
  std::vector<double> weights(static_cast<std::size_t>(n + 1) * (n + 1), 0.0);
  for (int e2 = lo; e2 < hi; ++e2)
    for (int e1 = lo; e1 < hi; ++e1)
      for (int a = 0; a < 4; ++a) weights[static_cast<std::size_t>(e2 + kDy[a]) * (n + 1) + (e1 + kDx[a])] += w;
  return weights;
}

double dot_interior(const std::vector<double>& a, const std::vector<double>& b, int n) {
  double s = 0.0;
  for (int i2 = 1; i2 < n; ++i2) {
    const std::size_t row = static_cast<std::size_t>(i2) * (n + 1);
    for (int i1 = 1; i1 < n; ++i1) s += a[row + i1] * b[row + i1];
  }
  return s;
}

}  // namespace

double functional(std::span<const double> nodal, const MeshLevel& level, Subdomain sub) {
  const int n = level.n_per_side;
  if (nodal.size() != static_cast<std::size_t>(n + 1) * (n + 1))
    throw std::invalid_argument("functional: nodal vector does not match mesh");
  const int half = n / 2;
  const int lo = sub == Subdomain::UpperRight ? half : 0;
  const int hi = sub == Subdomain::UpperRight ? n : half;
  double total = 0.0;
  for (int e2 = lo; e2 < hi; ++e2)
    for (int e1 = lo; e1 < hi; ++e1) {
      double corners = 0.0;
      for (int a = 0; a < 4; ++a) corners += nodal[static_cast<std::size_t>(e2 + kDy[a]) * (n + 1) + (e1 + kDx[a])];
      total += 0.25 * corners;
    }
  return total * level.h * level.h;
}

namespace {

std::vector<double> quadrature_abscissae(const MeshLevel& lv, const Gauss1d& g) {
  std::vector<double> xs;
  xs.reserve(static_cast<std::size_t>(lv.n_per_side) * g.xi.size());
  for (int e = 0; e < lv.n_per_side; ++e)
    for (double xi : g.xi) xs.push_back((e + xi) * lv.h);
  return xs;
}

}  // namespace

ForwardSolver::ForwardSolver(const field::FieldSpec& spec, MeshLevel level, FemOptions options)
    : spec_(spec),
      level_(level),
      opt_(std::move(options)),
      coefficient_(spec, quadrature_abscissae(level, gauss_rule(opt_.quad_order))) {
  const Gauss1d g = gauss_rule(opt_.quad_order);
  nq_ = static_cast<int>(g.xi.size());
  if (!(opt_.tol > 0.0)) throw ConfigError("fem.tol must be positive");

  // Weighted reference stiffness per quadrature point; independent of h in 2D.
  local_.resize(static_cast<std::size_t>(nq_ * nq_));
  for (int q2 = 0; q2 < nq_; ++q2)
    for (int q1 = 0; q1 < nq_; ++q1) {
      auto& K = local_[static_cast<std::size_t>(q2 * nq_ + q1)];
      const double w = g.w[q1] * g.w[q2];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double ax, ay, bx, by;
          shape_grad(a, g.xi[q1], g.xi[q2], ax, ay);
          shape_grad(b, g.xi[q1], g.xi[q2], bx, by);
          K[a * 4 + b] = w * (ax * bx + ay * by);
        }
    }

  const int n = level_.n_per_side;
  const double h = level_.h;
  load_.assign(static_cast<std::size_t>(n + 1) * (n + 1), 0.0);
  for (int e2 = 0; e2 < n; ++e2)
    for (int e1 = 0; e1 < n; ++e1)
      for (int q2 = 0; q2 < nq_; ++q2)
        for (int q1 = 0; q1 < nq_; ++q1) {
          const double x1 = (e1 + g.xi[q1]) * h;
          const double x2 = (e2 + g.xi[q2]) * h;
          const double f = opt_.forcing ? opt_.forcing(x1, x2) : 100.0 * x1;
          const double w = g.w[q1] * g.w[q2] * h * h * f;
          for (int a = 0; a < 4; ++a)
            load_[static_cast<std::size_t>(e2 + kDy[a]) * (n + 1) + (e1 + kDx[a])] += w * shape(a, g.xi[q1], g.xi[q2]);
        }
  for (int i = 0; i <= n; ++i) {
    load_[static_cast<std::size_t>(i)] = 0.0;
    load_[static_cast<std::size_t>(n) * (n + 1) + i] = 0.0;
    load_[static_cast<std::size_t>(i) * (n + 1)] = 0.0;
    load_[static_cast<std::size_t>(i) * (n + 1) + n] = 0.0;
  }
  w_upper_ = subdomain_weights(level_, Subdomain::UpperRight);
  w_lower_ = subdomain_weights(level_, Subdomain::LowerLeft);
}

void ForwardSolver::assemble(std::span<const double> y, Workspace& ws) const {
  const int n = level_.n_per_side;
  const std::size_t nodes = static_cast<std::size_t>(n + 1) * (n + 1);
  const std::size_t gq = static_cast<std::size_t>(n) * nq_;
  ws.coef.resize(gq * gq);
  coefficient_.evaluate(y, ws.coef, ws.scratch);

  ws.stencil.assign(nodes * 9, 0.0);
  double Ke[16];
  for (int e2 = 0; e2 < n; ++e2)
    for (int e1 = 0; e1 < n; ++e1) {
      std::fill(Ke, Ke + 16, 0.0);
      for (int q2 = 0; q2 < nq_; ++q2)
        for (int q1 = 0; q1 < nq_; ++q1) {
          // coefficient grid is indexed [x1 index][x2 index]
          const double u = ws.coef[(static_cast<std::size_t>(e1) * nq_ + q1) * gq + static_cast<std::size_t>(e2) * nq_ + q2];
          const auto& K = local_[static_cast<std::size_t>(q2 * nq_ + q1)];
          for (int k = 0; k < 16; ++k) Ke[k] += u * K[k];
        }
      for (int a = 0; a < 4; ++a) {
        const int a1 = e1 + kDx[a];
        const int a2 = e2 + kDy[a];
        if (a1 == 0 || a1 == n || a2 == 0 || a2 == n) continue;
        double* st = ws.stencil.data() + (static_cast<std::size_t>(a2) * (n + 1) + a1) * 9;
        for (int b = 0; b < 4; ++b) {
          const int o = (kDy[b] - kDy[a] + 1) * 3 + (kDx[b] - kDx[a] + 1);
          st[o] += Ke[a * 4 + b];
        }
      }
    }
}

int ForwardSolver::solve_system(Workspace& ws) const {
  const int n = level_.n_per_side;
  const std::size_t stride = static_cast<std::size_t>(n + 1);
  const std::size_t nodes = stride * stride;
  ws.x.assign(nodes, 0.0);

  if (opt_.solver == SolverKind::BandCholesky) {
    const int M = n - 1;
    const int dofs = M * M;
    const int bw = M + 1;
    const std::size_t width = static_cast<std::size_t>(bw) + 1;
    ws.band.assign(static_cast<std::size_t>(dofs) * width, 0.0);
    // band[k*width + (k - c)] = A(k, c) for c in [k - bw, k]
    auto node_of = [&](int k) { return (static_cast<std::size_t>(k / M) + 1) * stride + static_cast<std::size_t>(k % M) + 1; };
    for (int k = 0; k < dofs; ++k) {
      const int i1 = k % M;
      const int i2 = k / M;
      const double* st = ws.stencil.data() + node_of(k) * 9;
      for (int d2 = -1; d2 <= 0; ++d2)
        for (int d1 = -1; d1 <= 1; ++d1) {
          if (d2 == 0 && d1 > 0) continue;
          const int j1 = i1 + d1;
          const int j2 = i2 + d2;
          if (j1 < 0 || j1 >= M || j2 < 0) continue;
          const int c = j2 * M + j1;
          ws.band[static_cast<std::size_t>(k) * width + static_cast<std::size_t>(k - c)] = st[(d2 + 1) * 3 + (d1 + 1)];
        }
    }
    for (int k = 0; k < dofs; ++k) {
      double* Lk = ws.band.data() + static_cast<std::size_t>(k) * width;
      for (int c = std::max(0, k - bw); c <= k; ++c) {
        const double* Lc = ws.band.data() + static_cast<std::size_t>(c) * width;
        double sum = Lk[k - c];
        for (int t = std::max(0, k - bw); t < c; ++t) sum -= Lk[k - t] * Lc[c - t];
        if (c == k) {
          if (!(sum > 0.0)) throw NumericalError("band Cholesky: matrix is not positive definite");
          Lk[0] = std::sqrt(sum);
        } else {
          Lk[k - c] = sum / Lc[0];
        }
      }
    }
    ws.z.assign(static_cast<std::size_t>(dofs), 0.0);
    for (int k = 0; k < dofs; ++k) {
      const double* Lk = ws.band.data() + static_cast<std::size_t>(k) * width;
      double sum = load_[node_of(k)];
      for (int t = std::max(0, k - bw); t < k; ++t) sum -= Lk[k - t] * ws.z[t];
      ws.z[k] = sum / Lk[0];
    }
    for (int k = dofs - 1; k >= 0; --k) {
      double sum = ws.z[k];
      for (int r = k + 1; r <= std::min(dofs - 1, k + bw); ++r)
        sum -= ws.band[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(r - k)] * ws.z[r];
      ws.z[k] = sum / ws.band[static_cast<std::size_t>(k) * width];
    }
    for (int k = 0; k < dofs; ++k) ws.x[node_of(k)] = ws.z[k];
    return 0;
  }

  // Jacobi-preconditioned conjugate gradients on the interior nodes.
  ws.r = load_;
  ws.diag.assign(nodes, 0.0);
  ws.z.assign(nodes, 0.0);
  ws.p.assign(nodes, 0.0);
  ws.q.assign(nodes, 0.0);
  for (int i2 = 1; i2 < n; ++i2)
    for (int i1 = 1; i1 < n; ++i1) {
      const std::size_t p = static_cast<std::size_t>(i2) * stride + i1;
      ws.diag[p] = 1.0 / ws.stencil[p * 9 + 4];
    }
  const double bnorm = std::sqrt(dot_interior(ws.r, ws.r, n));
  if (bnorm == 0.0) return 0;
  const double target = opt_.tol * bnorm;

  for (std::size_t p = 0; p < nodes; ++p) ws.z[p] = ws.diag[p] * ws.r[p];
  ws.p = ws.z;
  double rz = dot_interior(ws.r, ws.z, n);
  const std::ptrdiff_t offs[9] = {-static_cast<std::ptrdiff_t>(stride) - 1, -static_cast<std::ptrdiff_t>(stride), -static_cast<std::ptrdiff_t>(stride) + 1,
                                  -1, 0, 1,
                                  static_cast<std::ptrdiff_t>(stride) - 1, static_cast<std::ptrdiff_t>(stride), static_cast<std::ptrdiff_t>(stride) + 1};
  for (int it = 1; it <= opt_.max_iterations; ++it) {
    double pq = 0.0;
    for (int i2 = 1; i2 < n; ++i2)
      for (int i1 = 1; i1 < n; ++i1) {
        const std::size_t p = static_cast<std::size_t>(i2) * stride + i1;
        const double* st = ws.stencil.data() + p * 9;
        const double* pp = ws.p.data() + p;
        double acc = 0.0;
        for (int o = 0; o < 9; ++o) acc += st[o] * pp[offs[o]];
        ws.q[p] = acc;
        pq += ws.p[p] * acc;
      }
    if (!(pq > 0.0)) throw NumericalError("CG breakdown: operator is not positive definite");
    const double step = rz / pq;
    double rr = 0.0;
    for (int i2 = 1; i2 < n; ++i2)
      for (int i1 = 1; i1 < n; ++i1) {
        const std::size_t p = static_cast<std::size_t>(i2) * stride + i1;
        ws.x[p] += step * ws.p[p];
        ws.r[p] -= step * ws.q[p];
        rr += ws.r[p] * ws.r[p];
      }
    if (std::sqrt(rr) <= target) return it;
    double rz_new = 0.0;
    for (int i2 = 1; i2 < n; ++i2)
      for (int i1 = 1; i1 < n; ++i1) {
        const std::size_t p = static_cast<std::size_t>(i2) * stride + i1;
        ws.z[p] = ws.diag[p] * ws.r[p];
        rz_new += ws.r[p] * ws.z[p];
      }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i2 = 1; i2 < n; ++i2)
      for (int i1 = 1; i1 < n; ++i1) {
        const std::size_t p = static_cast<std::size_t>(i2) * stride + i1;
        ws.p[p] = ws.z[p] + beta * ws.p[p];
      }
  }
  throw NumericalError("CG did not converge within " + std::to_string(opt_.max_iterations) + " iterations");
}

ForwardSolver::Functionals ForwardSolver::solve_functionals(std::span<const double> y, Workspace& ws) const {
  assemble(y, ws);
  solve_system(ws);
  Functionals f;
  for (std::size_t p = 0; p < ws.x.size(); ++p) {
    f.qoi += w_upper_[p] * ws.x[p];
    f.observation += w_lower_[p] * ws.x[p];
  }
  return f;
}

DiscreteForwardSolution ForwardSolver::solve(std::span<const double> y) const {
  Workspace ws;
  assemble(y, ws);
  DiscreteForwardSolution sol;
  sol.level = level_;
  sol.iterations = solve_system(ws);
  sol.nodal = std::move(ws.x);
  sol.qoi = functional(sol.nodal, level_, Subdomain::UpperRight);
  sol.observation = functional(sol.nodal, level_, Subdomain::LowerLeft);
  for (std::size_t p = 0; p < sol.nodal.size(); ++p) sol.energy += load_[p] * sol.nodal[p];
  return sol;
}

}  // namespace mlhoqmc::fem
