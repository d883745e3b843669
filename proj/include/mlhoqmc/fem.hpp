#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mlhoqmc/field.hpp"

namespace mlhoqmc::fem {

/// Uniform mesh of (0,1)^2 with h = 2^{-(level+ell0)}.
struct MeshLevel {
  int level = 0;
  int ell0 = 1;
  int n_per_side = 2;
  double h = 0.5;

  static MeshLevel make(int level, int ell0 = 1);
  int dof_count() const { return (n_per_side - 1) * (n_per_side - 1); }
  /// h^{-2} as an exact integer (work accounting).
  std::uint64_t inverse_h_squared() const {
    return static_cast<std::uint64_t>(n_per_side) * static_cast<std::uint64_t>(n_per_side);
  }
};

enum class SolverKind { Pcg, BandCholesky };

enum class Subdomain { LowerLeft, UpperRight };

struct FemOptions {
  double tol = 1e-10;
  int quad_order = 2;  // Gauss points per direction: 2 or 3
  SolverKind solver = SolverKind::Pcg;
  int max_iterations = 20000;
  /// Overrides the load f(x) = 100 x1 when set (test hook).
  std::function<double(double, double)> forcing;
};

struct DiscreteForwardSolution {
  MeshLevel level;
  /// Nodal values on the full (n+1)^2 node grid, row index along x2;
  /// boundary entries are zero.
  std::vector<double> nodal;
  double qoi = 0.0;
  double observation = 0.0;
  double energy = 0.0;  // a(q_h, q_h)
  int iterations = 0;

  double at(int i1, int i2) const { return nodal[static_cast<std::size_t>(i2) * (level.n_per_side + 1) + i1]; }
};

/// Exact integral of the Q1 interpolant of `nodal` over the subdomain
/// (0,0.5)^2 or (0.5,1)^2.
double functional(std::span<const double> nodal, const MeshLevel& level, Subdomain sub);

/// Reusable buffers for ForwardSolver::solve.
struct Workspace {
  std::vector<double> coef, scratch, stencil, x, r, z, p, q, diag, band;
};

/// Q1 Galerkin solver for -div(u(y) grad q) = f, q = 0 on the boundary.
/// Immutable after construction; concurrent solves need separate workspaces.
class ForwardSolver {
 public:
  ForwardSolver(const field::FieldSpec& spec, MeshLevel level, FemOptions options = {});

  const MeshLevel& level() const { return level_; }

  /// Solves at parameter y (only y.size() leading modes active). Throws
  /// NumericalError on non-convergence.
  DiscreteForwardSolution solve(std::span<const double> y) const;

  struct Functionals {
    double qoi = 0.0;
    double observation = 0.0;
  };
  Functionals solve_functionals(std::span<const double> y, Workspace& ws) const;

 private:
  void assemble(std::span<const double> y, Workspace& ws) const;
  int solve_system(Workspace& ws) const;

  field::FieldSpec spec_;
  MeshLevel level_;
  FemOptions opt_;
  field::TensorCoefficient coefficient_;
  int nq_ = 2;
  std::vector<std::array<double, 16>> local_;  // per reference quadrature point
  std::vector<double> load_;                    // full node grid
  std::vector<double> w_upper_, w_lower_;       // functional weights on node grid
};

}  // namespace mlhoqmc::fem
