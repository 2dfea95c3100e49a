// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <ostream>
#include <vector>

#include "stomsfem/grid.hpp"

// Q1 bilinear FEM for -div(kappa grad u) = b on uniform rectangle grids with
// per-cell constant kappa.  Element integration of grad(phi_i).grad(phi_j) is
// exact; loads use the cell midpoint rule.  Dirichlet constraints are
// eliminated; unconstrained boundary is natural (zero Neumann).

namespace stomsfem {

struct CsrMatrix {
  int rows = 0, cols = 0;
  std::vector<int> rowptr, col;
  std::vector<double> val;
  void multiply(const double* x, double* y) const;
};

// element stiffness on an hx-by-hy rectangle with unit kappa; corner order
// ccw (ll, lr, ur, ul)
std::array<std::array<double, 4>, 4> q1_element_stiffness(double hx, double hy);

struct EllipticProblem {
  RectGrid grid;
  const std::vector<double>* kappa = nullptr;     // per cell, row-major
  std::function<double(double, double)> source;   // null means zero
  std::vector<int> constrained_nodes;             // Dirichlet node ids
  std::vector<double> constrained_values;
};

// all boundary node ids of a grid, ascending
std::vector<int> boundary_nodes(const RectGrid& grid);

struct SparseSystem {
  int total_nodes = 0;
  CsrMatrix A;      // free x free
  CsrMatrix A_fc;   // free x constrained coupling
  std::vector<double> b_free;            // source contribution to free rows
  std::vector<double> rhs;               // b_free - A_fc * g
  std::vector<int> free_ids;             // free index -> node id
  std::vector<int> node_to_free;         // node id -> free index or -1
  std::vector<int> constrained_ids;      // constrained index -> node id
  std::vector<double> constrained_values;

  // swap in new Dirichlet values (same constrained set) and rebuild rhs
  void set_constraint_values(const double* g);
  void scatter(const std::vector<double>& u_free, std::vector<double>& u_full) const;
};

SparseSystem assemble(const EllipticProblem& problem);

// scatter-add of caller-supplied per-element 4x4 matrices and load vectors
// (coarse upscaled assembly shares this path with the fine Q1 assembly)
using ElementProvider =
    std::function<void(int ci, int cj, std::array<std::array<double, 4>, 4>& S,
                       std::array<double, 4>& b)>;
SparseSystem assemble_from_elements(const RectGrid& grid, const ElementProvider& element,
                                    const std::vector<int>& constrained_nodes,
                                    const std::vector<double>& constrained_values);

struct SolveOptions {
  enum Method { auto_pick, pcg_jacobi, pcg_ic0, band_cholesky, sparse_direct };
  Method method = auto_pick;
  double rel_tol = 1e-10;
  int max_iter = 0;  // 0 picks a size-based cap
};

struct SolveInfo {
  int iterations = 0;
  double rel_residual = 0.0;
  const char* method = "";
};

// SPD path; u_full gets free and constrained values.  Throws on
// non-convergence (iteration cap) with the residual in the message.
SolveInfo solve(const SparseSystem& sys, std::vector<double>& u_full,
                const SolveOptions& opts = {});

// nonsymmetric reduced systems (Petrov-Galerkin coarse matrices)
SolveInfo solve_unsymmetric(const SparseSystem& sys, std::vector<double>& u_full);

// Band Cholesky factorization kept for multiple right-hand sides (cell
// problems solve four boundary data sets against one matrix).
class BandCholesky {
 public:
  void factor(const CsrMatrix& A);
  void solve(const double* rhs, double* x) const;
  int size() const { return n_; }

 private:
  int n_ = 0, bw_ = 0;
  std::vector<double> band_;
};

// Repeated SPD solves with fixed sparsity and changing values (sample loops
// over fine meshes); sparse LDLT with symbolic analysis done once.
class RepeatSolver {
 public:
  RepeatSolver();
  ~RepeatSolver();
  SolveInfo solve(const SparseSystem& sys, std::vector<double>& u_full);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Same, for nonsymmetric coarse systems (sparse LU).
class RepeatLU {
 public:
  RepeatLU();
  ~RepeatLU();
  SolveInfo solve(const SparseSystem& sys, std::vector<double>& u_full);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// sum over a cell window of w_c * (u restricted to cell)^T K_hat (v restricted
// to cell); the energy inner product used by assemblies, reduced bases and
// consistency checks
double cell_weighted_grad_dot(const RectGrid& grid, const double* w_cells,
                              const std::vector<double>& u_nodes,
                              const std::vector<double>& v_nodes,
                              int ci0, int cj0, int cnx, int cny);

// same contraction over an explicit local layout: nx x ny cells of metric
// (hx, hy), node vectors of length (nx+1)*(ny+1)
double cell_weighted_grad_dot(double hx, double hy, int nx, const double* w_cells,
                              const double* u_nodes, const double* v_nodes,
                              int ci0, int cj0, int cnx, int cny);

// header row then x,y,value per node, row-major
void write_node_field_csv(std::ostream& os, const RectGrid& grid, const std::vector<double>& u);

}  // namespace stomsfem
