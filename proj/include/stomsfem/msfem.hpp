// SPDX-License-Identifier: Apache-2.0
//
// Local upscaling: cell problems for multiscale basis functions (optionally
// oversampled), per-element upscaled stiffness and load, coarse assembly,
// coarse solve and fine-scale reconstruction.
#pragma once

#include <array>
#include <functional>
#include <vector>

#include "stomsfem/fem.hpp"
#include "stomsfem/grid.hpp"

namespace stomsfem {

struct CellProblemSpec {
  enum Boundary { bilinear, oscillatory };
  enum Formulation { galerkin, petrov_galerkin };
  CoarsePatch patch;
  Boundary boundary_kind = bilinear;
  Formulation formulation = galerkin;
};

// Petrov-Galerkin whenever oversampling is on (it reduces the nonconforming
// error introduced by the extracted basis), plain Galerkin otherwise.
CellProblemSpec::Formulation default_formulation(const GridSpec& spec);

// fine subgrid over a cell window; node coordinates agree with the parent
// grid at the window corners and to one ulp elsewhere
RectGrid window_grid(const RectGrid& fine, int i0, int j0, int nx, int ny);

// Raw cell-problem solutions on the sample window, one per coarse corner.
// psi[l] holds (win_nx+1)*(win_ny+1) node values, row-major.  V[l][l'] is
// psi[l] evaluated at element corner l'; without oversampling V is exactly
// the identity because the corners are constrained nodes.
struct WindowBasis {
  int patch_id = -1;
  std::array<std::vector<double>, 4> psi;
  std::array<std::array<double, 4>, 4> V;
};

// Nodal multiscale basis restricted to the element submesh: phi[l] holds
// (refine+1)^2 node values with phi[l](corner l') = delta_{ll'}.
struct MultiscaleBasis {
  int patch_id = -1;
  std::array<std::vector<double>, 4> phi;
  std::array<std::array<double, 4>, 4> recombine;  // phi = recombine * psi
};

struct LocalUpscaled {
  std::array<std::array<double, 4>, 4> S{};
  std::array<double, 4> b{};
};

// Solves the four homogeneous Dirichlet cell problems on the patch's sample
// window.  kappa_window: per-cell values over the window, row-major.
// Boundary data per corner l: the element's bilinear shape extended as a
// polynomial to the window boundary, or, for oscillatory data, one
// two-point problem (kappa_edge phi')' = 0 per window edge whose endpoint
// values are that extension at the window corners (the profile follows the
// cumulative 1/kappa of the cell row adjacent to the edge; at eta=1 the
// endpoints are 0/1 and this is the classical oscillatory construction).
WindowBasis solve_cell_window(const Meshes& meshes, const CoarsePatch& patch,
                              const std::vector<double>& kappa_window,
                              CellProblemSpec::Boundary boundary_kind,
                              const SolveOptions& opts = {});

// Extraction to the element submesh plus the linear recombination that
// restores the nodal property.  Throws if the corner-value matrix is
// numerically singular (degenerate oversampling window).
MultiscaleBasis recombine_to_element(const Meshes& meshes, const CoarsePatch& patch,
                                     const WindowBasis& win);

MultiscaleBasis solve_cell(const Meshes& meshes, const CellProblemSpec& spec,
                           const std::vector<double>& kappa_window,
                           const SolveOptions& opts = {});

// Upscaled 4x4 stiffness and load for one coarse element.
//   galerkin:        S_ll' = int_elem kappa grad(phi_l) . grad(phi_l'),
//                    b_l   = int_elem source phi_l
//   petrov_galerkin: rows are tested against the element's bilinear shapes,
//                    so b is independent of the sample.
// Source integration uses the midpoint rule per fine cell, matching the
// fine-scale assembly.  A null source yields b = 0.
LocalUpscaled assemble_local(const Meshes& meshes, const CoarsePatch& patch,
                             const MultiscaleBasis& basis,
                             const std::vector<double>& kappa_window,
                             const std::function<double(double, double)>& source,
                             CellProblemSpec::Formulation formulation);

// Scatter-add of the per-element blocks over the coarse mesh, Dirichlet
// elimination included.  locals must hold one entry per coarse element,
// indexed by patch id.
SparseSystem assemble_global(const Meshes& meshes, const std::vector<LocalUpscaled>& locals,
                             const std::vector<int>& constrained_nodes,
                             const std::vector<double>& constrained_values);

// Coarse solve (SPD contract for Galerkin; Petrov-Galerkin systems go
// through sparse LU).
SolveInfo solve_coarse(const SparseSystem& sys, std::vector<double>& U,
                       CellProblemSpec::Formulation formulation);

// u_H on the fine mesh from coarse nodal values and per-element bases.
// Fine nodes shared by several elements average the (possibly
// nonconforming) contributions; coarse nodes carry U verbatim.
std::vector<double> reconstruct(const Meshes& meshes, const std::vector<double>& U,
                                const std::function<const MultiscaleBasis&(int)>& basis_at);

// coarse quadratic form sum_m U_m^T S^m U_m (energy of the coarse solution
// under Galerkin upscaling)
double coarse_energy(const Meshes& meshes, const std::vector<LocalUpscaled>& locals,
                     const std::vector<double>& U);

// per-cell slice of a full fine field over the patch's sample window
std::vector<double> window_slice(const RectGrid& fine, const CoarsePatch& patch,
                                 const std::vector<double>& kappa_fine);

// Direct MsFEM pipeline for one sampled medium: cell problems on every
// patch, upscaling, coarse solve, optional fine-scale reconstruction.
// This is the per-sample path the surrogates are benchmarked against.
struct MsfemSolution {
  std::vector<double> U;       // coarse node values
  std::vector<double> u_fine;  // reconstructed fine values; empty unless requested
  SolveInfo info;
};

MsfemSolution msfem_solve_sample(const Meshes& meshes, const std::vector<double>& kappa_fine,
                                 const std::function<double(double, double)>& source,
                                 const std::vector<int>& constrained_nodes,
                                 const std::vector<double>& constrained_values,
                                 CellProblemSpec::Boundary boundary_kind,
                                 CellProblemSpec::Formulation formulation, bool want_fine,
                                 int workers = 0);

}  // namespace stomsfem
