// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "stomsfem/field.hpp"
#include "stomsfem/msfem.hpp"
#include "stomsfem/sparse_grid.hpp"

// Per-patch parametric surrogates of the upscaled element matrices: offline
// tabulation plus polynomial interpolation over the local parameters, and a
// reduced-basis variant that solves the cell problems in a small KL space of
// precomputed basis functions.  Online evaluation never touches the fine grid.

namespace stomsfem {

// Requested surrogate construction cannot represent the model (non-affine
// coefficients for the reduced basis, sample-dependent boundary data).
struct UnsupportedModel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Affine map between the native parameter box and [-1,1]^dim.  Uniform
// parameters use their native range; unbounded Gaussian parameters are
// truncated to [-3,3] and out-of-box samples are reported so the caller can
// fall back to a direct cell solve.
struct RangeMap {
  std::vector<double> lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const double* xi) const;
  void to_unit(const double* xi, double* t) const;
  void to_native(const double* t, double* xi) const;
  std::vector<double> mid() const;
};

RangeMap range_map(const std::vector<ParamDist>& dists);

struct SurrogateGridSpec {
  enum Kind { tensor_chebyshev, sparse_clenshaw_curtis, sparse_trapezoidal };
  Kind kind = tensor_chebyshev;
  std::vector<int> nu;  // tensor nodes per axis; a single entry broadcasts
  int level = 2;        // sparse-grid level
};

// Values stored per training node: the 4x4 stiffness row-major, then the
// 4 loads.
constexpr int kLocalEntries = 20;

struct InterpolantLocal {
  int patch_id = -1;
  SurrogateGridSpec::Kind kind = SurrogateGridSpec::tensor_chebyshev;
  std::vector<int> nu;  // resolved per-axis node counts (tensor grids)
  int level = 0;
  RangeMap range;
  std::vector<double> values;  // node-major, kLocalEntries per node
  SparseGrid sparse;           // sparse grids: node identities and terms

  int dim() const { return range.dim(); }
  std::size_t n_nodes() const { return values.size() / kLocalEntries; }
};

// Training nodes in the unit box, in storage order (tensor: axis 0 fastest).
std::vector<std::vector<double>> training_nodes_unit(const SurrogateGridSpec& grid, int dim);

// Direct evaluation of one patch at a native parameter point: synthesize the
// window medium, solve the cell problem, assemble the upscaled block.
using LocalSolveFn = std::function<LocalUpscaled(const std::vector<double>& xi)>;

LocalSolveFn direct_cell_solver(const Meshes& meshes, const CoarsePatch& patch,
                                const LocalMedium& medium,
                                CellProblemSpec::Boundary boundary_kind,
                                CellProblemSpec::Formulation formulation,
                                std::function<double(double, double)> source);

// Tabulates solve_at over the training grid mapped into the native box.
InterpolantLocal build_interpolant(int patch_id, const std::vector<ParamDist>& dists,
                                   const SurrogateGridSpec& grid, const LocalSolveFn& solve_at);

InterpolantLocal build_interpolant(const Meshes& meshes, const CoarsePatch& patch,
                                   const LocalMedium& medium, const SurrogateGridSpec& grid,
                                   CellProblemSpec::Boundary boundary_kind,
                                   CellProblemSpec::Formulation formulation,
                                   const std::function<double(double, double)>& source);

// Entry-wise interpolation at a native point; empty when xi leaves the
// training box (caller falls back to a direct solve).
std::optional<LocalUpscaled> eval_interpolant(const InterpolantLocal& it, const double* xi);

// Stored values at one training node (by storage index).
LocalUpscaled node_value(const InterpolantLocal& it, std::size_t node);

struct RbOptions {
  // keep modes while sqrt(lambda_q / lambda_1) >= energy_threshold; a
  // non-positive threshold keeps fixed_q modes (default 3 per local parameter)
  double energy_threshold = 0.0;
  int fixed_q = -1;
  SolveOptions solve;
};

struct ReducedBasisLocal {
  int patch_id = -1;
  CellProblemSpec::Formulation formulation = CellProblemSpec::galerkin;
  RangeMap range;
  int n_modes = 0;  // affine coefficient modes (parameters), k=0 is the mean

  // per element basis index l: KL mean and modes on the window, in the
  // kappa-mean energy product; energies descending
  struct PerBasis {
    std::vector<double> mean_win;
    std::vector<std::vector<double>> modes_win;
    std::vector<double> energies;
    // reduced cell-problem blocks, one per affine mode (index 0: mean part):
    // stiffness q x q row-major and load of length q
    std::vector<std::vector<double>> A;
    std::vector<std::vector<double>> F;

    int q() const { return static_cast<int>(modes_win.size()); }
  };
  std::array<PerBasis, 4> basis;

  // element-restricted data over the stacked functions (per l: mean, then
  // modes); offsets index the stack
  std::array<int, 4> offset{};
  int n_stack = 0;
  std::vector<std::array<double, 4>> corner;      // element corner values
  std::vector<std::vector<double>> elem_energy;   // per mode: n_stack x n_stack
  std::vector<std::vector<double>> test_energy;   // PG: per mode, n_stack x 4
  std::vector<double> load;                       // galerkin source integrals
  std::array<double, 4> test_load{};              // PG loads (sample-free)

  int dim() const { return range.dim(); }
};

// Snapshots on the training grid, KL per basis index in the kappa-mean energy
// product, affine reduced blocks and element quadrature tensors.  Requires an
// affine medium and sample-independent boundary data; throws UnsupportedModel
// otherwise.
ReducedBasisLocal build_reduced_basis(const Meshes& meshes, const CoarsePatch& patch,
                                      const LocalMedium& medium, const SurrogateGridSpec& training,
                                      const RbOptions& opts,
                                      CellProblemSpec::Formulation formulation,
                                      const std::function<double(double, double)>& source);

// Reduced cell solves plus tensor contraction; empty when xi leaves the box.
// Throws when a reduced system loses positive definiteness.
std::optional<LocalUpscaled> eval_reduced_basis(const ReducedBasisLocal& rb, const double* xi);

// Reduced-space window solution for one basis index (diagnostics and tests).
std::vector<double> rb_window_solution(const ReducedBasisLocal& rb, int l, const double* xi);

// Binary (de)serialization of one patch record; byte-stable for fixed inputs.
void write_interpolant(std::ostream& os, const InterpolantLocal& it);
InterpolantLocal read_interpolant(std::istream& is);
void write_reduced_basis(std::ostream& os, const ReducedBasisLocal& rb);
ReducedBasisLocal read_reduced_basis(std::istream& is);

}  // namespace stomsfem
