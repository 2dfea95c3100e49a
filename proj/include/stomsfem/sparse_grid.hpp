// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <vector>

// Nested 1D interpolation/quadrature rules on [-1,1] and their Smolyak
// sparse-grid combinations.  Nodes carry dyadic keys: the same point has the
// same key at every level that contains it, so nested grids can be merged and
// looked up exactly, with no coordinate comparisons.

namespace stomsfem {

enum class RuleKind { clenshaw_curtis, trapezoid };

// 1 node at level 0, 2^level + 1 from level 1 on.
int rule_size(int level);

// Ascending nodes in [-1,1].  clenshaw_curtis: Gauss-Lobatto points
// -cos(pi j / 2^level); trapezoid: equidistant.  Level 0 is {0} for both.
std::vector<double> rule_nodes(RuleKind kind, int level);

// Quadrature weights for the unit density on [-1,1] (they sum to 2).
std::vector<double> rule_weights(RuleKind kind, int level);

// Dyadic key per node position; identical across levels for shared points.
std::vector<std::uint32_t> rule_keys(int level);

// Chebyshev zeros, ascending in (-1,1), and the matching Fejer quadrature
// weights (sum 2).  Used by the tensor interpolation grids, which are not
// nested and carry no keys.
std::vector<double> chebyshev_zeros(int n);
std::vector<double> fejer1_weights(int n);

// Barycentric interpolation weights for the two node families.
std::vector<double> barycentric_weights_chebyshev_zeros(int n);
std::vector<double> barycentric_weights_lobatto(int n_nodes);

// Coefficients c with sum_i c[i] f(x_i) = p(x) for the interpolant through
// (x_i, f(x_i)); exact one-hot when x hits a node.
void barycentric_coeffs(const std::vector<double>& nodes, const std::vector<double>& bw,
                        double x, std::vector<double>& c);

// Piecewise-linear hat coefficients on sorted nodes (clamped outside).
void linear_coeffs(const std::vector<double>& nodes, double x, std::vector<double>& c);

// One term of the Smolyak combination: a tensor rule at the given per-axis
// levels, entering with a signed coefficient.
struct SparseTerm {
  std::vector<int> levels;
  double coeff;
};

// All terms of the isotropic combination at the given level (coefficients
// (-1)^(level-|l|) C(dim-1, level-|l|) over max(0, level-dim+1) <= |l| <= level).
std::vector<SparseTerm> smolyak_terms(int dim, int level);

struct SparseGrid {
  RuleKind kind = RuleKind::clenshaw_curtis;
  int dim = 0;
  int level = 0;
  std::vector<SparseTerm> terms;
  // unique nodes in key order; weights are the combined quadrature weights
  // for the unit density (they sum to 2^dim)
  std::vector<std::vector<std::uint32_t>> keys;
  std::vector<std::vector<double>> points;
  std::vector<double> weights;
  std::map<std::vector<std::uint32_t>, int> index;

  std::size_t size() const { return points.size(); }
};

SparseGrid build_sparse_grid(RuleKind kind, int dim, int level);

// Smolyak interpolation of vector-valued node data.  values holds n_out
// doubles per unique node, indexed as in grid.index; x is in [-1,1]^dim.
void sparse_interpolate(const SparseGrid& grid, const std::vector<double>& values, int n_out,
                        const double* x, double* out);

}  // namespace stomsfem
