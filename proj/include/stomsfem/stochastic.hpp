// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stomsfem/field.hpp"
#include "stomsfem/sparse_grid.hpp"
#include "stomsfem/surrogate.hpp"

// Stochastic drivers over a per-sample solver: Monte Carlo, two-level Monte
// Carlo, and sparse-grid collocation.  Sample parameters are drawn from
// per-index RNG streams and accumulated in fixed chunks, so estimates are
// bit-identical for a given seed regardless of the worker count.

namespace stomsfem {

struct EstimatorSpec {
  enum Kind { mc, two_level_mc, sc } kind = mc;
  enum Quantity { mean_field, variance_field, functional } quantity = mean_field;
  long n_on = 100;       // samples (mc) / level-one samples (two-level)
  long n_on_fine = 0;    // two-level correction samples
  int sc_level = 2;
  RuleKind sc_rule = RuleKind::clenshaw_curtis;
  std::uint64_t seed = 1;
};

struct EstimatorReport {
  std::vector<double> mean;      // nodal estimate
  std::vector<double> variance;  // nodal estimate, biased 1/N moment difference
  long n_samples = 0;
  long n_fallback = 0;  // direct solves taken when a surrogate refused a point
  long n_aborted = 0;   // two-level correction samples lost to solver failures
  double functional_mean = 0.0;
  double functional_variance = 0.0;
  // integrated empirical variances of the two-level terms and the resulting
  // sampling contribution to the mean-square error
  double var_level1 = 0.0;
  double var_correction = 0.0;
  double mse_sampling = 0.0;
  double seconds = 0.0;
};

// Per-sample coarse/fine solver: returns the nodal field for the given
// parameter draw; sets fallback when a surrogate point needed a direct solve.
struct SampleResult {
  std::vector<double> u;
  bool fallback = false;
};
using SampleSolver = std::function<SampleResult(std::size_t index, const std::vector<double>& xi)>;

// Optional scalar quantity accumulated alongside the field.
using FieldFunctional = std::function<double(const std::vector<double>&)>;

// The parameter draw for one sample index (one splitmix stream per index, in
// model mode order), shared by every driver and by field-level sampling.
std::vector<double> draw_xi(const std::vector<ParamDist>& dists, std::uint64_t seed,
                            std::uint64_t index);

EstimatorReport run_mc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                       const SampleSolver& solve, const FieldFunctional& functional = {},
                       int workers = 0);

// Level-one estimate from `coarse` plus a correction from `fine - coarse` on
// independent streams; both solvers must report fields on the same node set.
// n_on_fine = 0 reduces to run_mc on `coarse` exactly.  A throwing fine solve
// aborts that correction sample and is counted in n_aborted.
EstimatorReport run_two_level_mc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                                 const SampleSolver& coarse, const SampleSolver& fine,
                                 const FieldFunctional& functional = {}, int workers = 0);

// Sparse-grid node solver: the dyadic key identifies the node in the offline
// stores (search-and-plug-in); xi is the native parameter point.
using NodeSolver = std::function<std::vector<double>(
    std::size_t node, const std::vector<std::uint32_t>& key, const std::vector<double>& xi)>;

// Quadrature over the sparse grid for uniform parameters (the node weights
// are normalized by the box volume); variance via the moment difference.
EstimatorReport run_sc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                       const NodeSolver& solve_node, const FieldFunctional& functional = {},
                       int workers = 0);

// Fine nodal field sampled at the coarse nodes (coarse node (I,J) coincides
// with fine node (I*refine, J*refine)), so fine and coarse solves can be
// compared or differenced on the coarse node set.
std::vector<double> restrict_to_coarse_nodes(const Meshes& meshes,
                                             const std::vector<double>& u_fine);

// Sample count balancing the sampling error against an H^beta discretization
// error with unit constants: H^-beta for mc, H^(-beta/zeta) for sc.  h and
// target_error are accepted for context but do not move the recommendation.
long balance_budget(EstimatorSpec::Kind kind, double H, double h, double beta, double zeta,
                    double target_error = 0.0);

}  // namespace stomsfem
