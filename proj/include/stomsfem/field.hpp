// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "stomsfem/grid.hpp"

// Parametrized random media kappa(x, xi) = T(mean(x) + sum_k xi_k g_k(x)),
// local Karhunen-Loeve bases, sampling and projection.  Fields live on fine
// cell centers (piecewise constant), matching the FEM assembly quadrature.

namespace stomsfem {

enum class Transform { identity, exp_shift, tanh_bounded };

struct ParamDist {
  enum Kind { uniform, gaussian } kind = uniform;
  double a = 0.0, b = 1.0;  // uniform range; gaussian is standard normal
  double mean() const { return kind == uniform ? 0.5 * (a + b) : 0.0; }
};

// One spatial mode g_k.  indicator: amplitude inside the support box.
// grid: explicit values on a fine-cell window.  separable: outer product
// u(x-cell) v(y-cell) over the whole grid (used for KL synthesis).
struct ModeField {
  enum Kind { indicator, grid, separable } kind = indicator;
  Box support;
  double amplitude = 1.0;
  int win_i0 = 0, win_j0 = 0, win_nx = 0, win_ny = 0;
  std::vector<double> values;      // grid: win_nx*win_ny, row-major
  std::vector<double> xvec, yvec;  // separable factors per cell index

  double eval_cell(const RectGrid& fine, int ci, int cj) const;
};

struct FieldModel {
  std::function<double(double, double)> mean_field;  // null means zero
  std::vector<ModeField> modes;
  std::vector<ParamDist> dists;  // one per mode
  Transform transform = Transform::identity;
  double kmin = 0.0, kmax = 0.0;  // exp_shift floor; tanh_bounded [kmin,kmax]

  double apply_transform(double v) const;
};

// Fills each patch's active_params from the model's mode supports.
void attach_active_params(Meshes& meshes, const FieldModel& model);

// Cell-wise lower bound of the transformed field over the parameter box
// (extremes of bounded ranges; Gaussian modes require a bounding transform).
// Returns the bound; throws std::invalid_argument if it is not positive.
double validate_ellipticity(const FieldModel& model, const RectGrid& fine);

struct SampleField {
  std::vector<double> xi;
  std::vector<double> kappa;  // per fine cell
};

// Deterministic given seed: xi drawn in mode order, then synthesis+transform.
SampleField sample_field(const FieldModel& model, const RectGrid& fine, std::uint64_t seed);

// Latent (untransformed) synthesis used by projection paths.
void synthesize_latent(const FieldModel& model, const RectGrid& fine,
                       const std::vector<double>& xi, std::vector<double>& latent);

struct CovarianceKernel {
  enum Kind { gaussian_anisotropic, explicit_matrix } kind = gaussian_anisotropic;
  double l1 = 1.0, l2 = 1.0;
  // explicit_matrix: entries generated on demand for arbitrary point pairs
  std::function<double(double, double, double, double)> fn;

  double operator()(double x1, double y1, double x2, double y2) const;
  bool separable() const { return kind == gaussian_anisotropic; }
};

struct KlTruncation {
  enum Kind { keep_fraction, keep_count } kind = keep_fraction;
  double fraction = 0.99;
  int count = 0;
  static KlTruncation by_fraction(double p) { return {keep_fraction, p, 0}; }
  static KlTruncation by_count(int k) { return {keep_count, 0.0, k}; }
};

struct LocalKL {
  int patch_id = -1;
  int win_i0 = 0, win_j0 = 0, win_nx = 0, win_ny = 0;
  double cell_area = 0.0;
  std::vector<double> lambda;              // kept eigenvalues, descending
  std::vector<std::vector<double>> modes;  // kept eigenfunctions on window cells
  std::vector<double> spectrum;            // all eigenvalues, descending
  double total_trace = 0.0;
  double captured_fraction = 0.0;
  int keep = 0;
};

// Shared cache of 1D Nystrom eigenproblems for the stationary Gaussian
// kernel; congruent windows reuse the same spectra.
class Kl1dCache {
 public:
  struct Entry {
    std::vector<double> lambda;              // descending, clamped at 0
    std::vector<std::vector<double>> vecs;   // orthonormal under h-weighted l2
    double trace = 0.0;
  };
  const Entry& gaussian(int n, double h, double corr_len);

 private:
  std::map<std::string, Entry> cache_;
  std::mutex mu_;
};

// Nystrom eigendecomposition of the covariance restricted to a window of the
// fine grid, cell-center collocation with cell-area weights.  Separable
// Gaussian kernels factor into two 1D problems; explicit kernels use a dense
// eigensolve (window capped at 6000 cells).
LocalKL build_local_kl(const CovarianceKernel& kernel, const RectGrid& fine,
                       int win_i0, int win_j0, int win_nx, int win_ny,
                       const KlTruncation& crit, int patch_id = -1,
                       Kl1dCache* cache = nullptr);

// Terms needed to reach fraction p of the given spectrum's total mass.
int count_for_fraction(const std::vector<double>& spectrum, double total, double p);

struct Projection {
  std::vector<double> xi;
  std::vector<int> skipped;  // modes with lambda below 1e-14
};

// xi_k = (1/sqrt(lambda_k)) * sum_cells area * f_k * delta; delta is the
// (latent) field minus mean on the KL window.
Projection project_to_local(const std::vector<double>& delta_window, const LocalKL& kl);

// Parameter-to-medium map restricted to one patch window.
struct LocalMedium {
  int patch_id = -1;
  int win_i0 = 0, win_j0 = 0, win_nx = 0, win_ny = 0;
  double x0 = 0.0, y0 = 0.0, hx = 0.0, hy = 0.0;
  std::vector<double> mean_cells;
  std::vector<std::vector<double>> mode_cells;
  std::vector<ParamDist> dists;
  Transform transform = Transform::identity;
  double kmin = 0.0, kmax = 0.0;

  int dim() const { return static_cast<int>(mode_cells.size()); }
  bool affine() const { return transform == Transform::identity; }
  void evaluate(const double* xi, std::vector<double>& kappa) const;
};

// Restriction of an affine mode model to the patch's sample window, keeping
// the patch's active modes as local parameters.
LocalMedium restrict_model(const FieldModel& model, const Meshes& meshes, const CoarsePatch& patch);

// Local medium parametrized by a local KL basis: modes sqrt(lambda_k) f_k,
// standard-normal parameters, mean and transform taken from the model.
LocalMedium medium_from_local_kl(const FieldModel& model, const Meshes& meshes,
                                 const CoarsePatch& patch, const LocalKL& kl);

// Global separable-KL modes capturing the given spectrum fraction, as
// standard-normal separable ModeFields (sqrt(lambda) folded into xvec).
// Used as the ground-truth spectral sampler.
std::vector<ModeField> separable_kl_modes(const CovarianceKernel& kernel, const RectGrid& fine,
                                          double keep_fraction, int* total_terms = nullptr);

}  // namespace stomsfem
