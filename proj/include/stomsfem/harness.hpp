// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stomsfem/field.hpp"
#include "stomsfem/msfem.hpp"
#include "stomsfem/stochastic.hpp"
#include "stomsfem/surrogate.hpp"

// Experiment orchestration: named presets, key-value config files, the
// offline/online pipeline with artifact persistence, cost accounting, CSV
// emission and the CLI.

namespace stomsfem {

struct ExperimentConfig {
  enum Method { fine_fem, msfem_direct, stomsfem_interp, stomsfem_rb };

  std::string preset = "custom";
  std::string geometry_file;  // resolved path actually loaded; empty when none
  Domain2D domain{{0.0, 1.0}, {0.0, 1.0}};
  GridSpec grid{16, 16, 8, 2.0};
  Method method = stomsfem_interp;
  CellProblemSpec::Boundary boundary = CellProblemSpec::bilinear;
  CellProblemSpec::Formulation formulation = CellProblemSpec::galerkin;

  // Affine presets carry their modes here; covariance presets leave modes
  // empty until prepare() synthesizes the global KL sampler on the fine grid.
  FieldModel model;
  bool covariance_model = false;
  CovarianceKernel kernel;
  double keep_fraction = 0.99;  // local KL truncation and global sampler fidelity
  int max_modes = 0;            // keep only the first n modes (0 = all)

  SurrogateGridSpec surrogate_grid;
  RbOptions rb;
  std::string source_name = "one";  // one | two_plus_xy
  std::function<double(double, double)> source;

  EstimatorSpec estimator;
  std::string output_dir = "out";
  std::string artifact_dir = "artifacts";
  int workers = 1;
};

ExperimentConfig preset_patch_study();
ExperimentConfig preset_high_contrast();
ExperimentConfig preset_gaussian_short_corr();

// Bundled data lookup: the name itself, then data/<name>, then ../data/<name>.
std::string find_data_file(const std::string& name);

// Appends geometry entries to the model.  Lines: 'mode x0 y0 x1 y1 amp lo hi'
// (indicator mode, uniform coefficient), 'global amp lo hi' (whole-domain
// mode), 'fixed x0 y0 x1 y1 amp' (deterministic inclusion on the mean),
// 'mean value' (constant base replacing the model's mean field).
void apply_geometry_file(FieldModel& model, const std::string& path);

// Key-value config file ('key = value', '#' comments).  A 'preset' key is
// applied first, remaining keys override individual fields.
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

// Meshes, the completed field model (covariance presets synthesize global KL
// modes here), active-parameter attachment, ellipticity validation, and
// homogeneous Dirichlet data for both grids.
struct Problem {
  ExperimentConfig cfg;
  Meshes meshes;
  int global_kl_terms = 0;  // sampler modes kept for covariance presets
  std::vector<int> coarse_dirichlet;
  std::vector<double> coarse_values;
  std::vector<int> fine_dirichlet;
  std::vector<double> fine_values;
};
Problem prepare(const ExperimentConfig& cfg);

// Per-patch offline data.  media are rebuilt from the config on load; the
// persisted pieces are the surrogate records and (covariance presets) the
// local KL bases.
struct OfflineStore {
  ExperimentConfig::Method method = ExperimentConfig::stomsfem_interp;
  std::vector<InterpolantLocal> interp;
  std::vector<ReducedBasisLocal> rb;
  std::vector<LocalKL> kl;
  std::vector<LocalMedium> media;
  double offline_seconds = 0.0;
  long training_solves = 0;
};

OfflineStore run_offline(const Problem& prob);
void save_offline(const OfflineStore& store, const std::string& dir);
// Throws std::runtime_error when artifacts are absent, corrupt, or built for
// a different configuration.
OfflineStore load_offline(const Problem& prob, const std::string& dir);

// Per-sample solvers bound to a prepared problem: the configured coarse
// method, the scale-resolving reference, and the sparse-collocation plug-in.
// Single-threaded use; the per-index latent field is cached so paired
// coarse/fine solves of one sample synthesize it once.
class SampleEngine {
 public:
  // offline may be null for fine_fem / msfem_direct configs
  SampleEngine(const Problem& prob, const OfflineStore* offline);
  ~SampleEngine();

  const std::vector<ParamDist>& dists() const;

  // coarse-node solution by cfg.method (fine_fem restricts to coarse nodes)
  SampleResult coarse(std::size_t index, const std::vector<double>& xi);
  // fine Q1 reference; restricted to coarse nodes unless full is requested
  SampleResult fine(std::size_t index, const std::vector<double>& xi, bool full_field = false);

  SampleSolver coarse_solver();
  SampleSolver fine_solver(bool full_field = false);
  // Sparse-collocation solver: sparse offline stores are entered by sub-key
  // lookup (missing nodes throw); tensor stores evaluate the interpolant.
  NodeSolver sc_node_solver();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Wall time and work counters, the fitted fine-solver cost exponent, and the
// paper's cost-model ratios: one fine solve costs mu, the offline stage
// N_off fine-solve units, each online sample R units.
struct CostLedger {
  double offline_seconds = 0.0;
  double online_seconds = 0.0;
  long training_solves = 0;
  long online_samples = 0;
  long online_fallbacks = 0;
  double per_sample_seconds = 0.0;
  double mu_fine_solve_seconds = 0.0;
  double n_off_units = 0.0;
  double r_units = 0.0;
  double gamma = 0.0;
  double gamma_r2 = 0.0;
};

struct GammaFit {
  double gamma = 0.0;
  double r2 = 0.0;
  std::vector<int> sizes;
  std::vector<double> seconds;
};

// Fine-solve wall time against dof count over square meshes of the given
// sizes (log-log regression slope).
GammaFit measure_gamma(const ExperimentConfig& cfg, const std::vector<int>& sizes);

struct RunResult {
  EstimatorReport report;
  CostLedger ledger;
  Problem problem;
  std::string mean_csv, std_csv, cost_json;
};

// Offline stage (load if present, build and save otherwise), the configured
// estimator, CSV and cost emission into cfg.output_dir.
RunResult run(const ExperimentConfig& cfg);

struct CompareRow {
  std::string method;
  long n = 0;
  double error = 0.0;  // relative l2 against the fine reference mean
};

// Estimates the configured method over an n ladder against a fine reference
// on shared sample streams; appends rows to <output_dir>/errors.csv.
std::vector<CompareRow> compare_against_fine(const ExperimentConfig& cfg);

// CLI entry: offline | online | estimate | compare | report subcommands.
int cli_main(int argc, char** argv);

}  // namespace stomsfem
