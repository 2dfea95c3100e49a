// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stomsfem/harness.hpp"

using namespace stomsfem;
namespace fs = std::filesystem;

namespace {

// scratch area in the working directory; wiped per test that uses it
struct Scratch {
  fs::path root;
  explicit Scratch(const char* name) : root(fs::path("harness_test_tmp") / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  std::string path(const char* leaf) const { return (root / leaf).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// four quadrant modes over a unit mean; every patch sees at least one
std::string quadrant_geometry(Scratch& s) {
  const std::string p = s.path("quadrants.txt");
  write_text(p,
             "mean 1.0\n"
             "mode 0.0 0.0 0.5 0.5 1.0 0.0 1.0\n"
             "mode 0.5 0.0 1.0 0.5 1.0 0.0 1.0\n"
             "mode 0.0 0.5 0.5 1.0 1.0 0.0 1.0\n"
             "mode 0.5 0.5 1.0 1.0 1.0 0.0 1.0\n");
  return p;
}

ExperimentConfig tiny_config(Scratch& s, const std::string& geometry) {
  ExperimentConfig cfg;
  cfg.preset = "custom";
  cfg.grid = GridSpec{4, 4, 4, 2.0};
  cfg.geometry_file = geometry;
  apply_geometry_file(cfg.model, geometry);
  cfg.surrogate_grid.kind = SurrogateGridSpec::tensor_chebyshev;
  cfg.surrogate_grid.nu = {3};
  cfg.estimator.n_on = 16;
  cfg.estimator.seed = 7;
  cfg.output_dir = s.path("out");
  cfg.artifact_dir = s.path("artifacts");
  return cfg;
}

std::map<int, int> activity_histogram(const Meshes& meshes) {
  std::map<int, int> hist;
  for (const CoarsePatch& p : meshes.patches) ++hist[static_cast<int>(p.active_params.size())];
  return hist;
}

}  // namespace

TEST_CASE("preset patch_study wires the documented study") {
  ExperimentConfig cfg = preset_patch_study();
  CHECK(cfg.grid.coarse_nx == 16);
  CHECK(cfg.grid.coarse_ny == 16);
  CHECK(cfg.grid.refine == 8);
  CHECK(cfg.grid.oversample_ratio == 2.0);
  CHECK(cfg.method == ExperimentConfig::stomsfem_interp);
  CHECK(cfg.formulation == default_formulation(cfg.grid));
  CHECK(cfg.model.modes.size() == 20);
  for (const ParamDist& d : cfg.model.dists) {
    CHECK(d.kind == ParamDist::uniform);
    CHECK(d.a == 0.0);
    CHECK(d.b == 1.0);
  }
  CHECK(cfg.surrogate_grid.kind == SurrogateGridSpec::tensor_chebyshev);
  REQUIRE(cfg.surrogate_grid.nu.size() == 1);
  CHECK(cfg.surrogate_grid.nu[0] == 9);
  CHECK(cfg.model.mean_field(0.5, 0.5) == doctest::Approx(0.4));
  CHECK(cfg.source(0.3, 0.7) == 1.0);
  CHECK(cfg.estimator.n_on == 500);
  CHECK(cfg.estimator.seed == 1);
  CHECK_FALSE(cfg.covariance_model);
}

TEST_CASE("preset high_contrast wires channels and inclusions") {
  ExperimentConfig cfg = preset_high_contrast();
  CHECK(cfg.grid.coarse_nx == 20);
  CHECK(cfg.grid.refine == 20);
  CHECK(cfg.grid.oversample_ratio == 3.0);
  CHECK(cfg.formulation == CellProblemSpec::petrov_galerkin);
  REQUIRE(cfg.model.modes.size() == 14);  // one global switch plus 13 channels
  CHECK(cfg.model.dists[0].a == 0.0);
  CHECK(cfg.model.dists[0].b == 1.0);
  for (std::size_t k = 1; k < cfg.model.dists.size(); ++k) {
    CHECK(cfg.model.dists[k].a == doctest::Approx(1e4));
    CHECK(cfg.model.dists[k].b == doctest::Approx(2e4));
  }
  CHECK(cfg.surrogate_grid.kind == SurrogateGridSpec::sparse_clenshaw_curtis);
  CHECK(cfg.surrogate_grid.level == 3);
  // base one, plus 1e4 inside a deterministic inclusion
  CHECK(cfg.model.mean_field(0.05, 0.99) == doctest::Approx(1.0));
  CHECK(cfg.model.mean_field(0.15, 0.36) == doctest::Approx(1.0 + 1e4));
}

TEST_CASE("preset gaussian_short_corr wires the lognormal pipeline") {
  ExperimentConfig cfg = preset_gaussian_short_corr();
  CHECK(cfg.grid.coarse_nx == 64);
  CHECK(cfg.grid.refine == 8);
  CHECK(cfg.covariance_model);
  CHECK(cfg.kernel.kind == CovarianceKernel::gaussian_anisotropic);
  CHECK(cfg.kernel.l1 == doctest::Approx(1.0));
  CHECK(cfg.kernel.l2 == doctest::Approx(1.0 / 64.0));
  CHECK(cfg.model.transform == Transform::exp_shift);
  CHECK(cfg.model.kmin == doctest::Approx(0.1));
  CHECK(cfg.boundary == CellProblemSpec::oscillatory);
  CHECK(cfg.formulation == CellProblemSpec::petrov_galerkin);
  CHECK(cfg.keep_fraction == doctest::Approx(0.99));
  CHECK(cfg.model.modes.empty());  // synthesized by prepare()
  CHECK(cfg.source(1.0, 1.0) == doctest::Approx(3.0));
  CHECK(cfg.surrogate_grid.kind == SurrogateGridSpec::sparse_clenshaw_curtis);
  // about a thousand nodes in four dimensions; anything coarser lets the
  // lognormal interpolation error swamp the truncation error
  CHECK(cfg.surrogate_grid.level == 5);
}

TEST_CASE("patch_study parameter activity stays local") {
  Problem prob = prepare(preset_patch_study());
  CHECK(prob.meshes.patches.size() == 256);
  std::map<int, int> hist = activity_histogram(prob.meshes);
  int in_sweet_spot = 0, total = 0, peak = 0;
  for (const auto& [k, n] : hist) {
    total += n;
    peak = std::max(peak, k);
    CHECK(k >= 1);  // layout covers the domain: no parameter-free patches
    if (k == 2 || k == 3) in_sweet_spot += n;
  }
  CHECK(total == 256);
  CHECK(peak <= 4);
  CHECK(in_sweet_spot >= total / 2);
  CHECK(prob.coarse_dirichlet.size() == 4 * 16);
  CHECK(prob.fine_dirichlet.size() == 4 * 16 * 8);
}

TEST_CASE("high_contrast activity includes the global switch") {
  ExperimentConfig cfg = preset_high_contrast();
  cfg.grid.refine = 4;  // activity depends on the layout, not the refinement
  Problem prob = prepare(cfg);
  int peak = 0;
  for (const CoarsePatch& p : prob.meshes.patches) {
    REQUIRE(!p.active_params.empty());
    CHECK(p.active_params[0] == 0);  // the whole-domain mode is always on
    peak = std::max(peak, static_cast<int>(p.active_params.size()));
  }
  CHECK(peak <= 4);
}

TEST_CASE("geometry files parse and report errors") {
  Scratch s("geometry");
  const std::string good = s.path("good.txt");
  write_text(good,
             "# comment line\n"
             "mean 2.0\n"
             "global 1.5 0.0 1.0  # trailing comment\n"
             "mode 0.1 0.1 0.4 0.4 2.0 -1.0 1.0\n"
             "fixed 0.6 0.6 0.8 0.8 10.0\n");
  FieldModel model;
  apply_geometry_file(model, good);
  REQUIRE(model.modes.size() == 2);
  CHECK(model.modes[0].amplitude == doctest::Approx(1.5));
  CHECK(model.modes[0].support.contains(Box{0.0, 0.0, 1.0, 1.0}));
  CHECK(model.modes[1].support.x1 == doctest::Approx(0.4));
  REQUIRE(model.dists.size() == 2);
  CHECK(model.dists[1].a == doctest::Approx(-1.0));
  CHECK(model.mean_field(0.5, 0.5) == doctest::Approx(2.0));
  CHECK(model.mean_field(0.7, 0.7) == doctest::Approx(12.0));

  const std::string bad_kind = s.path("bad_kind.txt");
  write_text(bad_kind, "blob 1 2 3\n");
  FieldModel m2;
  CHECK_THROWS_AS(apply_geometry_file(m2, bad_kind), std::runtime_error);

  const std::string short_line = s.path("short.txt");
  write_text(short_line, "mode 0 0 1 1 1.0\n");
  CHECK_THROWS_AS(apply_geometry_file(m2, short_line), std::runtime_error);

  CHECK_THROWS_WITH_AS(apply_geometry_file(m2, s.path("absent.txt")),
                       doctest::Contains("cannot open"), std::runtime_error);
  CHECK_THROWS_WITH_AS(find_data_file("no_such_data_file_xyz.txt"),
                       doctest::Contains("not found"), std::runtime_error);
}

TEST_CASE("config files round trip") {
  Scratch s("config");
  const std::string geom = quadrant_geometry(s);
  const std::string cfg_path = s.path("run.cfg");
  write_text(cfg_path,
             "preset = custom\n"
             "geometry = " + geom + "\n"
             "coarse_nx = 6\n"
             "coarse_ny = 5\n"
             "refine = 3\n"
             "eta = 1.5\n"
             "method = stomsfem_rb\n"
             "formulation = galerkin\n"
             "boundary = bilinear\n"
             "surrogate = sparse_cc\n"
             "level = 2\n"
             "rb_threshold = 1e-6\n"
             "estimator = mc2\n"
             "n_on = 40\n"
             "n_on_fine = 10\n"
             "seed = 99\n"
             "max_modes = 3\n"
             "source = two_plus_xy\n"
             "output_dir = " + s.path("out") + "\n"
             "artifact_dir = " + s.path("art") + "\n"
             "workers = 2\n");
  ExperimentConfig cfg = load_config(cfg_path);
  CHECK(cfg.grid.coarse_nx == 6);
  CHECK(cfg.grid.coarse_ny == 5);
  CHECK(cfg.grid.refine == 3);
  CHECK(cfg.grid.oversample_ratio == doctest::Approx(1.5));
  CHECK(cfg.method == ExperimentConfig::stomsfem_rb);
  CHECK(cfg.surrogate_grid.kind == SurrogateGridSpec::sparse_clenshaw_curtis);
  CHECK(cfg.surrogate_grid.level == 2);
  CHECK(cfg.rb.energy_threshold == doctest::Approx(1e-6));
  CHECK(cfg.estimator.kind == EstimatorSpec::two_level_mc);
  CHECK(cfg.estimator.n_on == 40);
  CHECK(cfg.estimator.n_on_fine == 10);
  CHECK(cfg.estimator.seed == 99);
  CHECK(cfg.max_modes == 3);
  CHECK(cfg.source_name == "two_plus_xy");
  CHECK(cfg.workers == 2);
  CHECK(cfg.model.modes.size() == 4);

  const std::string copy_path = s.path("copy.cfg");
  save_config(cfg, copy_path);
  ExperimentConfig back = load_config(copy_path);
  CHECK(back.grid.coarse_nx == cfg.grid.coarse_nx);
  CHECK(back.grid.coarse_ny == cfg.grid.coarse_ny);
  CHECK(back.grid.refine == cfg.grid.refine);
  CHECK(back.grid.oversample_ratio == cfg.grid.oversample_ratio);
  CHECK(back.method == cfg.method);
  CHECK(back.formulation == cfg.formulation);
  CHECK(back.boundary == cfg.boundary);
  CHECK(back.surrogate_grid.kind == cfg.surrogate_grid.kind);
  CHECK(back.surrogate_grid.level == cfg.surrogate_grid.level);
  CHECK(back.rb.energy_threshold == cfg.rb.energy_threshold);
  CHECK(back.estimator.kind == cfg.estimator.kind);
  CHECK(back.estimator.n_on == cfg.estimator.n_on);
  CHECK(back.estimator.n_on_fine == cfg.estimator.n_on_fine);
  CHECK(back.estimator.seed == cfg.estimator.seed);
  CHECK(back.max_modes == cfg.max_modes);
  CHECK(back.keep_fraction == cfg.keep_fraction);
  CHECK(back.source_name == cfg.source_name);
  CHECK(back.output_dir == cfg.output_dir);
  CHECK(back.artifact_dir == cfg.artifact_dir);
  CHECK(back.workers == cfg.workers);
  CHECK(back.model.modes.size() == cfg.model.modes.size());
  for (std::size_t k = 0; k < cfg.model.dists.size(); ++k) {
    CHECK(back.model.dists[k].kind == cfg.model.dists[k].kind);
    CHECK(back.model.dists[k].a == cfg.model.dists[k].a);
    CHECK(back.model.dists[k].b == cfg.model.dists[k].b);
  }
}

TEST_CASE("config files reject misuse") {
  Scratch s("config_bad");
  const std::string geom = quadrant_geometry(s);

  const std::string unknown = s.path("unknown.cfg");
  write_text(unknown, "frobnicate = 3\n");
  CHECK_THROWS_WITH_AS(load_config(unknown), doctest::Contains("unknown key"),
                       std::invalid_argument);

  const std::string preset_geom = s.path("preset_geom.cfg");
  write_text(preset_geom, "preset = patch_study\ngeometry = " + geom + "\n");
  CHECK_THROWS_WITH_AS(load_config(preset_geom), doctest::Contains("preset = custom"),
                       std::invalid_argument);

  const std::string bad_int = s.path("bad_int.cfg");
  write_text(bad_int, "refine = four\n");
  CHECK_THROWS_AS(load_config(bad_int), std::invalid_argument);

  const std::string bad_method = s.path("bad_method.cfg");
  write_text(bad_method, "method = magic\n");
  CHECK_THROWS_AS(load_config(bad_method), std::invalid_argument);

  const std::string no_eq = s.path("no_eq.cfg");
  write_text(no_eq, "refine 4\n");
  CHECK_THROWS_AS(load_config(no_eq), std::runtime_error);

  CHECK_THROWS_AS(load_config(s.path("absent.cfg")), std::runtime_error);
}

TEST_CASE("offline artifacts round trip for interpolants") {
  Scratch s("offline_interp");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  Problem prob = prepare(cfg);
  OfflineStore store = run_offline(prob);
  REQUIRE(store.interp.size() == prob.meshes.patches.size());
  CHECK(store.training_solves > 0);
  save_offline(store, cfg.artifact_dir);

  OfflineStore back = load_offline(prob, cfg.artifact_dir);
  REQUIRE(back.interp.size() == store.interp.size());
  CHECK(back.training_solves == store.training_solves);
  for (std::size_t m = 0; m < store.interp.size(); ++m) {
    CHECK(back.interp[m].patch_id == store.interp[m].patch_id);
    CHECK(back.interp[m].nu == store.interp[m].nu);
    CHECK(back.interp[m].range.lo == store.interp[m].range.lo);
    CHECK(back.interp[m].range.hi == store.interp[m].range.hi);
    CHECK(back.interp[m].values == store.interp[m].values);  // bit-exact payload
    CHECK(back.media[m].dim() == store.media[m].dim());
  }

  // wrong method in the requesting config
  ExperimentConfig other = cfg;
  other.method = ExperimentConfig::stomsfem_rb;
  Problem prob_rb = prepare(other);
  CHECK_THROWS_WITH_AS(load_offline(prob_rb, cfg.artifact_dir),
                       doctest::Contains("do not match"), std::runtime_error);

  // wrong mesh in the requesting config
  ExperimentConfig bigger = cfg;
  bigger.grid.coarse_nx = 5;
  Problem prob_big = prepare(bigger);
  CHECK_THROWS_WITH_AS(load_offline(prob_big, cfg.artifact_dir),
                       doctest::Contains("do not match"), std::runtime_error);

  // absent directory
  CHECK_THROWS_WITH_AS(load_offline(prob, s.path("nowhere")), doctest::Contains("missing"),
                       std::runtime_error);

  // truncated payload
  const std::string stored = cfg.artifact_dir + "/offline.bin";
  std::string bytes = read_bytes(stored);
  write_text(stored, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_WITH_AS(load_offline(prob, cfg.artifact_dir), doctest::Contains("corrupt"),
                       std::runtime_error);
}

TEST_CASE("offline artifacts round trip for reduced bases") {
  Scratch s("offline_rb");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  cfg.method = ExperimentConfig::stomsfem_rb;
  Problem prob = prepare(cfg);
  OfflineStore store = run_offline(prob);
  REQUIRE(store.rb.size() == prob.meshes.patches.size());
  save_offline(store, cfg.artifact_dir);
  OfflineStore back = load_offline(prob, cfg.artifact_dir);
  REQUIRE(back.rb.size() == store.rb.size());
  for (std::size_t m = 0; m < store.rb.size(); ++m) {
    CHECK(back.rb[m].patch_id == store.rb[m].patch_id);
    CHECK(back.rb[m].n_stack == store.rb[m].n_stack);
    CHECK(back.rb[m].offset == store.rb[m].offset);
    CHECK(back.rb[m].load == store.rb[m].load);
    for (int l = 0; l < 4; ++l) {
      CHECK(back.rb[m].basis[l].A == store.rb[m].basis[l].A);
      CHECK(back.rb[m].basis[l].F == store.rb[m].basis[l].F);
    }
  }
}

TEST_CASE("estimates are byte-reproducible and artifact-backed") {
  Scratch s("repro");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  RunResult first = run(cfg);  // builds and saves the offline store
  CHECK(first.ledger.online_samples == 16);
  CHECK(first.ledger.online_fallbacks == 0);
  CHECK(first.ledger.training_solves > 0);
  CHECK(first.ledger.mu_fine_solve_seconds > 0.0);
  CHECK(first.ledger.gamma > 0.0);
  CHECK(fs::exists(cfg.artifact_dir + "/offline.bin"));
  CHECK(fs::exists(first.cost_json));

  ExperimentConfig again = cfg;
  again.output_dir = s.path("out2");
  RunResult second = run(again);  // loads the store written by the first run
  CHECK(second.ledger.offline_seconds == first.ledger.offline_seconds);
  CHECK(read_bytes(second.mean_csv) == read_bytes(first.mean_csv));
  CHECK(read_bytes(second.std_csv) == read_bytes(first.std_csv));
}

TEST_CASE("refine-one upscaling reproduces the fine solve") {
  Scratch s("refine_one");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  cfg.grid = GridSpec{8, 8, 1, 1.0};
  cfg.method = ExperimentConfig::msfem_direct;
  Problem prob = prepare(cfg);
  SampleEngine engine(prob, nullptr);
  const std::vector<double> xi = draw_xi(engine.dists(), 5, 3);
  SampleResult coarse = engine.coarse(0, xi);
  SampleResult fine = engine.fine(0, xi);
  REQUIRE(coarse.u.size() == fine.u.size());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < coarse.u.size(); ++k) {
    num = std::max(num, std::abs(coarse.u[k] - fine.u[k]));
    den = std::max(den, std::abs(fine.u[k]));
  }
  CHECK(num <= 1e-10 * den);
}

TEST_CASE("surrogate engine falls back to direct solves out of range") {
  Scratch s("fallback");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  // swap the uniform switches for unbounded ones; the training box is then
  // a truncation and points beyond it must take the direct path
  for (ParamDist& d : cfg.model.dists) d = ParamDist{ParamDist::gaussian, 0.0, 1.0};
  cfg.model.transform = Transform::exp_shift;
  cfg.model.kmin = 0.1;
  Problem prob = prepare(cfg);
  OfflineStore store = run_offline(prob);
  SampleEngine engine(prob, &store);

  std::vector<double> inside(4, 0.0);
  SampleResult at_center = engine.coarse(0, inside);
  CHECK_FALSE(at_center.fallback);

  std::vector<double> outside(4, 0.0);
  outside[1] = 3.5;
  SampleResult beyond = engine.coarse(1, outside);
  CHECK(beyond.fallback);

  // the fallback block is the true cell solve, so the whole sample must
  // match the direct pipeline
  ExperimentConfig direct_cfg = cfg;
  direct_cfg.method = ExperimentConfig::msfem_direct;
  Problem direct_prob = prepare(direct_cfg);
  SampleEngine direct(direct_prob, nullptr);
  SampleResult ref = direct.coarse(1, outside);
  REQUIRE(ref.u.size() == beyond.u.size());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < ref.u.size(); ++k) {
    num = std::max(num, std::abs(ref.u[k] - beyond.u[k]));
    den = std::max(den, std::abs(ref.u[k]));
  }
  CHECK(num <= 1e-6 * den);
}

TEST_CASE("sparse collocation plugs into stored nodes") {
  Scratch s("sc_plug");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  cfg.surrogate_grid.kind = SurrogateGridSpec::sparse_clenshaw_curtis;
  cfg.surrogate_grid.level = 2;
  cfg.estimator.kind = EstimatorSpec::sc;
  cfg.estimator.sc_level = 2;
  RunResult res = run(cfg);
  const SparseGrid full = build_sparse_grid(RuleKind::clenshaw_curtis, 4, 2);
  CHECK(res.report.n_samples == static_cast<long>(full.points.size()));
  CHECK(res.report.n_fallback == 0);
  for (double v : res.report.mean) CHECK(std::isfinite(v));

  // deeper quadrature needs nodes the store never tabulated
  ExperimentConfig deeper = cfg;
  deeper.estimator.sc_level = 3;
  deeper.output_dir = s.path("out3");
  CHECK_THROWS_WITH_AS(run(deeper), doctest::Contains("rebuild offline"), std::logic_error);
}

TEST_CASE("sparse collocation handles parameter-free patches") {
  Scratch s("sc_dim0");
  const std::string geom = s.path("corner.txt");
  write_text(geom,
             "mean 1.0\n"
             "mode 0.0 0.0 0.3 0.3 1.0 0.0 1.0\n");
  ExperimentConfig cfg = tiny_config(s, geom);
  cfg.grid.oversample_ratio = 1.0;  // keep far patches out of the mode support
  cfg.surrogate_grid.kind = SurrogateGridSpec::sparse_clenshaw_curtis;
  cfg.surrogate_grid.level = 2;
  cfg.estimator.kind = EstimatorSpec::sc;
  cfg.estimator.sc_level = 2;
  Problem probe = prepare(cfg);
  bool has_empty = false;
  for (const CoarsePatch& p : probe.meshes.patches) has_empty |= p.active_params.empty();
  REQUIRE(has_empty);  // the layout must actually exercise the empty case
  RunResult res = run(cfg);
  CHECK(res.report.n_fallback == 0);
  for (double v : res.report.mean) CHECK(std::isfinite(v));
}

TEST_CASE("two-level estimates pair coarse and fine streams") {
  Scratch s("two_level");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  cfg.estimator.kind = EstimatorSpec::two_level_mc;
  cfg.estimator.n_on = 12;
  cfg.estimator.n_on_fine = 4;
  RunResult res = run(cfg);
  CHECK(res.report.n_samples == 16);
  CHECK(res.report.var_level1 >= 0.0);
  CHECK(res.report.var_correction >= 0.0);
  // the surrogate tracks the direct solver, so the correction term carries
  // far less spread than the field itself
  CHECK(res.report.var_correction <= res.report.var_level1);
  CHECK(res.report.mean.size() == static_cast<std::size_t>(res.problem.meshes.coarse.nodes()));
}

TEST_CASE("cost exponent fit is a plausible power law") {
  ExperimentConfig cfg;
  GammaFit fit = measure_gamma(cfg, {24, 32, 48});
  REQUIRE(fit.seconds.size() == 3);
  CHECK(fit.gamma > 0.3);
  CHECK(fit.gamma < 4.0);
  CHECK(fit.r2 > 0.3);
  CHECK_THROWS_AS(measure_gamma(cfg, {24}), std::invalid_argument);
}

TEST_CASE("comparison ladder records relative errors") {
  Scratch s("compare");
  ExperimentConfig cfg = tiny_config(s, quadrant_geometry(s));
  cfg.estimator.n_on = 12;
  std::vector<CompareRow> rows = compare_against_fine(cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].n == 4);
  CHECK(rows[1].n == 6);
  CHECK(rows[2].n == 12);
  for (const CompareRow& r : rows) {
    CHECK(r.method == std::string("stomsfem_interp"));
    CHECK(r.error >= 0.0);
    CHECK(r.error < 1.0);  // upscaled mean stays in the fine mean's ballpark
  }
  const std::string csv = cfg.output_dir + "/errors.csv";
  REQUIRE(fs::exists(csv));
  std::string bytes = read_bytes(csv);
  CHECK(bytes.rfind("method,n,error\n", 0) == 0);

  compare_against_fine(cfg);  // append, do not rewrite
  std::string twice = read_bytes(csv);
  CHECK(twice.size() > bytes.size());
  CHECK(twice.rfind("method,n,error\n", 0) == 0);
  CHECK(twice.find("method,n,error\n", 1) == std::string::npos);
}
