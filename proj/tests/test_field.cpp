// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "stomsfem/field.hpp"
#include "stomsfem/rng.hpp"

using namespace stomsfem;

namespace {

double window_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("rank-1 kernel has a single nonzero eigenvalue with eigenfunction along g") {
  RectGrid fine{0, 0, 1, 1, 10, 8};
  auto g = [](double x, double y) { return 1.0 + x + 0.5 * std::sin(3 * y); };
  CovarianceKernel k;
  k.kind = CovarianceKernel::explicit_matrix;
  k.fn = [&](double x1, double y1, double x2, double y2) { return g(x1, y1) * g(x2, y2); };
  LocalKL kl = build_local_kl(k, fine, 0, 0, fine.nx, fine.ny, KlTruncation::by_count(3));
  // quadrature of g^2 equals the single eigenvalue
  double gsq = 0.0;
  const double area = fine.hx() * fine.hy();
  for (int j = 0; j < fine.ny; ++j)
    for (int i = 0; i < fine.nx; ++i) {
      const double v = g(fine.cell_cx(i), fine.cell_cy(j));
      gsq += area * v * v;
    }
  CHECK(kl.spectrum[0] == doctest::Approx(gsq).epsilon(1e-10));
  CHECK(kl.spectrum[1] <= 1e-12 * kl.spectrum[0]);
  // eigenfunction proportional to g
  double dot = 0.0, ng = 0.0, nf = 0.0;
  for (int j = 0; j < fine.ny; ++j)
    for (int i = 0; i < fine.nx; ++i) {
      const double gv = g(fine.cell_cx(i), fine.cell_cy(j));
      const double fv = kl.modes[0][j * fine.nx + i];
      dot += gv * fv;
      ng += gv * gv;
      nf += fv * fv;
    }
  CHECK(std::abs(dot) / std::sqrt(ng * nf) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("trace identity holds for separable and dense paths") {
  RectGrid fine{0, 0, 1, 1, 64, 64};
  CovarianceKernel gaussian{CovarianceKernel::gaussian_anisotropic, 0.5, 0.125, nullptr};
  LocalKL kl = build_local_kl(gaussian, fine, 8, 16, 12, 10, KlTruncation::by_fraction(0.999));
  const double sum = std::accumulate(kl.spectrum.begin(), kl.spectrum.end(), 0.0);
  CHECK(sum == doctest::Approx(kl.total_trace).epsilon(1e-8));

  CovarianceKernel expl;
  expl.kind = CovarianceKernel::explicit_matrix;
  expl.fn = [&](double x1, double y1, double x2, double y2) {
    return gaussian(x1, y1, x2, y2);
  };
  LocalKL kd = build_local_kl(expl, fine, 8, 16, 12, 10, KlTruncation::by_fraction(0.999));
  const double sumd = std::accumulate(kd.spectrum.begin(), kd.spectrum.end(), 0.0);
  CHECK(sumd == doctest::Approx(kd.total_trace).epsilon(1e-8));
}

TEST_CASE("kept eigenfunctions are orthonormal in the quadrature inner product") {
  RectGrid fine{0, 0, 1, 1, 48, 48};
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 0.4, 0.15, nullptr};
  LocalKL kl = build_local_kl(k, fine, 4, 6, 14, 11, KlTruncation::by_count(8));
  const double area = fine.hx() * fine.hy();
  for (int a = 0; a < kl.keep; ++a)
    for (int b = 0; b <= a; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < kl.modes[a].size(); ++c) s += area * kl.modes[a][c] * kl.modes[b][c];
      CHECK(std::abs(s - (a == b ? 1.0 : 0.0)) <= 1e-10);
    }
}

TEST_CASE("separable path matches the dense eigensolve") {
  RectGrid fine{0, 0, 1, 1, 16, 16};
  CovarianceKernel gaussian{CovarianceKernel::gaussian_anisotropic, 0.6, 0.35, nullptr};
  CovarianceKernel expl;
  expl.kind = CovarianceKernel::explicit_matrix;
  expl.fn = [&](double x1, double y1, double x2, double y2) {
    return gaussian(x1, y1, x2, y2);
  };
  const int nx = 7, ny = 5;
  LocalKL ks = build_local_kl(gaussian, fine, 2, 3, nx, ny, KlTruncation::by_count(nx * ny));
  LocalKL kd = build_local_kl(expl, fine, 2, 3, nx, ny, KlTruncation::by_count(nx * ny));
  REQUIRE(ks.spectrum.size() == kd.spectrum.size());
  for (std::size_t i = 0; i < ks.spectrum.size(); ++i)
    CHECK(ks.spectrum[i] == doctest::Approx(kd.spectrum[i]).epsilon(1e-8).scale(ks.spectrum[0]));
  // Nystrom exactness: the full expansion reproduces the covariance entries
  const double area = fine.hx() * fine.hy();
  for (int ca : {0, 7, 18, 34}) {
    for (int cb : {3, 11, 29}) {
      double rec = 0.0;
      for (int k = 0; k < ks.keep; ++k) rec += ks.lambda[k] * ks.modes[k][ca] * ks.modes[k][cb];
      const double xa = fine.cell_cx(2 + ca % nx), ya = fine.cell_cy(3 + ca / nx);
      const double xb = fine.cell_cx(2 + cb % nx), yb = fine.cell_cy(3 + cb / nx);
      CHECK(rec == doctest::Approx(gaussian(xa, ya, xb, yb)).epsilon(1e-8));
      (void)area;
    }
  }
}

TEST_CASE("projection recovers coefficients on the retained span") {
  RectGrid fine{0, 0, 1, 1, 32, 32};
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 0.5, 0.2, nullptr};
  LocalKL kl = build_local_kl(k, fine, 6, 6, 12, 12, KlTruncation::by_count(6));
  Rng rng(314);
  std::vector<double> xi(kl.keep);
  for (auto& v : xi) v = rng.next_normal();
  std::vector<double> delta(kl.modes[0].size(), 0.0);
  for (int m = 0; m < kl.keep; ++m)
    for (std::size_t c = 0; c < delta.size(); ++c)
      delta[c] += std::sqrt(kl.lambda[m]) * xi[m] * kl.modes[m][c];
  Projection pr = project_to_local(delta, kl);
  REQUIRE(pr.xi.size() == xi.size());
  for (std::size_t m = 0; m < xi.size(); ++m)
    CHECK(pr.xi[m] == doctest::Approx(xi[m]).epsilon(1e-10));
  CHECK(pr.skipped.empty());
}

TEST_CASE("modes with vanishing eigenvalues are skipped and reported") {
  RectGrid fine{0, 0, 1, 1, 8, 8};
  CovarianceKernel k;
  k.kind = CovarianceKernel::explicit_matrix;
  k.fn = [](double x1, double, double x2, double) { return (1.0 + x1) * (1.0 + x2); };
  LocalKL kl = build_local_kl(k, fine, 0, 0, 6, 6, KlTruncation::by_count(4));
  std::vector<double> delta(36, 0.3);
  Projection pr = project_to_local(delta, kl);
  CHECK(pr.skipped.size() == 3);
  for (std::size_t i = 1; i < 4; ++i) CHECK(pr.xi[i] == 0.0);
}

TEST_CASE("non-PSD explicit kernels are rejected") {
  RectGrid fine{0, 0, 1, 1, 8, 8};
  CovarianceKernel k;
  k.kind = CovarianceKernel::explicit_matrix;
  k.fn = [](double x1, double y1, double x2, double y2) {
    return (x1 == x2 && y1 == y2) ? -1.0 : 0.1;
  };
  CHECK_THROWS(build_local_kl(k, fine, 0, 0, 5, 5, KlTruncation::by_count(2)));
}

TEST_CASE("short-correlation kernel: local window needs 4 terms, global needs over 100") {
  // anisotropic kernel with l1=1, l2=1/64 on the unit square
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 1.0, 1.0 / 64.0, nullptr};
  // interior patch of a 64x64 coarse grid, refine=8, eta=2: 16x16 fine cells
  RectGrid fine{0, 0, 1, 1, 512, 512};
  Kl1dCache cache;
  LocalKL local =
      build_local_kl(k, fine, 248, 248, 16, 16, KlTruncation::by_fraction(0.99), -1, &cache);
  CHECK(local.keep == 4);
  // locality: fewer terms locally than globally at every fraction
  RectGrid global{0, 0, 1, 1, 256, 256};
  LocalKL gl =
      build_local_kl(k, global, 0, 0, 256, 256, KlTruncation::by_fraction(0.99), -1, &cache);
  CHECK(gl.keep >= 100);
  for (double frac : {0.95, 0.99, 0.999}) {
    const int nloc = count_for_fraction(local.spectrum, local.total_trace, frac);
    const int nglob = count_for_fraction(gl.spectrum, gl.total_trace, frac);
    CHECK(nloc < nglob);
  }
}

TEST_CASE("congruent windows share cached 1d spectra") {
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 1.0, 0.05, nullptr};
  RectGrid fine{0, 0, 1, 1, 128, 128};
  Kl1dCache cache;
  LocalKL a = build_local_kl(k, fine, 16, 16, 12, 12, KlTruncation::by_fraction(0.99), 1, &cache);
  LocalKL b = build_local_kl(k, fine, 64, 80, 12, 12, KlTruncation::by_fraction(0.99), 2, &cache);
  REQUIRE(a.keep == b.keep);
  for (int i = 0; i < a.keep; ++i) CHECK(a.lambda[i] == b.lambda[i]);
}

TEST_CASE("sample_field is seed-deterministic and respects transforms") {
  RectGrid fine{0, 0, 1, 1, 32, 32};
  FieldModel model;
  model.mean_field = [](double x, double y) { return 0.2 + 0.2 * std::sin(M_PI * x) * std::sin(M_PI * y); };
  ModeField m1;
  m1.kind = ModeField::indicator;
  m1.support = {0.2, 0.2, 0.5, 0.35};
  m1.amplitude = 1.0;
  ModeField m2 = m1;
  m2.support = {0.6, 0.5, 0.9, 0.9};
  model.modes = {m1, m2};
  model.dists = {{ParamDist::uniform, 0.0, 1.0}, {ParamDist::uniform, 0.0, 1.0}};

  SampleField s1 = sample_field(model, fine, 42);
  SampleField s2 = sample_field(model, fine, 42);
  SampleField s3 = sample_field(model, fine, 43);
  CHECK(s1.xi == s2.xi);
  CHECK(s1.kappa == s2.kappa);
  CHECK(s1.xi != s3.xi);
  for (double v : s1.kappa) CHECK(v >= 0.2 - 1e-12);
  CHECK(validate_ellipticity(model, fine) > 0.0);

  // zero coefficients reproduce the mean field
  std::vector<double> latent;
  synthesize_latent(model, fine, {0.0, 0.0}, latent);
  for (int j = 0; j < fine.ny; ++j)
    for (int i = 0; i < fine.nx; ++i)
      CHECK(latent[j * fine.nx + i] ==
            doctest::Approx(model.mean_field(fine.cell_cx(i), fine.cell_cy(j))).epsilon(1e-15));
}

TEST_CASE("exp_shift transform keeps the field above its floor") {
  RectGrid fine{0, 0, 1, 1, 64, 64};
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 1.0, 1.0 / 16.0, nullptr};
  FieldModel model;
  model.transform = Transform::exp_shift;
  model.kmin = 0.1;
  model.modes = separable_kl_modes(k, fine, 0.999);
  model.dists.assign(model.modes.size(), {ParamDist::gaussian, 0.0, 1.0});
  SampleField s = sample_field(model, fine, 7);
  for (double v : s.kappa) CHECK(v >= 0.1);
  CHECK(validate_ellipticity(model, fine) == 0.1);
}

TEST_CASE("identity transform with Gaussian parameters fails ellipticity validation") {
  RectGrid fine{0, 0, 1, 1, 8, 8};
  FieldModel model;
  model.mean_field = [](double, double) { return 1.0; };
  ModeField m;
  m.kind = ModeField::indicator;
  m.support = {0, 0, 1, 1};
  model.modes = {m};
  model.dists = {{ParamDist::gaussian, 0.0, 1.0}};
  CHECK_THROWS(validate_ellipticity(model, fine));
}

TEST_CASE("separable sampler reproduces covariance statistics") {
  // E[beta(x) beta(y)] of the truncated expansion approximates the kernel
  RectGrid fine{0, 0, 1, 1, 32, 32};
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 0.8, 0.3, nullptr};
  int total = 0;
  auto modes = separable_kl_modes(k, fine, 0.999, &total);
  CHECK(total == static_cast<int>(modes.size()));
  // variance at a cell: sum over modes of mode value squared
  const int ci = 10, cj = 20;
  double var = 0.0;
  for (const auto& m : modes) {
    const double v = m.xvec[ci] * m.yvec[cj];
    var += v * v;
  }
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));  // kernel diagonal is 1
}

TEST_CASE("local reconstruction error decreases as more KL modes are kept") {
  // truth sample synthesized from a rich dense expansion on one patch window
  RectGrid fine{0, 0, 1, 1, 512, 512};
  CovarianceKernel k{CovarianceKernel::gaussian_anisotropic, 1.0, 1.0 / 64.0, nullptr};
  CovarianceKernel expl;
  expl.kind = CovarianceKernel::explicit_matrix;
  expl.fn = [&](double x1, double y1, double x2, double y2) { return k(x1, y1, x2, y2); };
  const int wi = 248, wj = 248, wn = 16;
  LocalKL oracle = build_local_kl(expl, fine, wi, wj, wn, wn, KlTruncation::by_count(40));
  Rng rng(2024);
  std::vector<double> delta(wn * wn, 0.0);
  for (int m = 0; m < oracle.keep; ++m) {
    const double c = std::sqrt(oracle.lambda[m]) * rng.next_normal();
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += c * oracle.modes[m][i];
  }
  double prev = window_l2(delta, std::vector<double>(delta.size(), 0.0));
  for (int keep = 1; keep <= 8; ++keep) {
    LocalKL kl = build_local_kl(k, fine, wi, wj, wn, wn, KlTruncation::by_count(keep));
    Projection pr = project_to_local(delta, kl);
    std::vector<double> rec(delta.size(), 0.0);
    for (int m = 0; m < kl.keep; ++m)
      for (std::size_t i = 0; i < rec.size(); ++i)
        rec[i] += std::sqrt(kl.lambda[m]) * pr.xi[m] * kl.modes[m][i];
    const double err = window_l2(delta, rec);
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
  CHECK(prev < 0.5 * window_l2(delta, std::vector<double>(delta.size(), 0.0)));
}
