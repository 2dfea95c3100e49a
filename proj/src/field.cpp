// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/field.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "stomsfem/kernels.hpp"
#include "stomsfem/rng.hpp"

namespace stomsfem {

double ModeField::eval_cell(const RectGrid& fine, int ci, int cj) const {
  const double cx = fine.cell_cx(ci);
  const double cy = fine.cell_cy(cj);
  switch (kind) {
    case indicator:
      return (cx >= support.x0 && cx <= support.x1 && cy >= support.y0 && cy <= support.y1)
                 ? amplitude
                 : 0.0;
    case grid: {
      const int li = ci - win_i0, lj = cj - win_j0;
      if (li < 0 || lj < 0 || li >= win_nx || lj >= win_ny) return 0.0;
      return values[static_cast<std::size_t>(lj) * win_nx + li];
    }
    case separable:
      return xvec[ci] * yvec[cj];
  }
  return 0.0;
}

double FieldModel::apply_transform(double v) const {
  switch (transform) {
    case Transform::identity: return v;
    case Transform::exp_shift: return kmin + std::exp(v);
    case Transform::tanh_bounded: return kmin + 0.5 * (kmax - kmin) * (std::tanh(v) + 1.0);
  }
  return v;
}

void attach_active_params(Meshes& meshes, const FieldModel& model) {
  std::vector<Box> supports;
  supports.reserve(model.modes.size());
  for (const auto& m : model.modes) supports.push_back(m.support);
  for (auto& p : meshes.patches) p.active_params = locate_active_params(p, supports);
}

double validate_ellipticity(const FieldModel& model, const RectGrid& fine) {
  if (model.transform == Transform::exp_shift || model.transform == Transform::tanh_bounded) {
    if (model.kmin <= 0.0)
      throw std::invalid_argument("validate_ellipticity: transform floor must be positive");
    return model.kmin;
  }
  for (const auto& d : model.dists)
    if (d.kind == ParamDist::gaussian)
      throw std::invalid_argument(
          "validate_ellipticity: unbounded Gaussian parameters need a bounding transform");
  // affine in each parameter separately, so the cell-wise minimum over the
  // parameter box is attained at per-mode range endpoints
  double bound = std::numeric_limits<double>::infinity();
  for (int cj = 0; cj < fine.ny; ++cj) {
    for (int ci = 0; ci < fine.nx; ++ci) {
      double v = model.mean_field ? model.mean_field(fine.cell_cx(ci), fine.cell_cy(cj)) : 0.0;
      for (std::size_t k = 0; k < model.modes.size(); ++k) {
        const double g = model.modes[k].eval_cell(fine, ci, cj);
        v += std::min(model.dists[k].a * g, model.dists[k].b * g);
      }
      bound = std::min(bound, v);
    }
  }
  if (!(bound > 0.0))
    throw std::invalid_argument("validate_ellipticity: field can reach non-positive values");
  return bound;
}

void synthesize_latent(const FieldModel& model, const RectGrid& fine,
                       const std::vector<double>& xi, std::vector<double>& latent) {
  latent.assign(static_cast<std::size_t>(fine.cells()), 0.0);
  if (model.mean_field)
    for (int cj = 0; cj < fine.ny; ++cj)
      for (int ci = 0; ci < fine.nx; ++ci)
        latent[static_cast<std::size_t>(cj) * fine.nx + ci] =
            model.mean_field(fine.cell_cx(ci), fine.cell_cy(cj));
  for (std::size_t k = 0; k < model.modes.size(); ++k) {
    const double c = xi[k];
    if (c == 0.0) continue;
    const ModeField& m = model.modes[k];
    switch (m.kind) {
      case ModeField::indicator: {
        for (int cj = 0; cj < fine.ny; ++cj) {
          const double cy = fine.cell_cy(cj);
          if (cy < m.support.y0 || cy > m.support.y1) continue;
          double* row = latent.data() + static_cast<std::size_t>(cj) * fine.nx;
          for (int ci = 0; ci < fine.nx; ++ci) {
            const double cx = fine.cell_cx(ci);
            if (cx >= m.support.x0 && cx <= m.support.x1) row[ci] += c * m.amplitude;
          }
        }
        break;
      }
      case ModeField::grid: {
        for (int lj = 0; lj < m.win_ny; ++lj) {
          double* row = latent.data() + static_cast<std::size_t>(m.win_j0 + lj) * fine.nx + m.win_i0;
          kernels::axpy(c, m.values.data() + static_cast<std::size_t>(lj) * m.win_nx, row, m.win_nx);
        }
        break;
      }
      case ModeField::separable: {
        for (int cj = 0; cj < fine.ny; ++cj) {
          const double s = c * m.yvec[cj];
          if (s == 0.0) continue;
          kernels::axpy(s, m.xvec.data(), latent.data() + static_cast<std::size_t>(cj) * fine.nx,
                        fine.nx);
        }
        break;
      }
    }
  }
}

SampleField sample_field(const FieldModel& model, const RectGrid& fine, std::uint64_t seed) {
  Rng rng(seed);
  SampleField s;
  s.xi.resize(model.modes.size());
  for (std::size_t k = 0; k < model.modes.size(); ++k) {
    const ParamDist& d = model.dists[k];
    s.xi[k] = d.kind == ParamDist::uniform ? rng.next_uniform(d.a, d.b) : rng.next_normal();
  }
  synthesize_latent(model, fine, s.xi, s.kappa);
  for (double& v : s.kappa) v = model.apply_transform(v);
  return s;
}

double CovarianceKernel::operator()(double x1, double y1, double x2, double y2) const {
  if (kind == gaussian_anisotropic) {
    const double dx = x1 - x2, dy = y1 - y2;
    return std::exp(-dx * dx / (l1 * l1) - dy * dy / (l2 * l2));
  }
  return fn(x1, y1, x2, y2);
}

namespace {

struct EigDesc {
  std::vector<double> lambda;
  Eigen::MatrixXd vecs;  // columns follow lambda order
};

// symmetric eigendecomposition sorted descending with PSD clamp
EigDesc eig_desc_psd(const Eigen::MatrixXd& B, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  if (es.info() != Eigen::Success)
    throw std::runtime_error(std::string("eigensolve failed for ") + what);
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  const int n = static_cast<int>(ev.size());
  const double lmax = std::max(ev(n - 1), 0.0);
  if (ev(0) < -1e-10 * std::max(lmax, 1e-300))
    throw std::runtime_error(std::string("covariance not PSD beyond tolerance in ") + what);
  EigDesc out;
  out.lambda.resize(n);
  out.vecs.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.lambda[k] = std::max(ev(n - 1 - k), 0.0);
    out.vecs.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return out;
}

}  // namespace

const Kl1dCache::Entry& Kl1dCache::gaussian(int n, double h, double corr_len) {
  char key[80];
  std::snprintf(key, sizeof key, "%d_%a_%a", n, h, corr_len);
  std::lock_guard<std::mutex> lk(mu_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  Eigen::MatrixXd B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double d = (i - j) * h;
      B(i, j) = B(j, i) = h * std::exp(-d * d / (corr_len * corr_len));
    }
  EigDesc ed = eig_desc_psd(B, "1d gaussian kernel");
  Entry e;
  e.lambda = std::move(ed.lambda);
  e.trace = h * n;  // kernel(0)=1 on the diagonal
  const double inv_sqrt_h = 1.0 / std::sqrt(h);
  e.vecs.resize(n);
  for (int k = 0; k < n; ++k) {
    e.vecs[k].resize(n);
    for (int i = 0; i < n; ++i) e.vecs[k][i] = ed.vecs(i, k) * inv_sqrt_h;
  }
  return cache_.emplace(key, std::move(e)).first->second;
}

namespace {

int truncate_index(const std::vector<double>& lambda, double total, const KlTruncation& crit) {
  if (crit.kind == KlTruncation::keep_count)
    return std::min<int>(crit.count, static_cast<int>(lambda.size()));
  return count_for_fraction(lambda, total, crit.fraction);
}

}  // namespace

int count_for_fraction(const std::vector<double>& spectrum, double total, double p) {
  double acc = 0.0;
  for (int k = 0; k < static_cast<int>(spectrum.size()); ++k) {
    acc += spectrum[k];
    if (acc >= p * total) return k + 1;
  }
  return static_cast<int>(spectrum.size());
}

LocalKL build_local_kl(const CovarianceKernel& kernel, const RectGrid& fine,
                       int win_i0, int win_j0, int win_nx, int win_ny,
                       const KlTruncation& crit, int patch_id, Kl1dCache* cache) {
  if (win_nx <= 0 || win_ny <= 0) throw std::invalid_argument("build_local_kl: empty window");
  LocalKL kl;
  kl.patch_id = patch_id;
  kl.win_i0 = win_i0;
  kl.win_j0 = win_j0;
  kl.win_nx = win_nx;
  kl.win_ny = win_ny;
  kl.cell_area = fine.hx() * fine.hy();

  if (kernel.separable()) {
    Kl1dCache local_cache;
    Kl1dCache& c = cache ? *cache : local_cache;
    const auto& ex = c.gaussian(win_nx, fine.hx(), kernel.l1);
    const auto& ey = c.gaussian(win_ny, fine.hy(), kernel.l2);
    kl.total_trace = ex.trace * ey.trace;

    struct Prod {
      double lambda;
      int ix, iy;
    };
    std::vector<Prod> prods;
    prods.reserve(static_cast<std::size_t>(win_nx) * win_ny);
    for (int ix = 0; ix < win_nx; ++ix)
      for (int iy = 0; iy < win_ny; ++iy)
        prods.push_back({ex.lambda[ix] * ey.lambda[iy], ix, iy});
    std::sort(prods.begin(), prods.end(), [](const Prod& a, const Prod& b) {
      if (a.lambda != b.lambda) return a.lambda > b.lambda;
      if (a.ix != b.ix) return a.ix < b.ix;
      return a.iy < b.iy;
    });
    kl.spectrum.resize(prods.size());
    for (std::size_t k = 0; k < prods.size(); ++k) kl.spectrum[k] = prods[k].lambda;
    kl.keep = truncate_index(kl.spectrum, kl.total_trace, crit);
    kl.lambda.assign(kl.spectrum.begin(), kl.spectrum.begin() + kl.keep);
    kl.captured_fraction =
        std::accumulate(kl.lambda.begin(), kl.lambda.end(), 0.0) / kl.total_trace;
    kl.modes.resize(kl.keep);
    for (int k = 0; k < kl.keep; ++k) {
      const auto& fx = ex.vecs[prods[k].ix];
      const auto& fy = ey.vecs[prods[k].iy];
      auto& m = kl.modes[k];
      m.resize(static_cast<std::size_t>(win_nx) * win_ny);
      for (int j = 0; j < win_ny; ++j)
        for (int i = 0; i < win_nx; ++i)
          m[static_cast<std::size_t>(j) * win_nx + i] = fx[i] * fy[j];
    }
    return kl;
  }

  const int n = win_nx * win_ny;
  if (n > 6000)
    throw std::invalid_argument("build_local_kl: dense eigensolve capped at 6000 cells");
  std::vector<double> cx(n), cy(n);
  for (int j = 0; j < win_ny; ++j)
    for (int i = 0; i < win_nx; ++i) {
      cx[j * win_nx + i] = fine.cell_cx(win_i0 + i);
      cy[j * win_nx + i] = fine.cell_cy(win_j0 + j);
    }
  const double area = kl.cell_area;
  Eigen::MatrixXd B(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b <= a; ++b)
      B(a, b) = B(b, a) = area * kernel(cx[a], cy[a], cx[b], cy[b]);
  EigDesc ed = eig_desc_psd(B, "covariance window");
  kl.total_trace = B.trace();
  kl.spectrum = ed.lambda;
  kl.keep = truncate_index(kl.spectrum, kl.total_trace, crit);
  kl.lambda.assign(kl.spectrum.begin(), kl.spectrum.begin() + kl.keep);
  kl.captured_fraction = std::accumulate(kl.lambda.begin(), kl.lambda.end(), 0.0) / kl.total_trace;
  const double inv_sqrt_area = 1.0 / std::sqrt(area);
  kl.modes.resize(kl.keep);
  for (int k = 0; k < kl.keep; ++k) {
    kl.modes[k].resize(n);
    for (int a = 0; a < n; ++a) kl.modes[k][a] = ed.vecs(a, k) * inv_sqrt_area;
  }
  return kl;
}

Projection project_to_local(const std::vector<double>& delta_window, const LocalKL& kl) {
  if (delta_window.size() != static_cast<std::size_t>(kl.win_nx) * kl.win_ny)
    throw std::invalid_argument("project_to_local: window size mismatch");
  Projection out;
  out.xi.assign(kl.keep, 0.0);
  for (int k = 0; k < kl.keep; ++k) {
    if (kl.lambda[k] < 1e-14) {
      out.skipped.push_back(k);
      continue;
    }
    const double integral =
        kl.cell_area * kernels::dot(kl.modes[k].data(), delta_window.data(), delta_window.size());
    out.xi[k] = integral / std::sqrt(kl.lambda[k]);
  }
  return out;
}

void LocalMedium::evaluate(const double* xi, std::vector<double>& kappa) const {
  kappa = mean_cells;
  for (std::size_t k = 0; k < mode_cells.size(); ++k)
    if (xi[k] != 0.0) kernels::axpy(xi[k], mode_cells[k].data(), kappa.data(), kappa.size());
  switch (transform) {
    case Transform::identity: break;
    case Transform::exp_shift:
      for (double& v : kappa) v = kmin + std::exp(v);
      break;
    case Transform::tanh_bounded:
      for (double& v : kappa) v = kmin + 0.5 * (kmax - kmin) * (std::tanh(v) + 1.0);
      break;
  }
}

namespace {

void fill_window_frame(LocalMedium& lm, const Meshes& meshes, const CoarsePatch& patch) {
  const RectGrid& fine = meshes.fine;
  lm.patch_id = patch.id;
  lm.win_i0 = patch.win_i0;
  lm.win_j0 = patch.win_j0;
  lm.win_nx = patch.win_nx;
  lm.win_ny = patch.win_ny;
  lm.x0 = patch.sample_box.x0;
  lm.y0 = patch.sample_box.y0;
  lm.hx = fine.hx();
  lm.hy = fine.hy();
}

}  // namespace

LocalMedium restrict_model(const FieldModel& model, const Meshes& meshes, const CoarsePatch& patch) {
  LocalMedium lm;
  fill_window_frame(lm, meshes, patch);
  lm.transform = model.transform;
  lm.kmin = model.kmin;
  lm.kmax = model.kmax;
  const RectGrid& fine = meshes.fine;
  const std::size_t ncells = static_cast<std::size_t>(lm.win_nx) * lm.win_ny;
  lm.mean_cells.assign(ncells, 0.0);
  if (model.mean_field)
    for (int j = 0; j < lm.win_ny; ++j)
      for (int i = 0; i < lm.win_nx; ++i)
        lm.mean_cells[static_cast<std::size_t>(j) * lm.win_nx + i] =
            model.mean_field(fine.cell_cx(lm.win_i0 + i), fine.cell_cy(lm.win_j0 + j));
  for (int k : patch.active_params) {
    std::vector<double> cells(ncells);
    for (int j = 0; j < lm.win_ny; ++j)
      for (int i = 0; i < lm.win_nx; ++i)
        cells[static_cast<std::size_t>(j) * lm.win_nx + i] =
            model.modes[k].eval_cell(fine, lm.win_i0 + i, lm.win_j0 + j);
    lm.mode_cells.push_back(std::move(cells));
    lm.dists.push_back(model.dists[k]);
  }
  return lm;
}

LocalMedium medium_from_local_kl(const FieldModel& model, const Meshes& meshes,
                                 const CoarsePatch& patch, const LocalKL& kl) {
  if (kl.win_i0 != patch.win_i0 || kl.win_j0 != patch.win_j0 || kl.win_nx != patch.win_nx ||
      kl.win_ny != patch.win_ny)
    throw std::invalid_argument("medium_from_local_kl: KL window does not match patch");
  LocalMedium lm;
  fill_window_frame(lm, meshes, patch);
  lm.transform = model.transform;
  lm.kmin = model.kmin;
  lm.kmax = model.kmax;
  const RectGrid& fine = meshes.fine;
  const std::size_t ncells = static_cast<std::size_t>(lm.win_nx) * lm.win_ny;
  lm.mean_cells.assign(ncells, 0.0);
  if (model.mean_field)
    for (int j = 0; j < lm.win_ny; ++j)
      for (int i = 0; i < lm.win_nx; ++i)
        lm.mean_cells[static_cast<std::size_t>(j) * lm.win_nx + i] =
            model.mean_field(fine.cell_cx(lm.win_i0 + i), fine.cell_cy(lm.win_j0 + j));
  for (int k = 0; k < kl.keep; ++k) {
    std::vector<double> cells = kl.modes[k];
    kernels::scal(std::sqrt(kl.lambda[k]), cells.data(), cells.size());
    lm.mode_cells.push_back(std::move(cells));
    lm.dists.push_back({ParamDist::gaussian, 0.0, 1.0});
  }
  return lm;
}

std::vector<ModeField> separable_kl_modes(const CovarianceKernel& kernel, const RectGrid& fine,
                                          double keep_fraction, int* total_terms) {
  if (!kernel.separable())
    throw std::invalid_argument("separable_kl_modes: kernel must be gaussian_anisotropic");
  if (fine.nx > 4096 || fine.ny > 4096)
    throw std::invalid_argument("separable_kl_modes: grid too large for dense 1d eigensolve");
  Kl1dCache cache;
  const auto& ex = cache.gaussian(fine.nx, fine.hx(), kernel.l1);
  const auto& ey = cache.gaussian(fine.ny, fine.hy(), kernel.l2);
  const double total = ex.trace * ey.trace;

  struct Prod {
    double lambda;
    int ix, iy;
  };
  std::vector<Prod> prods;
  prods.reserve(static_cast<std::size_t>(fine.nx) * fine.ny);
  for (int ix = 0; ix < fine.nx; ++ix)
    for (int iy = 0; iy < fine.ny; ++iy) prods.push_back({ex.lambda[ix] * ey.lambda[iy], ix, iy});
  std::sort(prods.begin(), prods.end(), [](const Prod& a, const Prod& b) {
    if (a.lambda != b.lambda) return a.lambda > b.lambda;
    if (a.ix != b.ix) return a.ix < b.ix;
    return a.iy < b.iy;
  });
  double acc = 0.0;
  int keep = 0;
  for (const Prod& p : prods) {
    acc += p.lambda;
    ++keep;
    if (acc >= keep_fraction * total) break;
  }
  if (total_terms) *total_terms = keep;

  std::vector<ModeField> modes(keep);
  const Box whole{fine.x0, fine.y0, fine.x0 + fine.lx, fine.y0 + fine.ly};
  for (int k = 0; k < keep; ++k) {
    ModeField& m = modes[k];
    m.kind = ModeField::separable;
    m.support = whole;
    m.xvec = ex.vecs[prods[k].ix];
    kernels::scal(std::sqrt(prods[k].lambda), m.xvec.data(), m.xvec.size());
    m.yvec = ey.vecs[prods[k].iy];
  }
  return modes;
}

}  // namespace stomsfem
