// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/surrogate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>

#include "stomsfem/fem.hpp"
#include "stomsfem/kernels.hpp"

namespace stomsfem {

namespace {

// slack for the range check: roundoff at the box faces must not force a
// fallback solve
double box_slack(double lo, double hi) { return 1e-12 * std::max(1.0, std::abs(hi - lo)); }

std::vector<int> resolve_nu(const SurrogateGridSpec& grid, int dim) {
  if (grid.kind != SurrogateGridSpec::tensor_chebyshev) return {};
  if (dim == 0) return {};
  std::vector<int> nu = grid.nu;
  if (nu.empty()) nu.assign(static_cast<std::size_t>(dim), 9);
  if (nu.size() == 1 && dim > 1) nu.assign(static_cast<std::size_t>(dim), nu[0]);
  if (static_cast<int>(nu.size()) != dim)
    throw std::invalid_argument("surrogate grid: one node count per parameter required");
  for (int n : nu)
    if (n < 1) throw std::invalid_argument("surrogate grid: node counts must be positive");
  return nu;
}

RuleKind sparse_rule(SurrogateGridSpec::Kind kind) {
  return kind == SurrogateGridSpec::sparse_trapezoidal ? RuleKind::trapezoid
                                                       : RuleKind::clenshaw_curtis;
}

void pack_values(const LocalUpscaled& u, double* out) {
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) out[a * 4 + b] = u.S[a][b];
  for (int a = 0; a < 4; ++a) out[16 + a] = u.b[a];
}

LocalUpscaled unpack_values(const double* v) {
  LocalUpscaled u;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) u.S[a][b] = v[a * 4 + b];
  for (int a = 0; a < 4; ++a) u.b[a] = v[16 + a];
  return u;
}

}  // namespace

bool RangeMap::contains(const double* xi) const {
  for (int k = 0; k < dim(); ++k) {
    const double s = box_slack(lo[k], hi[k]);
    if (xi[k] < lo[k] - s || xi[k] > hi[k] + s) return false;
  }
  return true;
}

void RangeMap::to_unit(const double* xi, double* t) const {
  for (int k = 0; k < dim(); ++k) {
    const double span = hi[k] - lo[k];
    t[k] = span == 0.0 ? 0.0 : (2.0 * xi[k] - (lo[k] + hi[k])) / span;
    t[k] = std::min(1.0, std::max(-1.0, t[k]));
  }
}

void RangeMap::to_native(const double* t, double* xi) const {
  for (int k = 0; k < dim(); ++k) xi[k] = 0.5 * ((hi[k] - lo[k]) * t[k] + lo[k] + hi[k]);
}

std::vector<double> RangeMap::mid() const {
  std::vector<double> m(lo.size());
  for (std::size_t k = 0; k < lo.size(); ++k) m[k] = 0.5 * (lo[k] + hi[k]);
  return m;
}

RangeMap range_map(const std::vector<ParamDist>& dists) {
  RangeMap r;
  r.lo.reserve(dists.size());
  r.hi.reserve(dists.size());
  for (const ParamDist& d : dists) {
    if (d.kind == ParamDist::uniform) {
      r.lo.push_back(d.a);
      r.hi.push_back(d.b);
    } else {
      r.lo.push_back(-3.0);
      r.hi.push_back(3.0);
    }
  }
  return r;
}

std::vector<std::vector<double>> training_nodes_unit(const SurrogateGridSpec& grid, int dim) {
  std::vector<std::vector<double>> nodes;
  if (dim == 0) {
    nodes.emplace_back();
    return nodes;
  }
  if (grid.kind == SurrogateGridSpec::tensor_chebyshev) {
    const std::vector<int> nu = resolve_nu(grid, dim);
    std::vector<std::vector<double>> axis(static_cast<std::size_t>(dim));
    std::size_t total = 1;
    for (int d = 0; d < dim; ++d) {
      axis[d] = chebyshev_zeros(nu[d]);
      total *= static_cast<std::size_t>(nu[d]);
    }
    nodes.reserve(total);
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    for (std::size_t n = 0; n < total; ++n) {
      std::vector<double> pt(static_cast<std::size_t>(dim));
      for (int d = 0; d < dim; ++d) pt[d] = axis[d][idx[d]];
      nodes.push_back(std::move(pt));
      for (int d = 0; d < dim; ++d) {
        if (++idx[d] < nu[d]) break;
        idx[d] = 0;
      }
    }
    return nodes;
  }
  const SparseGrid g = build_sparse_grid(sparse_rule(grid.kind), dim, grid.level);
  return g.points;
}

LocalSolveFn direct_cell_solver(const Meshes& meshes, const CoarsePatch& patch,
                                const LocalMedium& medium,
                                CellProblemSpec::Boundary boundary_kind,
                                CellProblemSpec::Formulation formulation,
                                std::function<double(double, double)> source) {
  CellProblemSpec spec;
  spec.patch = patch;
  spec.boundary_kind = boundary_kind;
  spec.formulation = formulation;
  const Meshes* mp = &meshes;
  return [mp, spec, medium, source = std::move(source)](const std::vector<double>& xi) {
    if (static_cast<int>(xi.size()) != medium.dim())
      throw std::invalid_argument("direct_cell_solver: parameter count mismatch");
    std::vector<double> kw;
    medium.evaluate(xi.data(), kw);
    const MultiscaleBasis basis = solve_cell(*mp, spec, kw);
    return assemble_local(*mp, spec.patch, basis, kw, source, spec.formulation);
  };
}

InterpolantLocal build_interpolant(int patch_id, const std::vector<ParamDist>& dists,
                                   const SurrogateGridSpec& grid, const LocalSolveFn& solve_at) {
  InterpolantLocal it;
  it.patch_id = patch_id;
  it.kind = grid.kind;
  it.range = range_map(dists);
  const int dim = it.dim();
  it.nu = resolve_nu(grid, dim);
  it.level = grid.kind == SurrogateGridSpec::tensor_chebyshev ? 0 : grid.level;
  if (dim > 0 && grid.kind != SurrogateGridSpec::tensor_chebyshev)
    it.sparse = build_sparse_grid(sparse_rule(grid.kind), dim, grid.level);

  const std::vector<std::vector<double>> nodes = training_nodes_unit(grid, dim);
  it.values.assign(nodes.size() * kLocalEntries, 0.0);
  std::vector<double> xi(static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    it.range.to_native(nodes[n].data(), xi.data());
    const LocalUpscaled u = solve_at(xi);
    pack_values(u, it.values.data() + n * kLocalEntries);
  }
  return it;
}

InterpolantLocal build_interpolant(const Meshes& meshes, const CoarsePatch& patch,
                                   const LocalMedium& medium, const SurrogateGridSpec& grid,
                                   CellProblemSpec::Boundary boundary_kind,
                                   CellProblemSpec::Formulation formulation,
                                   const std::function<double(double, double)>& source) {
  return build_interpolant(patch.id, medium.dists, grid,
                           direct_cell_solver(meshes, patch, medium, boundary_kind, formulation,
                                              source));
}

std::optional<LocalUpscaled> eval_interpolant(const InterpolantLocal& it, const double* xi) {
  const int dim = it.dim();
  if (!it.range.contains(xi)) return std::nullopt;
  if (dim == 0) return unpack_values(it.values.data());

  std::vector<double> t(static_cast<std::size_t>(dim));
  it.range.to_unit(xi, t.data());
  std::array<double, kLocalEntries> out{};

  if (it.kind == SurrogateGridSpec::tensor_chebyshev) {
    std::vector<std::vector<double>> coef(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
      const std::vector<double> nodes = chebyshev_zeros(it.nu[d]);
      const std::vector<double> bw = barycentric_weights_chebyshev_zeros(it.nu[d]);
      barycentric_coeffs(nodes, bw, t[d], coef[d]);
    }
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    const std::size_t total = it.n_nodes();
    for (std::size_t n = 0; n < total; ++n) {
      double w = 1.0;
      for (int d = 0; d < dim; ++d) w *= coef[d][idx[d]];
      if (w != 0.0) {
        const double* v = it.values.data() + n * kLocalEntries;
        for (int e = 0; e < kLocalEntries; ++e) out[e] += w * v[e];
      }
      for (int d = 0; d < dim; ++d) {
        if (++idx[d] < it.nu[d]) break;
        idx[d] = 0;
      }
    }
  } else {
    sparse_interpolate(it.sparse, it.values, kLocalEntries, t.data(), out.data());
  }
  return unpack_values(out.data());
}

LocalUpscaled node_value(const InterpolantLocal& it, std::size_t node) {
  if (node >= it.n_nodes()) throw std::out_of_range("node_value: node index out of range");
  return unpack_values(it.values.data() + node * kLocalEntries);
}

namespace {

// probability weights of the training measure on the unit box; signed sparse
// combination weights cannot serve as a measure, so those grids fall back to
// uniform snapshot weighting (the KL basis still spans the snapshots)
std::vector<double> training_weights(const SurrogateGridSpec& grid, int dim,
                                     const std::vector<std::vector<double>>& nodes) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 1.0);
  if (dim == 0) return w;
  if (grid.kind == SurrogateGridSpec::tensor_chebyshev) {
    std::vector<int> nu = resolve_nu(grid, dim);
    std::vector<std::vector<double>> axis(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) axis[d] = fejer1_weights(nu[d]);
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    for (std::size_t t = 0; t < n; ++t) {
      double v = 1.0;
      for (int d = 0; d < dim; ++d) v *= 0.5 * axis[d][idx[d]];
      w[t] = v;
      for (int d = 0; d < dim; ++d) {
        if (++idx[d] < nu[d]) break;
        idx[d] = 0;
      }
    }
    return w;
  }
  const SparseGrid g = build_sparse_grid(sparse_rule(grid.kind), dim, grid.level);
  bool positive = true;
  for (double v : g.weights)
    if (v <= 0.0) positive = false;
  if (positive) {
    const double scale = std::ldexp(1.0, -dim);
    for (std::size_t t = 0; t < n; ++t) w[t] = g.weights[t] * scale;
  } else {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
  }
  return w;
}

const double* mode_cells(const LocalMedium& medium, int k) {
  return k == 0 ? medium.mean_cells.data() : medium.mode_cells[k - 1].data();
}

}  // namespace

ReducedBasisLocal build_reduced_basis(const Meshes& meshes, const CoarsePatch& patch,
                                      const LocalMedium& medium, const SurrogateGridSpec& training,
                                      const RbOptions& opts,
                                      CellProblemSpec::Formulation formulation,
                                      const std::function<double(double, double)>& source) {
  if (!medium.affine())
    throw UnsupportedModel("build_reduced_basis: affine coefficient model required");

  const RectGrid& fine = meshes.fine;
  const int r = meshes.spec.refine;
  const int wnx = patch.win_nx, wny = patch.win_ny;
  const int wnodes = (wnx + 1) * (wny + 1);
  const int K = medium.dim();
  const double hx = fine.hx(), hy = fine.hy();

  ReducedBasisLocal rb;
  rb.patch_id = patch.id;
  rb.formulation = formulation;
  rb.range = range_map(medium.dists);
  rb.n_modes = K;

  // snapshots over the training grid (bilinear boundary data is
  // sample-independent, so snapshot differences stay in the zero-trace space)
  const std::vector<std::vector<double>> nodes = training_nodes_unit(training, K);
  const std::vector<double> w = training_weights(training, K, nodes);
  const std::size_t T = nodes.size();

  std::array<std::vector<std::vector<double>>, 4> snaps;
  for (int l = 0; l < 4; ++l) snaps[l].resize(T);
  std::vector<double> xi(static_cast<std::size_t>(K));
  std::vector<double> kw;
  for (std::size_t t = 0; t < T; ++t) {
    rb.range.to_native(nodes[t].data(), xi.data());
    medium.evaluate(xi.data(), kw);
    WindowBasis wb = solve_cell_window(meshes, patch, kw, CellProblemSpec::bilinear, opts.solve);
    for (int l = 0; l < 4; ++l) snaps[l][t] = std::move(wb.psi[l]);
  }

  std::vector<double> xim(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) xim[k] = medium.dists[k].mean();
  std::vector<double> kbar;
  medium.evaluate(xim.data(), kbar);

  for (int l = 0; l < 4; ++l) {
    ReducedBasisLocal::PerBasis& pb = rb.basis[l];
    pb.mean_win.assign(static_cast<std::size_t>(wnodes), 0.0);
    for (std::size_t t = 0; t < T; ++t)
      kernels::axpy(w[t], snaps[l][t].data(), pb.mean_win.data(), pb.mean_win.size());

    std::vector<std::vector<double>> delta(T);
    for (std::size_t t = 0; t < T; ++t) {
      delta[t] = snaps[l][t];
      kernels::axpy(-1.0, pb.mean_win.data(), delta[t].data(), delta[t].size());
    }

    // method of snapshots in the kappa-mean energy product
    Eigen::MatrixXd M(T, T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = t; s < T; ++s) {
        const double g = cell_weighted_grad_dot(hx, hy, wnx, kbar.data(), delta[t].data(),
                                                delta[s].data(), 0, 0, wnx, wny);
        const double m = std::sqrt(w[t] * w[s]) * g;
        M(t, s) = m;
        M(s, t) = m;
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    if (eig.info() != Eigen::Success)
      throw std::runtime_error("build_reduced_basis: snapshot eigensolve failed");

    const Eigen::VectorXd& lam = eig.eigenvalues();  // ascending
    const double lam1 = T > 0 ? std::max(lam(T - 1), 0.0) : 0.0;
    int q_max = opts.fixed_q >= 0 ? opts.fixed_q : 3 * K;
    if (opts.energy_threshold > 0.0) q_max = static_cast<int>(T);
    int q_keep = 0;
    for (std::size_t q = 0; q < T && q_keep < q_max; ++q) {
      const double lq = lam(T - 1 - q);
      // floor at the Gram eigensolve noise level: a barely positive
      // eigenvalue below it is a rank artifact, and its mode is garbage
      if (lq <= 0.0 || lq <= lam1 * 1e-13) break;
      if (opts.energy_threshold > 0.0 && std::sqrt(lq / lam1) < opts.energy_threshold) break;
      ++q_keep;
    }

    pb.energies.resize(static_cast<std::size_t>(q_keep));
    pb.modes_win.assign(static_cast<std::size_t>(q_keep),
                        std::vector<double>(static_cast<std::size_t>(wnodes), 0.0));
    for (int q = 0; q < q_keep; ++q) {
      const double lq = lam(T - 1 - q);
      pb.energies[q] = lq;
      const double inv = 1.0 / std::sqrt(lq);
      for (std::size_t t = 0; t < T; ++t) {
        const double a = inv * std::sqrt(w[t]) * eig.eigenvectors()(t, T - 1 - q);
        if (a != 0.0) kernels::axpy(a, delta[t].data(), pb.modes_win[q].data(), delta[t].size());
      }
    }

    // reduced cell-problem blocks per affine mode
    pb.A.assign(static_cast<std::size_t>(K) + 1, std::vector<double>());
    pb.F.assign(static_cast<std::size_t>(K) + 1, std::vector<double>());
    for (int k = 0; k <= K; ++k) {
      const double* wk = mode_cells(medium, k);
      std::vector<double>& A = pb.A[k];
      std::vector<double>& F = pb.F[k];
      A.assign(static_cast<std::size_t>(q_keep) * q_keep, 0.0);
      F.assign(static_cast<std::size_t>(q_keep), 0.0);
      for (int q = 0; q < q_keep; ++q) {
        for (int p = q; p < q_keep; ++p) {
          const double v = cell_weighted_grad_dot(hx, hy, wnx, wk, pb.modes_win[q].data(),
                                                  pb.modes_win[p].data(), 0, 0, wnx, wny);
          A[static_cast<std::size_t>(q) * q_keep + p] = v;
          A[static_cast<std::size_t>(p) * q_keep + q] = v;
        }
        F[q] = -cell_weighted_grad_dot(hx, hy, wnx, wk, pb.mean_win.data(),
                                       pb.modes_win[q].data(), 0, 0, wnx, wny);
      }
    }
  }

  // element-restricted stack: per l the mean, then the modes
  const int ei = patch.elem_i0 - patch.win_i0, ej = patch.elem_j0 - patch.win_j0;
  const int enodes = (r + 1) * (r + 1);
  auto restrict_elem = [&](const std::vector<double>& win) {
    std::vector<double> e(static_cast<std::size_t>(enodes));
    for (int j = 0; j <= r; ++j)
      for (int i = 0; i <= r; ++i)
        e[static_cast<std::size_t>(j) * (r + 1) + i] =
            win[static_cast<std::size_t>(ej + j) * (wnx + 1) + (ei + i)];
    return e;
  };

  std::vector<std::vector<double>> stack;
  for (int l = 0; l < 4; ++l) {
    rb.offset[l] = static_cast<int>(stack.size());
    stack.push_back(restrict_elem(rb.basis[l].mean_win));
    for (const std::vector<double>& z : rb.basis[l].modes_win) stack.push_back(restrict_elem(z));
  }
  rb.n_stack = static_cast<int>(stack.size());

  const int cid[4] = {0, r, r * (r + 1) + r, r * (r + 1)};
  rb.corner.resize(static_cast<std::size_t>(rb.n_stack));
  for (int s = 0; s < rb.n_stack; ++s)
    for (int c = 0; c < 4; ++c) rb.corner[s][c] = stack[s][cid[c]];

  // element slices of the coefficient modes
  std::vector<std::vector<double>> ke(static_cast<std::size_t>(K) + 1,
                                      std::vector<double>(static_cast<std::size_t>(r) * r));
  for (int k = 0; k <= K; ++k) {
    const double* wk = mode_cells(medium, k);
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i)
        ke[k][static_cast<std::size_t>(j) * r + i] =
            wk[static_cast<std::size_t>(ej + j) * wnx + (ei + i)];
  }

  rb.elem_energy.assign(static_cast<std::size_t>(K) + 1,
                        std::vector<double>(static_cast<std::size_t>(rb.n_stack) * rb.n_stack, 0.0));
  for (int k = 0; k <= K; ++k)
    for (int s = 0; s < rb.n_stack; ++s)
      for (int p = s; p < rb.n_stack; ++p) {
        const double v = cell_weighted_grad_dot(hx, hy, r, ke[k].data(), stack[s].data(),
                                                stack[p].data(), 0, 0, r, r);
        rb.elem_energy[k][static_cast<std::size_t>(s) * rb.n_stack + p] = v;
        rb.elem_energy[k][static_cast<std::size_t>(p) * rb.n_stack + s] = v;
      }

  std::array<std::vector<double>, 4> qshape;
  if (formulation == CellProblemSpec::petrov_galerkin) {
    for (int a = 0; a < 4; ++a) qshape[a].resize(static_cast<std::size_t>(enodes));
    for (int j = 0; j <= r; ++j) {
      const double tt = static_cast<double>(j) / r;
      for (int i = 0; i <= r; ++i) {
        const double ss = static_cast<double>(i) / r;
        const std::size_t id = static_cast<std::size_t>(j) * (r + 1) + i;
        qshape[0][id] = (1.0 - ss) * (1.0 - tt);
        qshape[1][id] = ss * (1.0 - tt);
        qshape[2][id] = ss * tt;
        qshape[3][id] = (1.0 - ss) * tt;
      }
    }
    rb.test_energy.assign(static_cast<std::size_t>(K) + 1,
                          std::vector<double>(static_cast<std::size_t>(rb.n_stack) * 4, 0.0));
    for (int k = 0; k <= K; ++k)
      for (int s = 0; s < rb.n_stack; ++s)
        for (int a = 0; a < 4; ++a)
          rb.test_energy[k][static_cast<std::size_t>(s) * 4 + a] = cell_weighted_grad_dot(
              hx, hy, r, ke[k].data(), qshape[a].data(), stack[s].data(), 0, 0, r, r);
  }

  if (source) {
    const double quarter_area = 0.25 * hx * hy;
    if (formulation == CellProblemSpec::galerkin)
      rb.load.assign(static_cast<std::size_t>(rb.n_stack), 0.0);
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        const double bc =
            source(fine.cell_cx(patch.elem_i0 + i), fine.cell_cy(patch.elem_j0 + j)) *
            quarter_area;
        const int n00 = j * (r + 1) + i, n10 = n00 + 1, n01 = n00 + r + 1, n11 = n01 + 1;
        if (formulation == CellProblemSpec::galerkin) {
          for (int s = 0; s < rb.n_stack; ++s)
            rb.load[s] += bc * (stack[s][n00] + stack[s][n10] + stack[s][n11] + stack[s][n01]);
        } else {
          for (int a = 0; a < 4; ++a)
            rb.test_load[a] +=
                bc * (qshape[a][n00] + qshape[a][n10] + qshape[a][n11] + qshape[a][n01]);
        }
      }
  }
  return rb;
}

namespace {

// reduced coefficients for basis index l at the affine weights xih
std::vector<double> reduced_coeffs(const ReducedBasisLocal& rb, int l, const double* xih) {
  const ReducedBasisLocal::PerBasis& pb = rb.basis[l];
  const int Q = pb.q();
  if (Q == 0) return {};
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(Q, Q);
  Eigen::VectorXd F = Eigen::VectorXd::Zero(Q);
  for (int k = 0; k <= rb.n_modes; ++k) {
    const double x = xih[k];
    if (x == 0.0) continue;
    for (int q = 0; q < Q; ++q) {
      F(q) += x * pb.F[k][q];
      for (int p = 0; p < Q; ++p) A(q, p) += x * pb.A[k][static_cast<std::size_t>(q) * Q + p];
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "eval_reduced_basis: reduced system not positive definite on patch %d",
                  rb.patch_id);
    throw std::runtime_error(msg);
  }
  const Eigen::VectorXd c = llt.solve(F);
  return std::vector<double>(c.data(), c.data() + Q);
}

}  // namespace

std::optional<LocalUpscaled> eval_reduced_basis(const ReducedBasisLocal& rb, const double* xi) {
  const int K = rb.n_modes;
  if (!rb.range.contains(xi)) return std::nullopt;

  std::vector<double> xih(static_cast<std::size_t>(K) + 1);
  xih[0] = 1.0;
  for (int k = 0; k < K; ++k) xih[k + 1] = xi[k];

  // stacked combination coefficients: 1 for each mean, then the reduced solves
  std::vector<double> coef(static_cast<std::size_t>(rb.n_stack), 0.0);
  for (int l = 0; l < 4; ++l) {
    coef[rb.offset[l]] = 1.0;
    const std::vector<double> c = reduced_coeffs(rb, l, xih.data());
    for (std::size_t q = 0; q < c.size(); ++q) coef[rb.offset[l] + 1 + q] = c[q];
  }

  auto stack_count = [&](int l) {
    return (l == 3 ? rb.n_stack : rb.offset[l + 1]) - rb.offset[l];
  };

  Eigen::Matrix4d V;
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 4; ++c) {
      double v = 0.0;
      for (int s = 0; s < stack_count(l); ++s)
        v += coef[rb.offset[l] + s] * rb.corner[rb.offset[l] + s][c];
      V(l, c) = v;
    }
  const Eigen::Matrix4d C = V.inverse();
  if (!((C * V - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= 1e-6)) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "eval_reduced_basis: corner matrix singular on patch %d",
                  rb.patch_id);
    throw std::runtime_error(msg);
  }

  LocalUpscaled out;
  if (rb.formulation == CellProblemSpec::galerkin) {
    double R[4][4];
    for (int l = 0; l < 4; ++l)
      for (int m = l; m < 4; ++m) {
        double v = 0.0;
        for (int k = 0; k <= K; ++k) {
          const double x = xih[k];
          if (x == 0.0) continue;
          const std::vector<double>& E = rb.elem_energy[k];
          double ekv = 0.0;
          for (int s = 0; s < stack_count(l); ++s) {
            const int gs = rb.offset[l] + s;
            double row = 0.0;
            for (int p = 0; p < stack_count(m); ++p) {
              const int gp = rb.offset[m] + p;
              row += coef[gp] * E[static_cast<std::size_t>(gs) * rb.n_stack + gp];
            }
            ekv += coef[gs] * row;
          }
          v += x * ekv;
        }
        R[l][m] = v;
        R[m][l] = v;
      }
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        double v = 0.0;
        for (int l = 0; l < 4; ++l) {
          double row = 0.0;
          for (int m = 0; m < 4; ++m) row += C(b, m) * R[l][m];
          v += C(a, l) * row;
        }
        out.S[a][b] = v;
        out.S[b][a] = v;
      }
    if (!rb.load.empty()) {
      double bl[4];
      for (int l = 0; l < 4; ++l) {
        double v = 0.0;
        for (int s = 0; s < stack_count(l); ++s)
          v += coef[rb.offset[l] + s] * rb.load[rb.offset[l] + s];
        bl[l] = v;
      }
      for (int a = 0; a < 4; ++a) {
        double v = 0.0;
        for (int l = 0; l < 4; ++l) v += C(a, l) * bl[l];
        out.b[a] = v;
      }
    }
  } else {
    double Tt[4][4];  // Tt[l][a] = int kappa grad(test_a) . grad(psi_rb^l)
    for (int l = 0; l < 4; ++l)
      for (int a = 0; a < 4; ++a) {
        double v = 0.0;
        for (int k = 0; k <= K; ++k) {
          const double x = xih[k];
          if (x == 0.0) continue;
          const std::vector<double>& P = rb.test_energy[k];
          double pk = 0.0;
          for (int s = 0; s < stack_count(l); ++s) {
            const int gs = rb.offset[l] + s;
            pk += coef[gs] * P[static_cast<std::size_t>(gs) * 4 + a];
          }
          v += x * pk;
        }
        Tt[l][a] = v;
      }
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        double v = 0.0;
        for (int l = 0; l < 4; ++l) v += C(b, l) * Tt[l][a];
        out.S[a][b] = v;
      }
    out.b = rb.test_load;
  }
  return out;
}

std::vector<double> rb_window_solution(const ReducedBasisLocal& rb, int l, const double* xi) {
  const int K = rb.n_modes;
  std::vector<double> xih(static_cast<std::size_t>(K) + 1);
  xih[0] = 1.0;
  for (int k = 0; k < K; ++k) xih[k + 1] = xi[k];
  const std::vector<double> c = reduced_coeffs(rb, l, xih.data());
  std::vector<double> u = rb.basis[l].mean_win;
  for (std::size_t q = 0; q < c.size(); ++q)
    kernels::axpy(c[q], rb.basis[l].modes_win[q].data(), u.data(), u.size());
  return u;
}

namespace {

constexpr char kInterpTag[8] = {'S', 'M', 'S', 'F', '.', 'I', 'T', '1'};
constexpr char kRbTag[8] = {'S', 'M', 'S', 'F', '.', 'R', 'B', '1'};

void put_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void put_i32(std::ostream& os, std::int32_t v) { put_raw(os, &v, sizeof v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_raw(os, &v, sizeof v); }
void put_f64(std::ostream& os, double v) { put_raw(os, &v, sizeof v); }
void put_vec(std::ostream& os, const std::vector<double>& v) {
  put_u64(os, v.size());
  put_raw(os, v.data(), v.size() * sizeof(double));
}
void put_ivec(std::ostream& os, const std::vector<int>& v) {
  put_u64(os, v.size());
  for (int x : v) put_i32(os, x);
}

void get_raw(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("surrogate record truncated");
}
std::int32_t get_i32(std::istream& is) {
  std::int32_t v;
  get_raw(is, &v, sizeof v);
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v;
  get_raw(is, &v, sizeof v);
  return v;
}
double get_f64(std::istream& is) {
  double v;
  get_raw(is, &v, sizeof v);
  return v;
}
std::vector<double> get_vec(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ull << 32)) throw std::runtime_error("surrogate record corrupt");
  std::vector<double> v(static_cast<std::size_t>(n));
  get_raw(is, v.data(), v.size() * sizeof(double));
  return v;
}
std::vector<int> get_ivec(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ull << 24)) throw std::runtime_error("surrogate record corrupt");
  std::vector<int> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = get_i32(is);
  return v;
}
void check_tag(std::istream& is, const char (&tag)[8]) {
  char got[8];
  get_raw(is, got, 8);
  if (std::memcmp(got, tag, 8) != 0) throw std::runtime_error("surrogate record tag mismatch");
}

}  // namespace

void write_interpolant(std::ostream& os, const InterpolantLocal& it) {
  put_raw(os, kInterpTag, 8);
  put_i32(os, it.patch_id);
  put_i32(os, static_cast<std::int32_t>(it.kind));
  put_i32(os, it.level);
  put_ivec(os, it.nu);
  put_vec(os, it.range.lo);
  put_vec(os, it.range.hi);
  put_vec(os, it.values);
}

InterpolantLocal read_interpolant(std::istream& is) {
  check_tag(is, kInterpTag);
  InterpolantLocal it;
  it.patch_id = get_i32(is);
  it.kind = static_cast<SurrogateGridSpec::Kind>(get_i32(is));
  it.level = get_i32(is);
  it.nu = get_ivec(is);
  it.range.lo = get_vec(is);
  it.range.hi = get_vec(is);
  it.values = get_vec(is);
  if (it.dim() > 0 && it.kind != SurrogateGridSpec::tensor_chebyshev) {
    it.sparse = build_sparse_grid(sparse_rule(it.kind), it.dim(), it.level);
    if (it.sparse.size() * kLocalEntries != it.values.size())
      throw std::runtime_error("surrogate record corrupt: sparse node count mismatch");
  }
  return it;
}

void write_reduced_basis(std::ostream& os, const ReducedBasisLocal& rb) {
  put_raw(os, kRbTag, 8);
  put_i32(os, rb.patch_id);
  put_i32(os, static_cast<std::int32_t>(rb.formulation));
  put_i32(os, rb.n_modes);
  put_vec(os, rb.range.lo);
  put_vec(os, rb.range.hi);
  for (int l = 0; l < 4; ++l) {
    const auto& pb = rb.basis[l];
    put_vec(os, pb.mean_win);
    put_u64(os, pb.modes_win.size());
    for (const auto& m : pb.modes_win) put_vec(os, m);
    put_vec(os, pb.energies);
    put_u64(os, pb.A.size());
    for (const auto& a : pb.A) put_vec(os, a);
    put_u64(os, pb.F.size());
    for (const auto& f : pb.F) put_vec(os, f);
  }
  for (int l = 0; l < 4; ++l) put_i32(os, rb.offset[l]);
  put_i32(os, rb.n_stack);
  put_u64(os, rb.corner.size());
  for (const auto& c : rb.corner)
    for (int i = 0; i < 4; ++i) put_f64(os, c[i]);
  put_u64(os, rb.elem_energy.size());
  for (const auto& e : rb.elem_energy) put_vec(os, e);
  put_u64(os, rb.test_energy.size());
  for (const auto& e : rb.test_energy) put_vec(os, e);
  put_vec(os, rb.load);
  for (int a = 0; a < 4; ++a) put_f64(os, rb.test_load[a]);
}

ReducedBasisLocal read_reduced_basis(std::istream& is) {
  check_tag(is, kRbTag);
  ReducedBasisLocal rb;
  rb.patch_id = get_i32(is);
  rb.formulation = static_cast<CellProblemSpec::Formulation>(get_i32(is));
  rb.n_modes = get_i32(is);
  rb.range.lo = get_vec(is);
  rb.range.hi = get_vec(is);
  for (int l = 0; l < 4; ++l) {
    auto& pb = rb.basis[l];
    pb.mean_win = get_vec(is);
    pb.modes_win.resize(get_u64(is));
    for (auto& m : pb.modes_win) m = get_vec(is);
    pb.energies = get_vec(is);
    pb.A.resize(get_u64(is));
    for (auto& a : pb.A) a = get_vec(is);
    pb.F.resize(get_u64(is));
    for (auto& f : pb.F) f = get_vec(is);
  }
  for (int l = 0; l < 4; ++l) rb.offset[l] = get_i32(is);
  rb.n_stack = get_i32(is);
  rb.corner.resize(get_u64(is));
  for (auto& c : rb.corner)
    for (int i = 0; i < 4; ++i) c[i] = get_f64(is);
  rb.elem_energy.resize(get_u64(is));
  for (auto& e : rb.elem_energy) e = get_vec(is);
  rb.test_energy.resize(get_u64(is));
  for (auto& e : rb.test_energy) e = get_vec(is);
  rb.load = get_vec(is);
  for (int a = 0; a < 4; ++a) rb.test_load[a] = get_f64(is);
  return rb;
}

}  // namespace stomsfem
