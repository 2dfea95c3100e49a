// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/msfem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "stomsfem/kernels.hpp"
#include "stomsfem/parallel.hpp"

namespace stomsfem {

CellProblemSpec::Formulation default_formulation(const GridSpec& spec) {
  return spec.oversample_ratio > 1.0 ? CellProblemSpec::petrov_galerkin
                                     : CellProblemSpec::galerkin;
}

RectGrid window_grid(const RectGrid& fine, int i0, int j0, int nx, int ny) {
  const double x0 = fine.node_x(i0), y0 = fine.node_y(j0);
  return RectGrid{x0, y0, fine.node_x(i0 + nx) - x0, fine.node_y(j0 + ny) - y0, nx, ny};
}

namespace {

// element's bilinear corner shape evaluated as a polynomial, so it extends
// past the element (oversampled windows) and is exactly 0/1 at the corners
double corner_shape(const Box& e, int l, double x, double y) {
  const double s = (x - e.x0) / (e.x1 - e.x0);
  const double t = (y - e.y0) / (e.y1 - e.y0);
  switch (l) {
    case 0: return (1.0 - s) * (1.0 - t);
    case 1: return s * (1.0 - t);
    case 2: return s * t;
    default: return (1.0 - s) * t;
  }
}

// Dirichlet values for shape l on every window boundary node, indexed by
// window node id.  Coordinates come from the parent grid so that corner
// values are exact.
void boundary_values(const RectGrid& fine, const CoarsePatch& patch, int l,
                     CellProblemSpec::Boundary kind, const std::vector<double>& kappa_window,
                     std::vector<double>& bvals) {
  const int wnx = patch.win_nx, wny = patch.win_ny;
  const int i0 = patch.win_i0, j0 = patch.win_j0;
  auto node = [&](int i, int j) { return j * (wnx + 1) + i; };
  bvals.assign(static_cast<std::size_t>(wnx + 1) * (wny + 1), 0.0);

  if (kind == CellProblemSpec::bilinear) {
    for (int i = 0; i <= wnx; ++i) {
      bvals[node(i, 0)] = corner_shape(patch.element_box, l, fine.node_x(i0 + i), fine.node_y(j0));
      bvals[node(i, wny)] =
          corner_shape(patch.element_box, l, fine.node_x(i0 + i), fine.node_y(j0 + wny));
    }
    for (int j = 0; j <= wny; ++j) {
      bvals[node(0, j)] = corner_shape(patch.element_box, l, fine.node_x(i0), fine.node_y(j0 + j));
      bvals[node(wnx, j)] =
          corner_shape(patch.element_box, l, fine.node_x(i0 + wnx), fine.node_y(j0 + j));
    }
    return;
  }

  // oscillatory: two-point problems -(kappa t')' = 0 along each window edge.
  // The profile is the normalized cumulative 1/kappa of the adjacent cell
  // row; endpoints are the extended shape at the window corners.
  const double c00 = corner_shape(patch.element_box, l, fine.node_x(i0), fine.node_y(j0));
  const double c10 = corner_shape(patch.element_box, l, fine.node_x(i0 + wnx), fine.node_y(j0));
  const double c11 =
      corner_shape(patch.element_box, l, fine.node_x(i0 + wnx), fine.node_y(j0 + wny));
  const double c01 = corner_shape(patch.element_box, l, fine.node_x(i0), fine.node_y(j0 + wny));

  auto edge_profile = [&](int ncells, double va, double vb, auto cell_kappa, auto set_node) {
    std::vector<double> cum(ncells + 1, 0.0);
    for (int c = 0; c < ncells; ++c) cum[c + 1] = cum[c] + 1.0 / cell_kappa(c);
    const double total = cum[ncells];
    set_node(0, va);
    for (int k = 1; k < ncells; ++k) set_node(k, va + (vb - va) * (cum[k] / total));
    set_node(ncells, va + (vb - va));
  };
  auto kw = [&](int ci, int cj) { return kappa_window[static_cast<std::size_t>(cj) * wnx + ci]; };

  edge_profile(wnx, c00, c10, [&](int c) { return kw(c, 0); },
               [&](int k, double v) { bvals[node(k, 0)] = v; });
  edge_profile(wnx, c01, c11, [&](int c) { return kw(c, wny - 1); },
               [&](int k, double v) { bvals[node(k, wny)] = v; });
  edge_profile(wny, c00, c01, [&](int c) { return kw(0, c); },
               [&](int k, double v) { bvals[node(0, k)] = v; });
  edge_profile(wny, c10, c11, [&](int c) { return kw(wnx - 1, c); },
               [&](int k, double v) { bvals[node(wnx, k)] = v; });
}

}  // namespace

WindowBasis solve_cell_window(const Meshes& meshes, const CoarsePatch& patch,
                              const std::vector<double>& kappa_window,
                              CellProblemSpec::Boundary boundary_kind, const SolveOptions& opts) {
  const RectGrid& fine = meshes.fine;
  const int wnx = patch.win_nx, wny = patch.win_ny;
  if (static_cast<int>(kappa_window.size()) != wnx * wny)
    throw std::invalid_argument("solve_cell_window: kappa_window size mismatch");

  const RectGrid gw = window_grid(fine, patch.win_i0, patch.win_j0, wnx, wny);
  const std::vector<int> bnodes = boundary_nodes(gw);

  // boundary data per corner shape, aligned with bnodes
  std::array<std::vector<double>, 4> gdata;
  {
    std::vector<double> bvals;
    for (int l = 0; l < 4; ++l) {
      boundary_values(fine, patch, l, boundary_kind, kappa_window, bvals);
      gdata[l].resize(bnodes.size());
      for (std::size_t k = 0; k < bnodes.size(); ++k) gdata[l][k] = bvals[bnodes[k]];
    }
  }

  EllipticProblem prob;
  prob.grid = gw;
  prob.kappa = &kappa_window;
  prob.source = nullptr;
  prob.constrained_nodes = bnodes;
  prob.constrained_values = gdata[0];
  SparseSystem sys = assemble(prob);

  WindowBasis wb;
  wb.patch_id = patch.id;
  const int nf = static_cast<int>(sys.free_ids.size());

  if (nf == 0) {
    for (int l = 0; l < 4; ++l) {
      sys.set_constraint_values(gdata[l].data());
      sys.scatter({}, wb.psi[l]);
    }
  } else if (nf <= 30000) {
    // one factorization serves all four boundary data sets
    BandCholesky chol;
    chol.factor(sys.A);
    std::vector<double> x(nf), r(nf), dx(nf);
    for (int l = 0; l < 4; ++l) {
      sys.set_constraint_values(gdata[l].data());
      chol.solve(sys.rhs.data(), x.data());
      sys.A.multiply(x.data(), r.data());
      kernels::xpby(sys.rhs.data(), -1.0, r.data(), nf);  // r = rhs - A x
      chol.solve(r.data(), dx.data());
      kernels::axpy(1.0, dx.data(), x.data(), nf);
      sys.A.multiply(x.data(), r.data());
      kernels::xpby(sys.rhs.data(), -1.0, r.data(), nf);
      const double rn = std::sqrt(kernels::dot(r.data(), r.data(), nf));
      const double bn = std::sqrt(kernels::dot(sys.rhs.data(), sys.rhs.data(), nf));
      if (bn > 0.0 && rn > opts.rel_tol * bn) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "solve_cell_window: residual %.3e above tolerance", rn / bn);
        throw std::runtime_error(msg);
      }
      sys.scatter(x, wb.psi[l]);
    }
  } else {
    for (int l = 0; l < 4; ++l) {
      sys.set_constraint_values(gdata[l].data());
      solve(sys, wb.psi[l], opts);
    }
  }

  const int r = meshes.spec.refine;
  const int ei = patch.elem_i0 - patch.win_i0, ej = patch.elem_j0 - patch.win_j0;
  const int ci[4] = {ei, ei + r, ei + r, ei};
  const int cj[4] = {ej, ej, ej + r, ej + r};
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 4; ++c)
      wb.V[l][c] = wb.psi[l][static_cast<std::size_t>(cj[c]) * (wnx + 1) + ci[c]];
  return wb;
}

MultiscaleBasis recombine_to_element(const Meshes& meshes, const CoarsePatch& patch,
                                     const WindowBasis& win) {
  const int r = meshes.spec.refine;
  const int wnx = patch.win_nx;
  const int ei = patch.elem_i0 - patch.win_i0, ej = patch.elem_j0 - patch.win_j0;

  Eigen::Matrix4d V;
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 4; ++c) V(l, c) = win.V[l][c];
  Eigen::Matrix4d C = V.inverse();
  if ((C * V - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    char msg[96];
    std::snprintf(msg, sizeof msg,
                  "recombine_to_element: corner matrix singular on patch %d", patch.id);
    throw std::runtime_error(msg);
  }

  MultiscaleBasis mb;
  mb.patch_id = win.patch_id;
  for (int l = 0; l < 4; ++l)
    for (int j = 0; j < 4; ++j) mb.recombine[l][j] = C(l, j);

  const std::size_t en = static_cast<std::size_t>(r + 1) * (r + 1);
  for (int l = 0; l < 4; ++l) {
    mb.phi[l].assign(en, 0.0);
    for (int j = 0; j < 4; ++j) {
      const double c = C(l, j);
      if (c == 0.0) continue;
      const std::vector<double>& psi = win.psi[j];
      for (int jj = 0; jj <= r; ++jj) {
        const double* src = psi.data() + static_cast<std::size_t>(ej + jj) * (wnx + 1) + ei;
        kernels::axpy(c, src, mb.phi[l].data() + static_cast<std::size_t>(jj) * (r + 1), r + 1);
      }
    }
  }
  return mb;
}

MultiscaleBasis solve_cell(const Meshes& meshes, const CellProblemSpec& spec,
                           const std::vector<double>& kappa_window, const SolveOptions& opts) {
  const WindowBasis wb =
      solve_cell_window(meshes, spec.patch, kappa_window, spec.boundary_kind, opts);
  return recombine_to_element(meshes, spec.patch, wb);
}

LocalUpscaled assemble_local(const Meshes& meshes, const CoarsePatch& patch,
                             const MultiscaleBasis& basis,
                             const std::vector<double>& kappa_window,
                             const std::function<double(double, double)>& source,
                             CellProblemSpec::Formulation formulation) {
  const RectGrid& fine = meshes.fine;
  const int r = meshes.spec.refine;
  const int wnx = patch.win_nx;
  const int ei = patch.elem_i0 - patch.win_i0, ej = patch.elem_j0 - patch.win_j0;

  std::vector<double> ke(static_cast<std::size_t>(r) * r);
  for (int j = 0; j < r; ++j)
    for (int i = 0; i < r; ++i)
      ke[static_cast<std::size_t>(j) * r + i] =
          kappa_window[static_cast<std::size_t>(ej + j) * wnx + (ei + i)];

  LocalUpscaled out;
  const double hx = fine.hx(), hy = fine.hy();

  if (formulation == CellProblemSpec::galerkin) {
    for (int l = 0; l < 4; ++l)
      for (int m = l; m < 4; ++m) {
        const double v = cell_weighted_grad_dot(hx, hy, r, ke.data(), basis.phi[l].data(),
                                                basis.phi[m].data(), 0, 0, r, r);
        out.S[l][m] = v;
        out.S[m][l] = v;
      }
  } else {
    // bilinear test functions on the element submesh
    std::array<std::vector<double>, 4> q;
    for (int l = 0; l < 4; ++l) q[l].resize(static_cast<std::size_t>(r + 1) * (r + 1));
    for (int j = 0; j <= r; ++j) {
      const double t = static_cast<double>(j) / r;
      for (int i = 0; i <= r; ++i) {
        const double s = static_cast<double>(i) / r;
        const std::size_t id = static_cast<std::size_t>(j) * (r + 1) + i;
        q[0][id] = (1.0 - s) * (1.0 - t);
        q[1][id] = s * (1.0 - t);
        q[2][id] = s * t;
        q[3][id] = (1.0 - s) * t;
      }
    }
    for (int l = 0; l < 4; ++l)
      for (int m = 0; m < 4; ++m)
        out.S[l][m] = cell_weighted_grad_dot(hx, hy, r, ke.data(), q[l].data(),
                                             basis.phi[m].data(), 0, 0, r, r);
    if (source) {
      const double quarter_area = 0.25 * fine.hx() * fine.hy();
      for (int j = 0; j < r; ++j)
        for (int i = 0; i < r; ++i) {
          const double bc =
              source(fine.cell_cx(patch.elem_i0 + i), fine.cell_cy(patch.elem_j0 + j)) *
              quarter_area;
          const int n00 = j * (r + 1) + i, n10 = n00 + 1, n01 = n00 + r + 1, n11 = n01 + 1;
          for (int l = 0; l < 4; ++l)
            out.b[l] += bc * (q[l][n00] + q[l][n10] + q[l][n11] + q[l][n01]);
        }
    }
    return out;
  }

  if (source) {
    const double quarter_area = 0.25 * fine.hx() * fine.hy();
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i) {
        const double bc =
            source(fine.cell_cx(patch.elem_i0 + i), fine.cell_cy(patch.elem_j0 + j)) *
            quarter_area;
        const int n00 = j * (r + 1) + i, n10 = n00 + 1, n01 = n00 + r + 1, n11 = n01 + 1;
        for (int l = 0; l < 4; ++l)
          out.b[l] +=
              bc * (basis.phi[l][n00] + basis.phi[l][n10] + basis.phi[l][n11] + basis.phi[l][n01]);
      }
  }
  return out;
}

SparseSystem assemble_global(const Meshes& meshes, const std::vector<LocalUpscaled>& locals,
                             const std::vector<int>& constrained_nodes,
                             const std::vector<double>& constrained_values) {
  if (locals.size() != meshes.patches.size())
    throw std::invalid_argument("assemble_global: one upscaled block per coarse element required");
  const RectGrid& coarse = meshes.coarse;
  ElementProvider element = [&](int ci, int cj, std::array<std::array<double, 4>, 4>& S,
                                std::array<double, 4>& be) {
    const LocalUpscaled& loc = locals[static_cast<std::size_t>(cj) * coarse.nx + ci];
    S = loc.S;
    be = loc.b;
  };
  return assemble_from_elements(coarse, element, constrained_nodes, constrained_values);
}

SolveInfo solve_coarse(const SparseSystem& sys, std::vector<double>& U,
                       CellProblemSpec::Formulation formulation) {
  if (formulation == CellProblemSpec::galerkin) return solve(sys, U, SolveOptions{});
  return solve_unsymmetric(sys, U);
}

std::vector<double> reconstruct(const Meshes& meshes, const std::vector<double>& U,
                                const std::function<const MultiscaleBasis&(int)>& basis_at) {
  const RectGrid& fine = meshes.fine;
  const RectGrid& coarse = meshes.coarse;
  const int r = meshes.spec.refine;
  std::vector<double> u(fine.nodes(), 0.0);
  std::vector<int> cnt(fine.nodes(), 0);

  for (const CoarsePatch& p : meshes.patches) {
    const MultiscaleBasis& mb = basis_at(p.id);
    const double u4[4] = {U[p.corner_nodes[0]], U[p.corner_nodes[1]], U[p.corner_nodes[2]],
                          U[p.corner_nodes[3]]};
    for (int jj = 0; jj <= r; ++jj)
      for (int ii = 0; ii <= r; ++ii) {
        const std::size_t el = static_cast<std::size_t>(jj) * (r + 1) + ii;
        const double val = u4[0] * mb.phi[0][el] + u4[1] * mb.phi[1][el] +
                           u4[2] * mb.phi[2][el] + u4[3] * mb.phi[3][el];
        const int fid = fine.node_id(p.elem_i0 + ii, p.elem_j0 + jj);
        u[fid] += val;
        ++cnt[fid];
      }
  }
  for (std::size_t k = 0; k < u.size(); ++k)
    if (cnt[k] > 1) u[k] /= cnt[k];
  // nodal basis: coarse nodes carry U verbatim
  for (int J = 0; J <= coarse.ny; ++J)
    for (int I = 0; I <= coarse.nx; ++I)
      u[fine.node_id(I * r, J * r)] = U[coarse.node_id(I, J)];
  return u;
}

double coarse_energy(const Meshes& meshes, const std::vector<LocalUpscaled>& locals,
                     const std::vector<double>& U) {
  double total = 0.0;
  for (const CoarsePatch& p : meshes.patches) {
    const LocalUpscaled& loc = locals[p.id];
    for (int a = 0; a < 4; ++a) {
      const double ua = U[p.corner_nodes[a]];
      if (ua == 0.0) continue;
      for (int b = 0; b < 4; ++b) total += ua * loc.S[a][b] * U[p.corner_nodes[b]];
    }
  }
  return total;
}

std::vector<double> window_slice(const RectGrid& fine, const CoarsePatch& patch,
                                 const std::vector<double>& kappa_fine) {
  std::vector<double> w(static_cast<std::size_t>(patch.win_nx) * patch.win_ny);
  for (int j = 0; j < patch.win_ny; ++j)
    for (int i = 0; i < patch.win_nx; ++i)
      w[static_cast<std::size_t>(j) * patch.win_nx + i] =
          kappa_fine[static_cast<std::size_t>(patch.win_j0 + j) * fine.nx + (patch.win_i0 + i)];
  return w;
}

MsfemSolution msfem_solve_sample(const Meshes& meshes, const std::vector<double>& kappa_fine,
                                 const std::function<double(double, double)>& source,
                                 const std::vector<int>& constrained_nodes,
                                 const std::vector<double>& constrained_values,
                                 CellProblemSpec::Boundary boundary_kind,
                                 CellProblemSpec::Formulation formulation, bool want_fine,
                                 int workers) {
  const std::size_t np = meshes.patches.size();
  std::vector<LocalUpscaled> locals(np);
  std::vector<MultiscaleBasis> bases(np);
  parallel_for(
      np,
      [&](std::size_t p) {
        const CoarsePatch& patch = meshes.patches[p];
        const std::vector<double> kw = window_slice(meshes.fine, patch, kappa_fine);
        CellProblemSpec spec;
        spec.patch = patch;
        spec.boundary_kind = boundary_kind;
        spec.formulation = formulation;
        bases[p] = solve_cell(meshes, spec, kw);
        locals[p] = assemble_local(meshes, patch, bases[p], kw, source, formulation);
      },
      workers);

  SparseSystem sys = assemble_global(meshes, locals, constrained_nodes, constrained_values);
  MsfemSolution out;
  out.info = solve_coarse(sys, out.U, formulation);
  if (want_fine)
    out.u_fine = reconstruct(meshes, out.U,
                             [&](int id) -> const MultiscaleBasis& { return bases[id]; });
  return out;
}

}  // namespace stomsfem
