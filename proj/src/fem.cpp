// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/fem.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "stomsfem/kernels.hpp"

namespace stomsfem {

void CsrMatrix::multiply(const double* x, double* y) const {
  kernels::csr_spmv(rows, rowptr.data(), col.data(), val.data(), x, y);
}

std::array<std::array<double, 4>, 4> q1_element_stiffness(double hx, double hy) {
  // exact integration of bilinear gradients over an hx-by-hy rectangle
  const double a2 = hx * hx, b2 = hy * hy;
  const double s = 1.0 / (6.0 * hx * hy);
  const double d = 2.0 * (a2 + b2) * s;    // shared corner
  const double ex = (a2 - 2.0 * b2) * s;   // x-adjacent corners
  const double ey = (b2 - 2.0 * a2) * s;   // y-adjacent corners
  const double o = -(a2 + b2) * s;         // opposite corners
  return {{{d, ex, o, ey}, {ex, d, ey, o}, {o, ey, d, ex}, {ey, o, ex, d}}};
}

std::vector<int> boundary_nodes(const RectGrid& grid) {
  std::vector<int> out;
  for (int i = 0; i <= grid.nx; ++i) out.push_back(grid.node_id(i, 0));
  for (int j = 1; j < grid.ny; ++j) {
    out.push_back(grid.node_id(0, j));
    out.push_back(grid.node_id(grid.nx, j));
  }
  for (int i = 0; i <= grid.nx; ++i) out.push_back(grid.node_id(i, grid.ny));
  std::sort(out.begin(), out.end());
  return out;
}

void SparseSystem::set_constraint_values(const double* g) {
  constrained_values.assign(g, g + constrained_ids.size());
  rhs = b_free;
  if (!constrained_ids.empty()) {
    std::vector<double> coupling(free_ids.size());
    A_fc.multiply(g, coupling.data());
    kernels::axpy(-1.0, coupling.data(), rhs.data(), rhs.size());
  }
}

void SparseSystem::scatter(const std::vector<double>& u_free, std::vector<double>& u_full) const {
  u_full.assign(total_nodes, 0.0);
  for (std::size_t f = 0; f < free_ids.size(); ++f) u_full[free_ids[f]] = u_free[f];
  for (std::size_t c = 0; c < constrained_ids.size(); ++c)
    u_full[constrained_ids[c]] = constrained_values[c];
}

SparseSystem assemble_from_elements(const RectGrid& grid, const ElementProvider& element,
                                    const std::vector<int>& constrained_nodes,
                                    const std::vector<double>& constrained_values) {
  const int nn = grid.nodes();
  const int nxn = grid.nx + 1;
  std::vector<std::array<double, 9>> stencil(nn, std::array<double, 9>{});
  std::vector<double> load(nn, 0.0);

  std::array<std::array<double, 4>, 4> S;
  std::array<double, 4> be;
  static const int loc_i[4] = {0, 1, 1, 0};
  static const int loc_j[4] = {0, 0, 1, 1};
  for (int cj = 0; cj < grid.ny; ++cj) {
    for (int ci = 0; ci < grid.nx; ++ci) {
      element(ci, cj, S, be);
      int n4[4];
      for (int a = 0; a < 4; ++a) n4[a] = grid.node_id(ci + loc_i[a], cj + loc_j[a]);
      for (int a = 0; a < 4; ++a) {
        load[n4[a]] += be[a];
        auto& row = stencil[n4[a]];
        for (int b = 0; b < 4; ++b) {
          const int di = loc_i[b] - loc_i[a] + 1;
          const int dj = loc_j[b] - loc_j[a] + 1;
          row[dj * 3 + di] += S[a][b];
        }
      }
    }
  }

  SparseSystem sys;
  sys.total_nodes = nn;
  sys.node_to_free.assign(nn, -1);
  std::vector<int> node_to_constrained(nn, -1);
  {
    std::vector<char> isc(nn, 0);
    if (constrained_nodes.size() != constrained_values.size())
      throw std::invalid_argument("assemble: constraint nodes/values size mismatch");
    for (std::size_t k = 0; k < constrained_nodes.size(); ++k) {
      const int node = constrained_nodes[k];
      if (node < 0 || node >= nn) throw std::invalid_argument("assemble: constraint node out of range");
      if (!isc[node]) {
        isc[node] = 1;
        node_to_constrained[node] = static_cast<int>(sys.constrained_ids.size());
        sys.constrained_ids.push_back(node);
        sys.constrained_values.push_back(constrained_values[k]);
      }
    }
    // constrained_ids follow the caller's order; keep values aligned
    for (int node = 0; node < nn; ++node)
      if (!isc[node]) {
        sys.node_to_free[node] = static_cast<int>(sys.free_ids.size());
        sys.free_ids.push_back(node);
      }
  }

  const int nf = static_cast<int>(sys.free_ids.size());
  sys.A.rows = nf;
  sys.A.cols = nf;
  sys.A_fc.rows = nf;
  sys.A_fc.cols = static_cast<int>(sys.constrained_ids.size());
  sys.A.rowptr.assign(nf + 1, 0);
  sys.A_fc.rowptr.assign(nf + 1, 0);
  sys.b_free.resize(nf);

  auto neighbor = [&](int node, int k) -> int {
    const int i = node % nxn, j = node / nxn;
    const int ni = i + (k % 3) - 1, nj = j + (k / 3) - 1;
    if (ni < 0 || nj < 0 || ni > grid.nx || nj > grid.ny) return -1;
    return grid.node_id(ni, nj);
  };

  for (int f = 0; f < nf; ++f) {
    const int node = sys.free_ids[f];
    int na = 0, nc = 0;
    for (int k = 0; k < 9; ++k) {
      const int nb = neighbor(node, k);
      if (nb < 0) continue;
      if (sys.node_to_free[nb] >= 0)
        ++na;
      else
        ++nc;
    }
    sys.A.rowptr[f + 1] = sys.A.rowptr[f] + na;
    sys.A_fc.rowptr[f + 1] = sys.A_fc.rowptr[f] + nc;
  }
  sys.A.col.resize(sys.A.rowptr[nf]);
  sys.A.val.resize(sys.A.rowptr[nf]);
  sys.A_fc.col.resize(sys.A_fc.rowptr[nf]);
  sys.A_fc.val.resize(sys.A_fc.rowptr[nf]);

  for (int f = 0; f < nf; ++f) {
    const int node = sys.free_ids[f];
    sys.b_free[f] = load[node];
    int pa = sys.A.rowptr[f], pc = sys.A_fc.rowptr[f];
    for (int k = 0; k < 9; ++k) {
      const int nb = neighbor(node, k);
      if (nb < 0) continue;
      const double v = stencil[node][k];
      if (sys.node_to_free[nb] >= 0) {
        sys.A.col[pa] = sys.node_to_free[nb];
        sys.A.val[pa++] = v;
      } else {
        sys.A_fc.col[pc] = node_to_constrained[nb];
        sys.A_fc.val[pc++] = v;
      }
    }
  }
  sys.set_constraint_values(sys.constrained_values.data());
  return sys;
}

SparseSystem assemble(const EllipticProblem& problem) {
  const RectGrid& g = problem.grid;
  if (!problem.kappa || static_cast<int>(problem.kappa->size()) != g.cells())
    throw std::invalid_argument("assemble: kappa must have one value per cell");
  for (double k : *problem.kappa)
    if (!(k > 0.0)) throw std::invalid_argument("assemble: kappa must be positive on every cell");
  const auto kref = q1_element_stiffness(g.hx(), g.hy());
  const double quarter_area = 0.25 * g.hx() * g.hy();
  const auto& kappa = *problem.kappa;
  const auto& source = problem.source;
  ElementProvider element = [&](int ci, int cj, std::array<std::array<double, 4>, 4>& S,
                                std::array<double, 4>& be) {
    const double kc = kappa[static_cast<std::size_t>(cj) * g.nx + ci];
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) S[a][b] = kc * kref[a][b];
    const double bc = source ? source(g.cell_cx(ci), g.cell_cy(cj)) * quarter_area : 0.0;
    be = {bc, bc, bc, bc};
  };
  return assemble_from_elements(g, element, problem.constrained_nodes, problem.constrained_values);
}

namespace {

double rel_residual(const CsrMatrix& A, const std::vector<double>& rhs,
                    const std::vector<double>& x, std::vector<double>& work) {
  work.resize(rhs.size());
  A.multiply(x.data(), work.data());
  kernels::xpby(rhs.data(), -1.0, work.data(), work.size());  // work = rhs - A x
  const double rn = std::sqrt(kernels::dot(work.data(), work.data(), work.size()));
  const double bn = std::sqrt(kernels::dot(rhs.data(), rhs.data(), rhs.size()));
  return bn > 0.0 ? rn / bn : rn;
}

// incomplete Cholesky with zero fill on the lower triangle of A
struct Ic0 {
  int n = 0;
  std::vector<int> rowptr, col;  // strictly lower part
  std::vector<double> val;
  std::vector<double> diag;

  void factor(const CsrMatrix& A) {
    n = A.rows;
    rowptr.assign(n + 1, 0);
    col.clear();
    val.clear();
    diag.assign(n, 0.0);
    std::vector<double> arow_diag(n, 0.0);
    for (int r = 0; r < n; ++r) {
      for (int p = A.rowptr[r]; p < A.rowptr[r + 1]; ++p) {
        if (A.col[p] < r) {
          col.push_back(A.col[p]);
          val.push_back(A.val[p]);
        } else if (A.col[p] == r) {
          arow_diag[r] = A.val[p];
        }
      }
      rowptr[r + 1] = static_cast<int>(col.size());
    }
    for (int r = 0; r < n; ++r) {
      for (int p = rowptr[r]; p < rowptr[r + 1]; ++p) {
        const int c = col[p];
        // subtract overlap of rows r and c (columns < c)
        double s = val[p];
        int pr = rowptr[r], pc = rowptr[c];
        while (pr < rowptr[r + 1] && pc < rowptr[c + 1] && col[pr] < c) {
          if (col[pr] == col[pc]) {
            s -= val[pr] * val[pc];
            ++pr;
            ++pc;
          } else if (col[pr] < col[pc]) {
            ++pr;
          } else {
            ++pc;
          }
        }
        val[p] = s / diag[c];
      }
      double d = arow_diag[r];
      for (int p = rowptr[r]; p < rowptr[r + 1]; ++p) d -= val[p] * val[p];
      // breakdown guard: keep a positive pivot (diagonal compensation)
      if (!(d > 0.0)) d = 1e-8 * std::max(arow_diag[r], 1.0);
      diag[r] = std::sqrt(d);
    }
  }

};

// L L^T z = r; the transpose pass uses scatter updates since L is row-stored
void ic0_apply(const Ic0& ic, const double* r, double* z, std::vector<double>& y) {
  const int n = ic.n;
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    double s = r[i];
    for (int p = ic.rowptr[i]; p < ic.rowptr[i + 1]; ++p) s -= ic.val[p] * y[ic.col[p]];
    y[i] = s / ic.diag[i];
  }
  for (int i = 0; i < n; ++i) z[i] = y[i];
  for (int i = n - 1; i >= 0; --i) {
    z[i] /= ic.diag[i];
    const double zi = z[i];
    for (int p = ic.rowptr[i]; p < ic.rowptr[i + 1]; ++p) z[ic.col[p]] -= ic.val[p] * zi;
  }
}

SolveInfo pcg(const CsrMatrix& A, const std::vector<double>& rhs, std::vector<double>& x,
              bool use_ic0, double tol, int max_iter) {
  const int n = A.rows;
  x.assign(n, 0.0);
  const double bn = std::sqrt(kernels::dot(rhs.data(), rhs.data(), rhs.size()));
  SolveInfo info;
  info.method = use_ic0 ? "pcg_ic0" : "pcg_jacobi";
  if (bn == 0.0) return info;

  Ic0 ic;
  std::vector<double> invdiag;
  if (use_ic0) {
    ic.factor(A);
  } else {
    invdiag.assign(n, 0.0);
    for (int r = 0; r < n; ++r)
      for (int p = A.rowptr[r]; p < A.rowptr[r + 1]; ++p)
        if (A.col[p] == r) invdiag[r] = 1.0 / A.val[p];
  }
  std::vector<double> r = rhs, z(n), p(n), q(n), work;
  auto precond = [&](const double* rin, double* zout) {
    if (use_ic0)
      ic0_apply(ic, rin, zout, work);
    else
      for (int i = 0; i < n; ++i) zout[i] = rin[i] * invdiag[i];
  };
  precond(r.data(), z.data());
  p = z;
  double rz = kernels::dot(r.data(), z.data(), n);
  if (max_iter <= 0) max_iter = std::max(2000, 12 * static_cast<int>(std::sqrt(double(n))));
  for (int it = 1; it <= max_iter; ++it) {
    A.multiply(p.data(), q.data());
    const double pq = kernels::dot(p.data(), q.data(), n);
    if (!(pq > 0.0)) throw std::runtime_error("pcg: matrix not positive definite");
    const double alpha = rz / pq;
    kernels::axpy(alpha, p.data(), x.data(), n);
    kernels::axpy(-alpha, q.data(), r.data(), n);
    const double rn = std::sqrt(kernels::dot(r.data(), r.data(), n));
    if (rn <= tol * bn) {
      info.iterations = it;
      info.rel_residual = rn / bn;
      return info;
    }
    precond(r.data(), z.data());
    const double rz_new = kernels::dot(r.data(), z.data(), n);
    kernels::xpby(z.data(), rz_new / rz, p.data(), n);
    rz = rz_new;
  }
  char msg[160];
  std::snprintf(msg, sizeof msg, "pcg: no convergence in %d iterations, rel residual %.3e",
                max_iter, rel_residual(A, rhs, x, q));
  throw std::runtime_error(msg);
}

Eigen::SparseMatrix<double> to_eigen(const CsrMatrix& A) {
  Eigen::Map<const Eigen::SparseMatrix<double, Eigen::RowMajor, int>> map(
      A.rows, A.cols, static_cast<int>(A.val.size()), A.rowptr.data(), A.col.data(),
      A.val.data());
  return Eigen::SparseMatrix<double>(map);
}

}  // namespace

void BandCholesky::factor(const CsrMatrix& A) {
  n_ = A.rows;
  bw_ = 0;
  for (int r = 0; r < n_; ++r)
    if (A.rowptr[r] < A.rowptr[r + 1]) bw_ = std::max(bw_, r - A.col[A.rowptr[r]]);
  const int w = bw_ + 1;
  band_.assign(static_cast<std::size_t>(n_) * w, 0.0);
  for (int r = 0; r < n_; ++r)
    for (int p = A.rowptr[r]; p < A.rowptr[r + 1]; ++p)
      if (A.col[p] <= r) band_[static_cast<std::size_t>(r) * w + (A.col[p] - r + bw_)] = A.val[p];

  for (int r = 0; r < n_; ++r) {
    double* Lr = band_.data() + static_cast<std::size_t>(r) * w;
    const int cmin = std::max(0, r - bw_);
    for (int c = cmin; c < r; ++c) {
      const double* Lc = band_.data() + static_cast<std::size_t>(c) * w;
      const int k0 = std::max(cmin, c - bw_);
      const int len = c - k0;
      double s = Lr[c - r + bw_];
      if (len > 0) s -= kernels::dot(Lr + (k0 - r + bw_), Lc + (k0 - c + bw_), len);
      Lr[c - r + bw_] = s / Lc[bw_];
    }
    const int len = r - cmin;
    double d = Lr[bw_];
    if (len > 0) {
      const double* start = Lr + (cmin - r + bw_);
      d -= kernels::dot(start, start, len);
    }
    if (!(d > 0.0)) throw std::runtime_error("band cholesky: matrix not positive definite");
    Lr[bw_] = std::sqrt(d);
  }
}

void BandCholesky::solve(const double* rhs, double* x) const {
  const int w = bw_ + 1;
  for (int r = 0; r < n_; ++r) {
    const double* Lr = band_.data() + static_cast<std::size_t>(r) * w;
    const int cmin = std::max(0, r - bw_);
    double s = rhs[r];
    if (r > cmin) s -= kernels::dot(Lr + (cmin - r + bw_), x + cmin, r - cmin);
    x[r] = s / Lr[bw_];
  }
  for (int r = n_ - 1; r >= 0; --r) {
    const int kmax = std::min(n_ - 1, r + bw_);
    double s = x[r];
    for (int k = r + 1; k <= kmax; ++k)
      s -= band_[static_cast<std::size_t>(k) * w + (r - k + bw_)] * x[k];
    x[r] = s / band_[static_cast<std::size_t>(r) * w + bw_];
  }
}

SolveInfo solve(const SparseSystem& sys, std::vector<double>& u_full, const SolveOptions& opts) {
  const int n = sys.A.rows;
  std::vector<double> x(n, 0.0), work;
  SolveInfo info;
  SolveOptions::Method method = opts.method;
  if (method == SolveOptions::auto_pick)
    method = n <= 30000 ? SolveOptions::band_cholesky : SolveOptions::pcg_ic0;

  switch (method) {
    case SolveOptions::pcg_jacobi:
    case SolveOptions::pcg_ic0:
      info = pcg(sys.A, sys.rhs, x, method == SolveOptions::pcg_ic0, opts.rel_tol, opts.max_iter);
      break;
    case SolveOptions::band_cholesky: {
      BandCholesky chol;
      chol.factor(sys.A);
      chol.solve(sys.rhs.data(), x.data());
      info.method = "band_cholesky";
      // one refinement round keeps the residual at the direct-solver floor
      double rr = rel_residual(sys.A, sys.rhs, x, work);
      if (rr > opts.rel_tol && n > 0) {
        std::vector<double> dx(n);
        chol.solve(work.data(), dx.data());
        kernels::axpy(1.0, dx.data(), x.data(), n);
        rr = rel_residual(sys.A, sys.rhs, x, work);
      }
      info.rel_residual = rr;
      break;
    }
    case SolveOptions::sparse_direct: {
      RepeatSolver rs;
      std::vector<double> u_tmp;
      info = rs.solve(sys, u_tmp);
      u_full = std::move(u_tmp);
      return info;
    }
    default:
      throw std::invalid_argument("solve: unknown method");
  }
  if (info.rel_residual == 0.0 && !sys.rhs.empty())
    info.rel_residual = rel_residual(sys.A, sys.rhs, x, work);
  if (info.rel_residual > opts.rel_tol) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "solve: residual %.3e above tolerance %.1e",
                  info.rel_residual, opts.rel_tol);
    throw std::runtime_error(msg);
  }
  sys.scatter(x, u_full);
  return info;
}

SolveInfo solve_unsymmetric(const SparseSystem& sys, std::vector<double>& u_full) {
  RepeatLU lu;
  return lu.solve(sys, u_full);
}

struct RepeatSolver::Impl {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  int n = 0, nnz = 0;
};

RepeatSolver::RepeatSolver() : impl_(new Impl) {}
RepeatSolver::~RepeatSolver() = default;

SolveInfo RepeatSolver::solve(const SparseSystem& sys, std::vector<double>& u_full) {
  Eigen::SparseMatrix<double> A = to_eigen(sys.A);
  if (!impl_->analyzed || impl_->n != A.rows() || impl_->nnz != static_cast<int>(A.nonZeros())) {
    impl_->ldlt.analyzePattern(A);
    impl_->analyzed = true;
    impl_->n = static_cast<int>(A.rows());
    impl_->nnz = static_cast<int>(A.nonZeros());
  }
  impl_->ldlt.factorize(A);
  if (impl_->ldlt.info() != Eigen::Success)
    throw std::runtime_error("sparse ldlt factorization failed");
  Eigen::Map<const Eigen::VectorXd> b(sys.rhs.data(), sys.rhs.size());
  Eigen::VectorXd x = impl_->ldlt.solve(b);
  std::vector<double> xv(x.data(), x.data() + x.size());
  std::vector<double> work;
  SolveInfo info;
  info.method = "sparse_ldlt";
  info.rel_residual = rel_residual(sys.A, sys.rhs, xv, work);
  if (info.rel_residual > 1e-10 && !sys.rhs.empty()) {
    Eigen::Map<const Eigen::VectorXd> rw(work.data(), work.size());
    Eigen::VectorXd dx = impl_->ldlt.solve(rw);
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += dx(i);
    info.rel_residual = rel_residual(sys.A, sys.rhs, xv, work);
  }
  sys.scatter(xv, u_full);
  return info;
}

struct RepeatLU::Impl {
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool analyzed = false;
  int n = 0, nnz = 0;
};

RepeatLU::RepeatLU() : impl_(new Impl) {}
RepeatLU::~RepeatLU() = default;

SolveInfo RepeatLU::solve(const SparseSystem& sys, std::vector<double>& u_full) {
  Eigen::SparseMatrix<double> A = to_eigen(sys.A);
  if (!impl_->analyzed || impl_->n != A.rows() || impl_->nnz != static_cast<int>(A.nonZeros())) {
    impl_->lu.analyzePattern(A);
    impl_->analyzed = true;
    impl_->n = static_cast<int>(A.rows());
    impl_->nnz = static_cast<int>(A.nonZeros());
  }
  impl_->lu.factorize(A);
  if (impl_->lu.info() != Eigen::Success)
    throw std::runtime_error("sparse lu factorization failed");
  Eigen::Map<const Eigen::VectorXd> b(sys.rhs.data(), sys.rhs.size());
  Eigen::VectorXd x = impl_->lu.solve(b);
  std::vector<double> xv(x.data(), x.data() + x.size());
  std::vector<double> work;
  SolveInfo info;
  info.method = "sparse_lu";
  info.rel_residual = rel_residual(sys.A, sys.rhs, xv, work);
  sys.scatter(xv, u_full);
  return info;
}

double cell_weighted_grad_dot(double hx, double hy, int nx, const double* w_cells,
                              const double* u_nodes, const double* v_nodes,
                              int ci0, int cj0, int cnx, int cny) {
  const auto k = q1_element_stiffness(hx, hy);
  double total = 0.0;
  for (int j = 0; j < cny; ++j) {
    for (int i = 0; i < cnx; ++i) {
      const int ci = ci0 + i, cj = cj0 + j;
      const double w = w_cells[static_cast<std::size_t>(cj) * nx + ci];
      if (w == 0.0) continue;
      const int n00 = cj * (nx + 1) + ci, n10 = n00 + 1;
      const int n01 = n00 + nx + 1, n11 = n01 + 1;
      const double u4[4] = {u_nodes[n00], u_nodes[n10], u_nodes[n11], u_nodes[n01]};
      const double v4[4] = {v_nodes[n00], v_nodes[n10], v_nodes[n11], v_nodes[n01]};
      double s = 0.0;
      for (int a = 0; a < 4; ++a)
        s += u4[a] * (k[a][0] * v4[0] + k[a][1] * v4[1] + k[a][2] * v4[2] + k[a][3] * v4[3]);
      total += w * s;
    }
  }
  return total;
}

double cell_weighted_grad_dot(const RectGrid& grid, const double* w_cells,
                              const std::vector<double>& u_nodes,
                              const std::vector<double>& v_nodes,
                              int ci0, int cj0, int cnx, int cny) {
  return cell_weighted_grad_dot(grid.hx(), grid.hy(), grid.nx, w_cells, u_nodes.data(),
                                v_nodes.data(), ci0, cj0, cnx, cny);
}

void write_node_field_csv(std::ostream& os, const RectGrid& grid, const std::vector<double>& u) {
  os << "x,y,value\n";
  char buf[96];
  for (int j = 0; j <= grid.ny; ++j)
    for (int i = 0; i <= grid.nx; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", grid.node_x(i), grid.node_y(j),
                    u[grid.node_id(i, j)]);
      os << buf;
    }
}

}  // namespace stomsfem
