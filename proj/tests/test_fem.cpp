// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

#include "stomsfem/fem.hpp"
#include "stomsfem/field.hpp"
#include "stomsfem/rng.hpp"

using namespace stomsfem;

namespace {

// 2x2 Gauss quadrature of grad(phi_a).grad(phi_b) on [0,hx]x[0,hy]
std::array<std::array<double, 4>, 4> gauss_stiffness(double hx, double hy) {
  const double gp[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  // shape functions on the reference square, corner order ll lr ur ul
  auto dshape = [](int a, double s, double t, double& ds, double& dt) {
    switch (a) {
      case 0: ds = -(1 - t); dt = -(1 - s); break;
      case 1: ds = (1 - t); dt = -s; break;
      case 2: ds = t; dt = s; break;
      default: ds = -t; dt = 1 - s; break;
    }
  };
  std::array<std::array<double, 4>, 4> K{};
  for (double s : gp)
    for (double t : gp)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double dsa, dta, dsb, dtb;
          dshape(a, s, t, dsa, dta);
          dshape(b, s, t, dsb, dtb);
          // physical gradients scale by 1/hx, 1/hy; area element hx*hy/4 per point
          K[a][b] += (dsa * dsb / (hx * hx) + dta * dtb / (hy * hy)) * hx * hy * 0.25;
        }
  return K;
}

CsrMatrix dense_to_csr(const Eigen::MatrixXd& A) {
  CsrMatrix m;
  m.rows = static_cast<int>(A.rows());
  m.cols = static_cast<int>(A.cols());
  m.rowptr.assign(m.rows + 1, 0);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c)
      if (A(r, c) != 0.0) {
        m.col.push_back(c);
        m.val.push_back(A(r, c));
      }
    m.rowptr[r + 1] = static_cast<int>(m.col.size());
  }
  return m;
}

Eigen::MatrixXd csr_to_dense(const CsrMatrix& m) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int k = m.rowptr[r]; k < m.rowptr[r + 1]; ++k) A(r, m.col[k]) += m.val[k];
  return A;
}

std::vector<double> checkerboard_kappa(const RectGrid& g) {
  std::vector<double> kappa(static_cast<std::size_t>(g.nx) * g.ny);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double x = g.cell_cx(i), y = g.cell_cy(j);
      const double osc = 1.1 + std::sin(11.0 * M_PI * x) * std::cos(7.0 * M_PI * y);
      kappa[static_cast<std::size_t>(j) * g.nx + i] = ((i / 3 + j / 2) % 2 ? 4.0 : 1.0) * osc;
    }
  return kappa;
}

}  // namespace

TEST_CASE("unit cell stiffness matches the closed form") {
  const double e[4][4] = {{4, -1, -2, -1}, {-1, 4, -1, -2}, {-2, -1, 4, -1}, {-1, -2, -1, 4}};
  auto K = q1_element_stiffness(1.0, 1.0);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) CHECK(std::abs(K[a][b] - e[a][b] / 6.0) <= 1e-15);
}

TEST_CASE("anisotropic cell stiffness matches 2x2 Gauss quadrature") {
  for (auto [hx, hy] : {std::pair{0.25, 0.1}, std::pair{1.0, 3.0}, std::pair{0.7, 0.7}}) {
    auto K = q1_element_stiffness(hx, hy);
    auto G = gauss_stiffness(hx, hy);
    double rowsum_max = 0.0;
    for (int a = 0; a < 4; ++a) {
      double rs = 0.0;
      for (int b = 0; b < 4; ++b) {
        CHECK(K[a][b] == doctest::Approx(G[a][b]).epsilon(1e-13));
        CHECK(K[a][b] == K[b][a]);
        rs += K[a][b];
      }
      rowsum_max = std::max(rowsum_max, std::abs(rs));
    }
    CHECK(rowsum_max <= 1e-14 / (hx * hy));  // constants are in the kernel
  }
}

TEST_CASE("assembled matrix is exactly symmetric and matches a dense rebuild") {
  RectGrid g{0, 0, 1, 1, 6, 5};
  auto kappa = checkerboard_kappa(g);
  EllipticProblem prob;
  prob.grid = g;
  prob.kappa = &kappa;
  prob.source = [](double x, double y) { return std::cos(x + 2 * y); };
  prob.constrained_nodes = boundary_nodes(g);
  prob.constrained_values.assign(prob.constrained_nodes.size(), 0.0);
  SparseSystem sys = assemble(prob);

  // exact symmetry of stored values
  Eigen::MatrixXd A = csr_to_dense(sys.A);
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < A.cols(); ++c) CHECK(A(r, c) == A(c, r));

  // dense rebuild from element stiffness, same elimination
  const int nn = (g.nx + 1) * (g.ny + 1);
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(nn, nn);
  auto K = q1_element_stiffness(g.hx(), g.hy());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int n[4] = {g.node_id(i, j), g.node_id(i + 1, j), g.node_id(i + 1, j + 1),
                        g.node_id(i, j + 1)};
      const double kv = kappa[static_cast<std::size_t>(j) * g.nx + i];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) full(n[a], n[b]) += kv * K[a][b];
    }
  for (std::size_t r = 0; r < sys.free_ids.size(); ++r)
    for (std::size_t c = 0; c < sys.free_ids.size(); ++c)
      CHECK(A(r, c) == doctest::Approx(full(sys.free_ids[r], sys.free_ids[c])).epsilon(1e-14));
}

TEST_CASE("harmonic data is reproduced exactly and solves meet the residual contract") {
  RectGrid g{0, 0, 1, 1, 12, 12};
  std::vector<double> kappa(g.nx * g.ny, 2.5);
  EllipticProblem prob;
  prob.grid = g;
  prob.kappa = &kappa;
  prob.source = nullptr;
  prob.constrained_nodes = boundary_nodes(g);
  prob.constrained_values.clear();
  for (int id : prob.constrained_nodes)
    prob.constrained_values.push_back(g.node_x(id % (g.nx + 1)));
  SparseSystem sys = assemble(prob);
  std::vector<double> u;
  SolveInfo info = solve(sys, u, SolveOptions{});
  CHECK(info.rel_residual <= 1e-10);
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i)
      CHECK(u[g.node_id(i, j)] == doctest::Approx(g.node_x(i)).epsilon(1e-9));
}

TEST_CASE("manufactured solution converges at second order") {
  auto exact = [](double x, double y) { return std::sin(M_PI * x) * std::sin(2 * M_PI * y); };
  auto src = [](double x, double y) {
    return 5.0 * M_PI * M_PI * std::sin(M_PI * x) * std::sin(2 * M_PI * y);
  };
  double err[2];
  int idx = 0;
  for (int n : {16, 32}) {
    RectGrid g{0, 0, 1, 1, n, n};
    std::vector<double> kappa(static_cast<std::size_t>(n) * n, 1.0);
    EllipticProblem prob;
    prob.grid = g;
    prob.kappa = &kappa;
    prob.source = src;
    prob.constrained_nodes = boundary_nodes(g);
    prob.constrained_values.assign(prob.constrained_nodes.size(), 0.0);
    SparseSystem sys = assemble(prob);
    std::vector<double> u;
    solve(sys, u, SolveOptions{});
    double e2 = 0.0;
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const double d = u[g.node_id(i, j)] - exact(g.node_x(i), g.node_y(j));
        e2 += d * d;
      }
    err[idx++] = std::sqrt(e2 / ((n + 1.0) * (n + 1.0)));
  }
  CHECK(err[0] / err[1] >= 3.6);
  CHECK(err[0] / err[1] <= 4.4);
}

TEST_CASE("rough medium solve agrees with a dense LU oracle") {
  RectGrid g{0, 0, 1, 1, 32, 32};
  auto kappa = checkerboard_kappa(g);
  EllipticProblem prob;
  prob.grid = g;
  prob.kappa = &kappa;
  prob.source = [](double, double) { return 1.0; };
  prob.constrained_nodes = boundary_nodes(g);
  prob.constrained_values.assign(prob.constrained_nodes.size(), 0.0);
  SparseSystem sys = assemble(prob);

  Eigen::MatrixXd A = csr_to_dense(sys.A);
  Eigen::Map<const Eigen::VectorXd> rhs(sys.rhs.data(), sys.rhs.size());
  Eigen::VectorXd x_oracle = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(rhs);

  for (auto method : {SolveOptions::band_cholesky, SolveOptions::pcg_jacobi,
                      SolveOptions::pcg_ic0, SolveOptions::sparse_direct}) {
    std::vector<double> u;
    SolveOptions opt;
    opt.method = method;
    SolveInfo info = solve(sys, u, opt);
    CHECK(info.rel_residual <= 1e-10);
    double md = 0.0;
    for (std::size_t i = 0; i < sys.free_ids.size(); ++i)
      md = std::max(md, std::abs(u[sys.free_ids[i]] - x_oracle[i]));
    CHECK(md <= 1e-8 * x_oracle.cwiseAbs().maxCoeff());
  }

  // discrete maximum principle: nonnegative source, zero boundary
  std::vector<double> u;
  solve(sys, u, SolveOptions{});
  for (double v : u) CHECK(v >= -1e-12);
}

TEST_CASE("constraint elimination reproduces the full-system solution") {
  RectGrid g{0, 0, 2, 1, 10, 7};
  auto kappa = checkerboard_kappa(g);
  EllipticProblem prob;
  prob.grid = g;
  prob.kappa = &kappa;
  prob.source = [](double x, double y) { return x - y; };
  prob.constrained_nodes = boundary_nodes(g);
  for (int id : prob.constrained_nodes) {
    const int i = id % (g.nx + 1), j = id / (g.nx + 1);
    prob.constrained_values.push_back(std::sin(g.node_x(i)) + g.node_y(j));
  }
  SparseSystem sys = assemble(prob);
  std::vector<double> u;
  solve(sys, u, SolveOptions{});
  // constrained entries carry the data verbatim
  for (std::size_t k = 0; k < sys.constrained_ids.size(); ++k)
    CHECK(u[sys.constrained_ids[k]] == sys.constrained_values[k]);

  // oracle: assemble the full matrix densely, pin rows, solve
  const int nn = (g.nx + 1) * (g.ny + 1);
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(nn, nn);
  Eigen::VectorXd load = Eigen::VectorXd::Zero(nn);
  auto K = q1_element_stiffness(g.hx(), g.hy());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int n[4] = {g.node_id(i, j), g.node_id(i + 1, j), g.node_id(i + 1, j + 1),
                        g.node_id(i, j + 1)};
      const double kv = kappa[static_cast<std::size_t>(j) * g.nx + i];
      const double cell_load =
          prob.source(g.cell_cx(i), g.cell_cy(j)) * g.hx() * g.hy() * 0.25;
      for (int a = 0; a < 4; ++a) {
        load[n[a]] += cell_load;
        for (int b = 0; b < 4; ++b) full(n[a], n[b]) += kv * K[a][b];
      }
    }
  for (std::size_t k = 0; k < sys.constrained_ids.size(); ++k) {
    const int id = sys.constrained_ids[k];
    full.row(id).setZero();
    full(id, id) = 1.0;
    load[id] = sys.constrained_values[k];
  }
  Eigen::VectorXd ufull = Eigen::PartialPivLU<Eigen::MatrixXd>(full).solve(load);
  for (int id = 0; id < nn; ++id) CHECK(u[id] == doctest::Approx(ufull[id]).epsilon(1e-9));

  // re-solving with new boundary data through the coupling block
  std::vector<double> g2(sys.constrained_values.size(), 1.0);
  sys.set_constraint_values(g2.data());
  solve(sys, u, SolveOptions{});
  load.setZero();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double cell_load =
          prob.source(g.cell_cx(i), g.cell_cy(j)) * g.hx() * g.hy() * 0.25;
      const int n[4] = {g.node_id(i, j), g.node_id(i + 1, j), g.node_id(i + 1, j + 1),
                        g.node_id(i, j + 1)};
      for (int a = 0; a < 4; ++a) load[n[a]] += cell_load;
    }
  for (int id : sys.constrained_ids) load[id] = 1.0;
  ufull = Eigen::PartialPivLU<Eigen::MatrixXd>(full).solve(load);
  for (int id = 0; id < nn; ++id) CHECK(u[id] == doctest::Approx(ufull[id]).epsilon(1e-9));
}

TEST_CASE("band Cholesky handles multiple right-hand sides") {
  RectGrid g{0, 0, 1, 1, 9, 9};
  auto kappa = checkerboard_kappa(g);
  EllipticProblem prob;
  prob.grid = g;
  prob.kappa = &kappa;
  prob.source = nullptr;
  prob.constrained_nodes = boundary_nodes(g);
  prob.constrained_values.assign(prob.constrained_nodes.size(), 0.0);
  SparseSystem sys = assemble(prob);
  BandCholesky chol;
  chol.factor(sys.A);
  CHECK(chol.size() == static_cast<int>(sys.free_ids.size()));
  Rng rng(99);
  for (int rep = 0; rep < 4; ++rep) {
    std::vector<double> rhs(sys.free_ids.size()), x(sys.free_ids.size());
    for (auto& v : rhs) v = rng.next_uniform(-1, 1);
    chol.solve(rhs.data(), x.data());
    std::vector<double> Ax(rhs.size());
    sys.A.multiply(x.data(), Ax.data());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rhs.size(); ++i) {
      num += (Ax[i] - rhs[i]) * (Ax[i] - rhs[i]);
      den += rhs[i] * rhs[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
  }
}

TEST_CASE("repeat solver reuses the symbolic pattern across samples") {
  RectGrid g{0, 0, 1, 1, 24, 24};
  RepeatSolver solver;
  Rng rng(5);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<double> kappa(static_cast<std::size_t>(g.nx) * g.ny);
    for (auto& v : kappa) v = rng.next_uniform(0.5, 3.0);
    EllipticProblem prob;
    prob.grid = g;
    prob.kappa = &kappa;
    prob.source = [](double, double) { return 1.0; };
    prob.constrained_nodes = boundary_nodes(g);
    prob.constrained_values.assign(prob.constrained_nodes.size(), 0.0);
    SparseSystem sys = assemble(prob);
    std::vector<double> u;
    solver.solve(sys, u);
    std::vector<double> x(sys.free_ids.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = u[sys.free_ids[i]];
    std::vector<double> Ax(x.size());
    sys.A.multiply(x.data(), Ax.data());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (Ax[i] - sys.rhs[i]) * (Ax[i] - sys.rhs[i]);
      den += sys.rhs[i] * sys.rhs[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
  }
}

TEST_CASE("unsymmetric solve matches a dense oracle") {
  const int n = 40;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Rng rng(17);
  for (int r = 0; r < n; ++r) {
    A(r, r) = 4.0 + rng.next_uniform01();
    if (r > 0) A(r, r - 1) = -1.0 + 0.3 * rng.next_uniform01();
    if (r + 1 < n) A(r, r + 1) = -1.2;
    A(r, (r * 7 + 3) % n) += 0.25;
  }
  SparseSystem sys;
  sys.total_nodes = n;
  sys.A = dense_to_csr(A);
  sys.rhs.resize(n);
  sys.free_ids.resize(n);
  sys.node_to_free.resize(n);
  for (int i = 0; i < n; ++i) {
    sys.free_ids[i] = i;
    sys.node_to_free[i] = i;
    sys.rhs[i] = rng.next_uniform(-2, 2);
  }
  std::vector<double> x;
  solve_unsymmetric(sys, x);
  Eigen::Map<const Eigen::VectorXd> b(sys.rhs.data(), n);
  Eigen::VectorXd xo = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(b);
  for (int i = 0; i < n; ++i)
    CHECK(x[i] == doctest::Approx(xo[i]).epsilon(1e-10).scale(xo.cwiseAbs().maxCoeff()));

  RepeatLU lu;
  std::vector<double> x2;
  lu.solve(sys, x2);
  for (int i = 0; i < n; ++i)
    CHECK(x2[i] == doctest::Approx(xo[i]).epsilon(1e-10).scale(xo.cwiseAbs().maxCoeff()));
}

TEST_CASE("energy inner product matches the assembled quadratic form") {
  RectGrid g{0, 0, 1, 1, 8, 6};
  auto kappa = checkerboard_kappa(g);
  const int nn = (g.nx + 1) * (g.ny + 1);
  Rng rng(23);
  std::vector<double> u(nn), v(nn);
  for (auto& w : u) w = rng.next_uniform(-1, 1);
  for (auto& w : v) w = rng.next_uniform(-1, 1);
  // dense quadratic form
  auto K = q1_element_stiffness(g.hx(), g.hy());
  double expect = 0.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int nid[4] = {g.node_id(i, j), g.node_id(i + 1, j), g.node_id(i + 1, j + 1),
                          g.node_id(i, j + 1)};
      const double kv = kappa[static_cast<std::size_t>(j) * g.nx + i];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) expect += kv * K[a][b] * u[nid[a]] * v[nid[b]];
    }
  const double got = cell_weighted_grad_dot(g, kappa.data(), u, v, 0, 0, g.nx, g.ny);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  // sub-range restriction
  std::vector<double> mask(kappa.size(), 0.0);
  double expect_sub = 0.0;
  for (int j = 2; j < 5; ++j)
    for (int i = 1; i < 6; ++i) {
      mask[static_cast<std::size_t>(j) * g.nx + i] = kappa[static_cast<std::size_t>(j) * g.nx + i];
      const int nid[4] = {g.node_id(i, j), g.node_id(i + 1, j), g.node_id(i + 1, j + 1),
                          g.node_id(i, j + 1)};
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          expect_sub += mask[static_cast<std::size_t>(j) * g.nx + i] * K[a][b] * u[nid[a]] * v[nid[b]];
    }
  const double got_sub = cell_weighted_grad_dot(g, mask.data(), u, v, 1, 2, 5, 3);
  CHECK(got_sub == doctest::Approx(expect_sub).epsilon(1e-12));
}

TEST_CASE("node field CSV output is byte-stable") {
  RectGrid g{0, 0, 1, 1, 2, 2};
  std::vector<double> u(9);
  for (int i = 0; i < 9; ++i) u[i] = std::sqrt(2.0) * (i - 4);
  std::ostringstream a, b;
  write_node_field_csv(a, g, u);
  write_node_field_csv(b, g, u);
  CHECK(a.str() == b.str());
  CHECK(a.str().substr(0, 10) == std::string("x,y,value\n"));
  CHECK(a.str().find("0.5,0.5,") != std::string::npos);
}
