// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

namespace stomsfem {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double length() const { return hi - lo; }
};

struct Domain2D {
  Interval x, y;
};

struct GridSpec {
  int coarse_nx = 0;
  int coarse_ny = 0;
  int refine = 1;                  // fine cells per coarse cell per axis (H/h)
  double oversample_ratio = 1.0;   // eta >= 1
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool contains(const Box& o) const {
    return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1;
  }
  // open-interior overlap; touching edges do not count
  bool overlaps(const Box& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

// Uniform tensor grid of nx*ny cells.  Node coordinates are computed as
// origin + length*(k/n); the quotient of exact small integers rounds the same
// way at every refinement level, so coarse nodes coincide bit-for-bit with
// the fine nodes they refine into.
struct RectGrid {
  double x0 = 0.0, y0 = 0.0;
  double lx = 1.0, ly = 1.0;
  int nx = 0, ny = 0;

  int cells() const { return nx * ny; }
  int nodes() const { return (nx + 1) * (ny + 1); }
  double hx() const { return lx / nx; }
  double hy() const { return ly / ny; }
  int node_id(int i, int j) const { return j * (nx + 1) + i; }
  int cell_id(int i, int j) const { return j * nx + i; }
  double node_x(int i) const { return x0 + lx * (static_cast<double>(i) / nx); }
  double node_y(int j) const { return y0 + ly * (static_cast<double>(j) / ny); }
  double cell_cx(int i) const { return x0 + lx * ((i + 0.5) / nx); }
  double cell_cy(int j) const { return y0 + ly * ((j + 0.5) / ny); }
};

struct CoarsePatch {
  int id = 0;      // j*coarse_nx + i
  int i = 0, j = 0;
  Box element_box;
  Box sample_box;  // halo-extended, clipped at the domain, snapped to fine cells
  // fine-cell window of sample_box in the global fine grid
  int win_i0 = 0, win_j0 = 0, win_nx = 0, win_ny = 0;
  // first fine cell of the element window (extent is refine x refine)
  int elem_i0 = 0, elem_j0 = 0;
  std::array<int, 4> corner_nodes{};  // global coarse node ids, ccw from lower-left
  std::vector<int> active_params;
};

struct Meshes {
  Domain2D domain;
  GridSpec spec;
  RectGrid coarse;
  RectGrid fine;
  std::vector<CoarsePatch> patches;

  const CoarsePatch& patch_at(int i, int j) const { return patches[j * spec.coarse_nx + i]; }
};

// Builds nested coarse/fine grids and the oversampled patch list.
// Throws std::invalid_argument on non-positive counts, refine < 1, eta < 1,
// or a degenerate domain.
Meshes build_meshes(const Domain2D& domain, const GridSpec& spec);

// Indices of supports overlapping the patch's sample box, ascending.
std::vector<int> locate_active_params(const CoarsePatch& patch, const std::vector<Box>& supports);

}  // namespace stomsfem
