// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stomsfem {

Meshes build_meshes(const Domain2D& domain, const GridSpec& spec) {
  if (domain.x.length() <= 0.0 || domain.y.length() <= 0.0)
    throw std::invalid_argument("build_meshes: domain intervals must have positive length");
  if (spec.coarse_nx <= 0 || spec.coarse_ny <= 0)
    throw std::invalid_argument("build_meshes: coarse cell counts must be positive");
  if (spec.refine < 1) throw std::invalid_argument("build_meshes: refine must be >= 1");
  if (spec.oversample_ratio < 1.0)
    throw std::invalid_argument("build_meshes: oversample_ratio must be >= 1");

  Meshes m;
  m.domain = domain;
  m.spec = spec;
  m.coarse = {domain.x.lo, domain.y.lo, domain.x.length(), domain.y.length(),
              spec.coarse_nx, spec.coarse_ny};
  m.fine = {domain.x.lo, domain.y.lo, domain.x.length(), domain.y.length(),
            spec.coarse_nx * spec.refine, spec.coarse_ny * spec.refine};

  // halo width in fine cells per side; fractional halos snap outward so the
  // sample box stays a union of fine cells
  const double halo_cells = 0.5 * (spec.oversample_ratio - 1.0) * spec.refine;
  const int halo = static_cast<int>(std::ceil(halo_cells - 1e-12));

  m.patches.reserve(static_cast<std::size_t>(spec.coarse_nx) * spec.coarse_ny);
  for (int j = 0; j < spec.coarse_ny; ++j) {
    for (int i = 0; i < spec.coarse_nx; ++i) {
      CoarsePatch p;
      p.id = j * spec.coarse_nx + i;
      p.i = i;
      p.j = j;
      p.elem_i0 = i * spec.refine;
      p.elem_j0 = j * spec.refine;
      p.element_box = {m.coarse.node_x(i), m.coarse.node_y(j),
                       m.coarse.node_x(i + 1), m.coarse.node_y(j + 1)};
      p.win_i0 = std::max(0, p.elem_i0 - halo);
      p.win_j0 = std::max(0, p.elem_j0 - halo);
      const int win_i1 = std::min(m.fine.nx, p.elem_i0 + spec.refine + halo);
      const int win_j1 = std::min(m.fine.ny, p.elem_j0 + spec.refine + halo);
      p.win_nx = win_i1 - p.win_i0;
      p.win_ny = win_j1 - p.win_j0;
      p.sample_box = {m.fine.node_x(p.win_i0), m.fine.node_y(p.win_j0),
                      m.fine.node_x(win_i1), m.fine.node_y(win_j1)};
      p.corner_nodes = {m.coarse.node_id(i, j), m.coarse.node_id(i + 1, j),
                        m.coarse.node_id(i + 1, j + 1), m.coarse.node_id(i, j + 1)};
      m.patches.push_back(std::move(p));
    }
  }
  return m;
}

std::vector<int> locate_active_params(const CoarsePatch& patch, const std::vector<Box>& supports) {
  std::vector<int> out;
  for (int k = 0; k < static_cast<int>(supports.size()); ++k)
    if (patch.sample_box.overlaps(supports[k])) out.push_back(k);
  return out;
}

}  // namespace stomsfem
