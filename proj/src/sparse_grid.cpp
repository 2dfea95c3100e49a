// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/sparse_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>

namespace stomsfem {

namespace {

constexpr int kKeyBits = 20;  // levels up to 20 share one dyadic key space
constexpr double kPi = 3.14159265358979323846264338327950288;

void check_level(int level) {
  if (level < 0 || level > kKeyBits) throw std::invalid_argument("rule level out of range");
}

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double v = 1.0;
  for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
  return v;
}

}  // namespace

int rule_size(int level) {
  check_level(level);
  return level == 0 ? 1 : (1 << level) + 1;
}

std::vector<double> rule_nodes(RuleKind kind, int level) {
  check_level(level);
  if (level == 0) return {0.0};
  const int n = 1 << level;
  std::vector<double> x(n + 1);
  for (int j = 0; j <= n; ++j)
    x[j] = kind == RuleKind::clenshaw_curtis ? -std::cos(kPi * j / n) : -1.0 + 2.0 * j / n;
  // cos(pi/2) is a rounded value; pin the midpoint so nested levels agree bitwise
  x[n / 2] = 0.0;
  x[0] = -1.0;
  x[n] = 1.0;
  return x;
}

std::vector<double> rule_weights(RuleKind kind, int level) {
  check_level(level);
  if (level == 0) return {2.0};
  const int n = 1 << level;
  std::vector<double> w(n + 1);
  if (kind == RuleKind::trapezoid) {
    const double h = 2.0 / n;
    for (int j = 0; j <= n; ++j) w[j] = h;
    w[0] = w[n] = 0.5 * h;
    return w;
  }
  // closed-form Clenshaw-Curtis weights for the unit density
  for (int j = 0; j <= n; ++j) {
    double s = 0.0;
    for (int k = 1; k <= n / 2; ++k) {
      const double bk = (2 * k == n) ? 1.0 : 2.0;
      s += bk / (4.0 * k * k - 1.0) * std::cos(2.0 * kPi * k * j / n);
    }
    const double cj = (j == 0 || j == n) ? 1.0 : 2.0;
    w[j] = cj / n * (1.0 - s);
  }
  return w;
}

std::vector<std::uint32_t> rule_keys(int level) {
  check_level(level);
  if (level == 0) return {1u << (kKeyBits - 1)};
  const int n = 1 << level;
  std::vector<std::uint32_t> k(n + 1);
  for (int j = 0; j <= n; ++j) k[j] = static_cast<std::uint32_t>(j) << (kKeyBits - level);
  return k;
}

std::vector<double> chebyshev_zeros(int n) {
  if (n < 1) throw std::invalid_argument("chebyshev_zeros: n must be positive");
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = -std::cos(kPi * (2 * i + 1) / (2 * n));
  if (n % 2 == 1) x[n / 2] = 0.0;
  return x;
}

std::vector<double> fejer1_weights(int n) {
  if (n < 1) throw std::invalid_argument("fejer1_weights: n must be positive");
  std::vector<double> w(n);
  for (int j = 0; j < n; ++j) {
    const double th = kPi * (2 * j + 1) / (2 * n);
    double s = 0.0;
    for (int k = 1; k <= n / 2; ++k) s += std::cos(2.0 * k * th) / (4.0 * k * k - 1.0);
    w[j] = 2.0 / n * (1.0 - 2.0 * s);
  }
  return w;
}

std::vector<double> barycentric_weights_chebyshev_zeros(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    const double v = std::sin(kPi * (2 * i + 1) / (2 * n));
    w[i] = (i % 2 == 0) ? v : -v;
  }
  return w;
}

std::vector<double> barycentric_weights_lobatto(int n_nodes) {
  std::vector<double> w(n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    double v = (i == 0 || i == n_nodes - 1) ? 0.5 : 1.0;
    w[i] = (i % 2 == 0) ? v : -v;
  }
  if (n_nodes == 1) w[0] = 1.0;
  return w;
}

void barycentric_coeffs(const std::vector<double>& nodes, const std::vector<double>& bw,
                        double x, std::vector<double>& c) {
  const std::size_t n = nodes.size();
  c.assign(n, 0.0);
  if (n == 1) {
    c[0] = 1.0;
    return;
  }
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x - nodes[i];
    if (d == 0.0) {
      c.assign(n, 0.0);
      c[i] = 1.0;
      return;
    }
    c[i] = bw[i] / d;
    denom += c[i];
  }
  for (std::size_t i = 0; i < n; ++i) c[i] /= denom;
}

void linear_coeffs(const std::vector<double>& nodes, double x, std::vector<double>& c) {
  const std::size_t n = nodes.size();
  c.assign(n, 0.0);
  if (n == 1) {
    c[0] = 1.0;
    return;
  }
  if (x <= nodes.front()) {
    c.front() = 1.0;
    return;
  }
  if (x >= nodes.back()) {
    c.back() = 1.0;
    return;
  }
  std::size_t hi = 1;
  while (nodes[hi] < x) ++hi;
  const double t = (x - nodes[hi - 1]) / (nodes[hi] - nodes[hi - 1]);
  c[hi - 1] = 1.0 - t;
  c[hi] = t;
}

std::vector<SparseTerm> smolyak_terms(int dim, int level) {
  if (dim < 1) throw std::invalid_argument("smolyak_terms: dim must be positive");
  check_level(level);
  std::vector<SparseTerm> terms;
  std::vector<int> lv(static_cast<std::size_t>(dim), 0);
  // enumerate all level vectors with |l| <= level, depth-first in axis order
  const int lo = std::max(0, level - dim + 1);
  std::function<void(int, int)> rec = [&](int axis, int used) {
    if (axis == dim) {
      if (used >= lo) {
        const int gap = level - used;
        const double c = (gap % 2 == 0 ? 1.0 : -1.0) * binom(dim - 1, gap);
        if (c != 0.0) terms.push_back({lv, c});
      }
      return;
    }
    for (int l = 0; l + used <= level; ++l) {
      lv[static_cast<std::size_t>(axis)] = l;
      rec(axis + 1, used + l);
    }
  };
  rec(0, 0);
  return terms;
}

SparseGrid build_sparse_grid(RuleKind kind, int dim, int level) {
  SparseGrid g;
  g.kind = kind;
  g.dim = dim;
  g.level = level;
  g.terms = smolyak_terms(dim, level);

  // per-level 1D tables up to the requested level
  std::vector<std::vector<double>> nodes1(static_cast<std::size_t>(level) + 1);
  std::vector<std::vector<double>> weights1(static_cast<std::size_t>(level) + 1);
  std::vector<std::vector<std::uint32_t>> keys1(static_cast<std::size_t>(level) + 1);
  for (int l = 0; l <= level; ++l) {
    nodes1[l] = rule_nodes(kind, l);
    weights1[l] = rule_weights(kind, l);
    keys1[l] = rule_keys(l);
  }

  std::map<std::vector<std::uint32_t>, std::pair<std::vector<double>, double>> acc;
  std::vector<int> idx(static_cast<std::size_t>(dim));
  for (const SparseTerm& t : g.terms) {
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      std::vector<std::uint32_t> key(static_cast<std::size_t>(dim));
      std::vector<double> pt(static_cast<std::size_t>(dim));
      double w = t.coeff;
      for (int d = 0; d < dim; ++d) {
        key[d] = keys1[t.levels[d]][idx[d]];
        pt[d] = nodes1[t.levels[d]][idx[d]];
        w *= weights1[t.levels[d]][idx[d]];
      }
      auto& slot = acc[key];
      if (slot.first.empty()) slot.first = std::move(pt);
      slot.second += w;
      int d = 0;
      for (; d < dim; ++d) {
        if (++idx[d] < rule_size(t.levels[d])) break;
        idx[d] = 0;
      }
      if (d == dim) break;
    }
  }

  g.keys.reserve(acc.size());
  g.points.reserve(acc.size());
  g.weights.reserve(acc.size());
  for (auto& kv : acc) {
    g.index.emplace(kv.first, static_cast<int>(g.keys.size()));
    g.keys.push_back(kv.first);
    g.points.push_back(std::move(kv.second.first));
    g.weights.push_back(kv.second.second);
  }
  return g;
}

void sparse_interpolate(const SparseGrid& grid, const std::vector<double>& values, int n_out,
                        const double* x, double* out) {
  const int dim = grid.dim;
  if (values.size() != grid.size() * static_cast<std::size_t>(n_out))
    throw std::invalid_argument("sparse_interpolate: values size mismatch");
  for (int e = 0; e < n_out; ++e) out[e] = 0.0;

  // per-level interpolation coefficients along each axis, filled on demand
  std::vector<std::vector<std::vector<double>>> coef(
      static_cast<std::size_t>(dim),
      std::vector<std::vector<double>>(static_cast<std::size_t>(grid.level) + 1));
  std::vector<std::vector<std::uint32_t>> keys1(static_cast<std::size_t>(grid.level) + 1);
  for (int l = 0; l <= grid.level; ++l) keys1[l] = rule_keys(l);

  auto coeffs_for = [&](int axis, int l) -> const std::vector<double>& {
    auto& c = coef[axis][l];
    if (c.empty()) {
      const std::vector<double> nodes = rule_nodes(grid.kind, l);
      if (grid.kind == RuleKind::clenshaw_curtis) {
        const std::vector<double> bw = barycentric_weights_lobatto(static_cast<int>(nodes.size()));
        barycentric_coeffs(nodes, bw, x[axis], c);
      } else {
        linear_coeffs(nodes, x[axis], c);
      }
      if (c.empty()) c.assign(1, 1.0);  // level 0: single constant node
    }
    return c;
  };

  std::vector<int> idx(static_cast<std::size_t>(dim));
  std::vector<std::uint32_t> key(static_cast<std::size_t>(dim));
  for (const SparseTerm& t : grid.terms) {
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      double w = t.coeff;
      for (int d = 0; d < dim && w != 0.0; ++d) w *= coeffs_for(d, t.levels[d])[idx[d]];
      if (w != 0.0) {
        for (int d = 0; d < dim; ++d) key[d] = keys1[t.levels[d]][idx[d]];
        const auto it = grid.index.find(key);
        if (it == grid.index.end())
          throw std::logic_error("sparse_interpolate: node missing from grid index");
        const double* v = values.data() + static_cast<std::size_t>(it->second) * n_out;
        for (int e = 0; e < n_out; ++e) out[e] += w * v[e];
      }
      int d = 0;
      for (; d < dim; ++d) {
        if (++idx[d] < rule_size(t.levels[d])) break;
        idx[d] = 0;
      }
      if (d == dim) break;
    }
  }
}

}  // namespace stomsfem
