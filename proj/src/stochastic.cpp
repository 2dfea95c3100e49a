// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/stochastic.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "stomsfem/parallel.hpp"
#include "stomsfem/rng.hpp"

namespace stomsfem {

namespace {

double node_average(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// One chunk's running sums.  Vectors are sized on the chunk's first sample so
// the field length never has to be known up front.
struct Partial {
  std::vector<double> sum, sum2, sum3;
  double f1 = 0.0, f2 = 0.0, f3 = 0.0;
  long n_fallback = 0;
  long n_aborted = 0;
};

struct Totals {
  std::vector<double> sum, sum2, sum3;
  double f1 = 0.0, f2 = 0.0, f3 = 0.0;
  long n_fallback = 0;
  long n_aborted = 0;

  void combine(const Partial& p) {
    auto add = [](std::vector<double>& into, const std::vector<double>& from) {
      if (from.empty()) return;
      if (into.empty()) into.assign(from.size(), 0.0);
      if (into.size() != from.size())
        throw std::runtime_error("stochastic: sample fields disagree on node count");
      for (std::size_t k = 0; k < from.size(); ++k) into[k] += from[k];
    };
    add(sum, p.sum);
    add(sum2, p.sum2);
    add(sum3, p.sum3);
    f1 += p.f1;
    f2 += p.f2;
    f3 += p.f3;
    n_fallback += p.n_fallback;
    n_aborted += p.n_aborted;
  }
};

// Per-sample triple pushed into the accumulator: a value field, its square
// companion, and an extra field (unused by plain MC).  nullopt drops the
// sample (a failed correction solve).
struct Contribution {
  std::vector<double> a;   // summed into sum
  std::vector<double> b;   // summed into sum2
  std::vector<double> c;   // summed into sum3
  double fa = 0.0, fb = 0.0, fc = 0.0;
  bool fallback = false;
};

using ContributionFn = std::function<std::optional<Contribution>(std::size_t index)>;

// Chunked deterministic accumulation: workers own whole chunks of the index
// range and partials are combined in ascending chunk order, so the totals are
// bit-identical regardless of the worker count.
Totals accumulate(std::size_t n, const ContributionFn& body, int workers) {
  constexpr std::size_t kChunk = 64;
  std::size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<Partial> partial(nchunks);
  parallel_for(
      nchunks,
      [&](std::size_t cidx) {
        Partial& p = partial[cidx];
        std::size_t begin = cidx * kChunk;
        std::size_t end = begin + kChunk < n ? begin + kChunk : n;
        for (std::size_t i = begin; i < end; ++i) {
          std::optional<Contribution> got = body(i);
          if (!got) {
            ++p.n_aborted;
            continue;
          }
          auto add = [](std::vector<double>& into, const std::vector<double>& from) {
            if (into.empty()) into.assign(from.size(), 0.0);
            if (into.size() != from.size())
              throw std::runtime_error("stochastic: sample fields disagree on node count");
            for (std::size_t k = 0; k < from.size(); ++k) into[k] += from[k];
          };
          add(p.sum, got->a);
          add(p.sum2, got->b);
          add(p.sum3, got->c);
          p.f1 += got->fa;
          p.f2 += got->fb;
          p.f3 += got->fc;
          if (got->fallback) ++p.n_fallback;
        }
      },
      workers, 1);
  Totals t;
  for (const Partial& p : partial) t.combine(p);
  return t;
}

EstimatorReport two_level_impl(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                               const SampleSolver& coarse, const SampleSolver& fine,
                               const FieldFunctional& functional, int workers) {
  if (spec.n_on < 1) throw std::invalid_argument("stochastic: n_on must be positive");
  if (spec.n_on_fine < 0) throw std::invalid_argument("stochastic: n_on_fine must be nonnegative");
  if (spec.n_on_fine > 0 && !fine)
    throw std::invalid_argument("stochastic: correction samples need a fine solver");
  auto t0 = std::chrono::steady_clock::now();

  const std::size_t n1 = static_cast<std::size_t>(spec.n_on);
  Totals level1 = accumulate(
      n1,
      [&](std::size_t i) -> std::optional<Contribution> {
        std::vector<double> xi = draw_xi(dists, spec.seed, i);
        SampleResult r = coarse(i, xi);
        Contribution out;
        out.b.resize(r.u.size());
        for (std::size_t k = 0; k < r.u.size(); ++k) out.b[k] = r.u[k] * r.u[k];
        if (functional) {
          out.fa = functional(r.u);
          out.fb = out.fa * out.fa;
        }
        out.fallback = r.fallback;
        out.a = std::move(r.u);
        return out;
      },
      workers);

  const std::size_t nodes = level1.sum.size();
  const double inv1 = 1.0 / static_cast<double>(n1);
  EstimatorReport rep;
  rep.n_samples = spec.n_on;
  rep.n_fallback = level1.n_fallback;
  rep.mean.resize(nodes);
  rep.variance.resize(nodes);
  std::vector<double> var1(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    double m = level1.sum[k] * inv1;
    rep.mean[k] = m;
    rep.variance[k] = level1.sum2[k] * inv1 - m * m;
    var1[k] = rep.variance[k];
  }
  double fmean = level1.f1 * inv1;
  rep.functional_mean = fmean;
  rep.functional_variance = level1.f2 * inv1 - fmean * fmean;
  rep.var_level1 = node_average(var1);
  rep.mse_sampling = rep.var_level1 * inv1;

  // Correction pass on independent streams: indices continue past the
  // level-one block so the two passes never share a draw.  The mean and the
  // second moment both telescope; the variance field uses the telescoped
  // moments while var_correction tracks the spread of the difference itself.
  if (spec.n_on_fine > 0) {
    const std::size_t n2 = static_cast<std::size_t>(spec.n_on_fine);
    Totals corr = accumulate(
        n2,
        [&](std::size_t j) -> std::optional<Contribution> {
          std::size_t idx = n1 + j;
          std::vector<double> xi = draw_xi(dists, spec.seed, idx);
          SampleResult rc = coarse(idx, xi);
          SampleResult rf;
          try {
            rf = fine(idx, xi);
          } catch (const std::exception&) {
            return std::nullopt;
          }
          if (rf.u.size() != rc.u.size())
            throw std::runtime_error(
                "stochastic: two-level solvers disagree on node count; restrict the fine field");
          Contribution out;
          std::size_t nn = rc.u.size();
          out.a.resize(nn);   // u_f - u_c
          out.b.resize(nn);   // u_f^2 - u_c^2
          out.c.resize(nn);   // (u_f - u_c)^2
          for (std::size_t k = 0; k < nn; ++k) {
            double d = rf.u[k] - rc.u[k];
            out.a[k] = d;
            out.b[k] = rf.u[k] * rf.u[k] - rc.u[k] * rc.u[k];
            out.c[k] = d * d;
          }
          if (functional) {
            double gc = functional(rc.u);
            double gf = functional(rf.u);
            out.fa = gf - gc;
            out.fb = gf * gf - gc * gc;
            out.fc = (gf - gc) * (gf - gc);
          }
          out.fallback = rc.fallback || rf.fallback;
          return out;
        },
        workers);
    long kept = spec.n_on_fine - corr.n_aborted;
    rep.n_aborted = corr.n_aborted;
    rep.n_fallback += corr.n_fallback;
    rep.n_samples += kept;
    if (kept > 0) {
      if (corr.sum.size() != nodes)
        throw std::runtime_error(
            "stochastic: two-level solvers disagree on node count; restrict the fine field");
      const double inv2 = 1.0 / static_cast<double>(kept);
      std::vector<double> vard(nodes);
      for (std::size_t k = 0; k < nodes; ++k) {
        double md = corr.sum[k] * inv2;
        rep.mean[k] += md;
        rep.variance[k] += corr.sum2[k] * inv2 - 2.0 * rep.mean[k] * md + md * md;
        vard[k] = corr.sum3[k] * inv2 - md * md;
      }
      double fmd = corr.f1 * inv2;
      rep.functional_mean += fmd;
      rep.functional_variance += corr.f2 * inv2 - 2.0 * rep.functional_mean * fmd + fmd * fmd;
      rep.var_correction = node_average(vard);
      rep.mse_sampling += rep.var_correction * inv2;
    }
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace

std::vector<double> draw_xi(const std::vector<ParamDist>& dists, std::uint64_t seed,
                            std::uint64_t index) {
  Rng rng(Rng::stream_seed(seed, index));
  std::vector<double> xi(dists.size());
  for (std::size_t k = 0; k < dists.size(); ++k) {
    const ParamDist& d = dists[k];
    xi[k] = d.kind == ParamDist::uniform ? rng.next_uniform(d.a, d.b) : rng.next_normal();
  }
  return xi;
}

EstimatorReport run_mc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                       const SampleSolver& solve, const FieldFunctional& functional, int workers) {
  EstimatorSpec one = spec;
  one.n_on_fine = 0;
  return two_level_impl(one, dists, solve, SampleSolver{}, functional, workers);
}

EstimatorReport run_two_level_mc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                                 const SampleSolver& coarse, const SampleSolver& fine,
                                 const FieldFunctional& functional, int workers) {
  return two_level_impl(spec, dists, coarse, fine, functional, workers);
}

EstimatorReport run_sc(const EstimatorSpec& spec, const std::vector<ParamDist>& dists,
                       const NodeSolver& solve_node, const FieldFunctional& functional,
                       int workers) {
  if (dists.empty()) throw std::invalid_argument("stochastic: collocation needs parameters");
  for (const ParamDist& d : dists)
    if (d.kind != ParamDist::uniform)
      throw std::invalid_argument(
          "stochastic: collocation rules cover bounded uniform parameters only");
  auto t0 = std::chrono::steady_clock::now();

  const int dim = static_cast<int>(dists.size());
  SparseGrid grid = build_sparse_grid(spec.sc_rule, dim, spec.sc_level);
  RangeMap rm = range_map(dists);
  const double volume_inv = std::ldexp(1.0, -dim);  // node weights live on [-1,1]^dim

  Totals tot = accumulate(
      grid.size(),
      [&](std::size_t q) -> std::optional<Contribution> {
        std::vector<double> xi(dim);
        rm.to_native(grid.points[q].data(), xi.data());
        std::vector<double> u = solve_node(q, grid.keys[q], xi);
        double w = grid.weights[q] * volume_inv;
        Contribution out;
        out.a.resize(u.size());
        out.b.resize(u.size());
        for (std::size_t k = 0; k < u.size(); ++k) {
          out.a[k] = w * u[k];
          out.b[k] = w * u[k] * u[k];
        }
        if (functional) {
          double f = functional(u);
          out.fa = w * f;
          out.fb = w * f * f;
        }
        return out;
      },
      workers);

  EstimatorReport rep;
  rep.n_samples = static_cast<long>(grid.size());
  const std::size_t nodes = tot.sum.size();
  rep.mean = std::move(tot.sum);
  rep.variance.resize(nodes);
  for (std::size_t k = 0; k < nodes; ++k)
    rep.variance[k] = tot.sum2[k] - rep.mean[k] * rep.mean[k];
  rep.functional_mean = tot.f1;
  rep.functional_variance = tot.f2 - tot.f1 * tot.f1;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::vector<double> restrict_to_coarse_nodes(const Meshes& meshes,
                                             const std::vector<double>& u_fine) {
  if (u_fine.size() != static_cast<std::size_t>(meshes.fine.nodes()))
    throw std::invalid_argument("restrict_to_coarse_nodes: fine field size mismatch");
  const int r = meshes.spec.refine;
  std::vector<double> out(meshes.coarse.nodes());
  for (int J = 0; J <= meshes.coarse.ny; ++J)
    for (int I = 0; I <= meshes.coarse.nx; ++I)
      out[meshes.coarse.node_id(I, J)] = u_fine[meshes.fine.node_id(I * r, J * r)];
  return out;
}

long balance_budget(EstimatorSpec::Kind kind, double H, double h, double beta, double zeta,
                    double target_error) {
  (void)h;
  (void)target_error;
  if (!(H > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("balance_budget: H and beta must be positive");
  double expo = beta;
  if (kind == EstimatorSpec::sc) {
    if (!(zeta > 0.0)) throw std::invalid_argument("balance_budget: zeta must be positive");
    expo = beta / zeta;
  }
  double n = std::pow(H, -expo);
  long out = std::lround(n);
  return out < 1 ? 1 : out;
}

}  // namespace stomsfem
