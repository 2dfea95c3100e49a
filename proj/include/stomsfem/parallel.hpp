// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

// Deterministic work distribution: the index range is cut into fixed-size
// chunks claimed atomically by workers.  Reductions that must not depend on
// the worker count accumulate per-chunk partials and combine them in chunk
// order afterwards.

namespace stomsfem {

inline int default_workers() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         int workers = 0, std::size_t chunk = 16) {
  if (workers <= 0) workers = default_workers();
  if (n == 0) return;
  if (workers == 1 || n <= chunk) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto work = [&]() {
    for (;;) {
      std::size_t begin = next.fetch_add(chunk);
      if (begin >= n) return;
      std::size_t end = begin + chunk < n ? begin + chunk : n;
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Chunked vector-sum reduction: body(i, acc) adds sample i into acc.  Chunk
// partials are summed in increasing chunk index, so the result is identical
// for any worker count.
inline void chunked_sum(std::size_t n, std::size_t dim,
                        const std::function<void(std::size_t, double*)>& body,
                        double* out, int workers = 0, std::size_t chunk = 64) {
  std::size_t nchunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<double>> partial(nchunks);
  parallel_for(
      nchunks,
      [&](std::size_t c) {
        auto& acc = partial[c];
        acc.assign(dim, 0.0);
        std::size_t begin = c * chunk;
        std::size_t end = begin + chunk < n ? begin + chunk : n;
        for (std::size_t i = begin; i < end; ++i) body(i, acc.data());
      },
      workers, 1);
  for (std::size_t d = 0; d < dim; ++d) out[d] = 0.0;
  for (std::size_t c = 0; c < nchunks; ++c)
    for (std::size_t d = 0; d < dim; ++d) out[d] += partial[c][d];
}

}  // namespace stomsfem
