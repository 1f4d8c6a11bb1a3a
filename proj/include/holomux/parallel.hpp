#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "holomux/coincidence.hpp"
#include "holomux/memory_sim.hpp"

namespace holomux {

/// Shots per work unit. Fixed so that block boundaries do not depend on the thread count.
constexpr std::size_t kShotBlock = 2048;

/// Explicit request, else HOLOMUX_THREADS, else the hardware concurrency.
inline int resolve_threads(std::optional<int> requested) {
  if (requested) {
    detail::require(*requested >= 1, "thread count must be at least 1");
    return *requested;
  }
  if (const char* env = std::getenv("HOLOMUX_THREADS"); env && *env) {
    std::int64_t n = 0;
    try {
      n = text::parse_int(env);
    } catch (const FormatError&) {
      throw ParameterError(std::string("HOLOMUX_THREADS is not an integer: '") + env + "'");
    }
    detail::require(n >= 1 && n <= 4096, "HOLOMUX_THREADS must lie in [1, 4096]");
    return static_cast<int>(n);
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Workers that for_each_block will actually start.
inline int worker_count(std::size_t n, std::size_t block, int threads) {
  const std::size_t blocks = (n + block - 1) / block;
  return static_cast<int>(std::clamp<std::size_t>(blocks, 1, static_cast<std::size_t>(std::max(1, threads))));
}

/// Calls fn(worker, begin, end) on consecutive blocks of [0, n). Each worker
/// index is used by one thread only. The exception of the lowest failing block
/// is rethrown after all workers have stopped.
template <class F>
void for_each_block(std::size_t n, std::size_t block, int threads, F fn) {
  detail::require(block >= 1, "block size must be positive");
  const std::size_t blocks = (n + block - 1) / block;
  std::vector<std::exception_ptr> errors(blocks);
  std::atomic<std::size_t> next{0};
  auto worker = [&](int w) {
    for (std::size_t b; (b = next.fetch_add(1)) < blocks;) {
      try {
        fn(w, b * block, std::min(n, (b + 1) * block));
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  };
  const int workers = worker_count(n, block, threads);
  if (workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker, i);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Block results of fn(begin, end), in block order.
template <class F>
auto map_blocks(std::size_t n, std::size_t block, int threads, F fn) {
  using R = decltype(fn(std::size_t{0}, std::size_t{0}));
  std::vector<std::optional<R>> results((n + block - 1) / block);
  for_each_block(n, block, threads, [&](int, std::size_t b, std::size_t e) { results[b / block].emplace(fn(b, e)); });
  std::vector<R> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

/// Shots first_shot .. first_shot + count - 1, in shot order.
inline std::vector<ShotRecord> simulate_shots(const ExperimentConfig& c, const ModeGrid& grid, std::int64_t first_shot,
                                              std::size_t count, std::uint64_t seed, int threads) {
  std::vector<ShotRecord> out(count);
  for_each_block(count, kShotBlock, threads, [&](int, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = run_shot(c, grid, first_shot + static_cast<std::int64_t>(i), seed);
  });
  return out;
}

/// Simulates and accumulates shots 0 .. count - 1 without keeping the events.
/// visit(worker, shot) sees every shot; per-worker state indexed by `worker`
/// needs no locking.
template <class Visit>
CoincidenceHistogram simulate_histogram(const ExperimentConfig& c, const ModeGrid& grid, std::size_t count,
                                        std::uint64_t seed, int threads, Axis axis, Visit visit) {
  const Binning bins = Binning::covering(c.fov_mrad, c.bin_mrad);
  const int workers = worker_count(count, kShotBlock, threads);
  std::vector<CoincidenceHistogram> partial(static_cast<std::size_t>(workers),
                                            CoincidenceHistogram(bins, c.delta_theta_mrad, axis));
  for_each_block(count, kShotBlock, workers, [&](int w, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto shot = run_shot(c, grid, static_cast<std::int64_t>(i), seed);
      visit(w, shot);
      accumulate_shot(partial[static_cast<std::size_t>(w)], shot.stokes_events, shot.antistokes_events);
      ++partial[static_cast<std::size_t>(w)].n_frames;
    }
  });
  // Integer counts: the merge is exact in any order.
  for (std::size_t w = 1; w < partial.size(); ++w) partial[0].merge(partial[w]);
  return std::move(partial[0]);
}

inline CoincidenceHistogram simulate_histogram(const ExperimentConfig& c, const ModeGrid& grid, std::size_t count,
                                               std::uint64_t seed, int threads, Axis axis = Axis::X) {
  return simulate_histogram(c, grid, count, seed, threads, axis, [](int, const ShotRecord&) {});
}

}  // namespace holomux
