#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

namespace gmed {

using Rng = std::mt19937_64;

/// Independent generator for stream `stream` of a run seeded with `seed`.
/// Results never depend on which thread consumes which stream.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

/// `requested` if positive, else GMED_THREADS, else the hardware concurrency.
int resolve_threads(int requested);

/// Calls fn(k) for k in [0, count) on up to `threads` workers. Each index is
/// visited exactly once; if any call throws, the exception from the lowest
/// failing index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(count, threads > 1 ? static_cast<std::size_t>(threads) : 1);
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto work = [&] {
    for (std::size_t k = next.fetch_add(1); k < count; k = next.fetch_add(1)) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace gmed
