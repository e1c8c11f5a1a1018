#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace rap {

//! splitmix64 mix of (base, stream); used for per-replicate and per-task seeds
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream)
{
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                    static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937_64(seq);
}

//! worker count: explicit value, then RAP_THREADS, then hardware concurrency
inline int resolve_threads(std::optional<int> requested = std::nullopt)
{
  if (requested && *requested > 0)
    return *requested;
  if (const char* env = std::getenv("RAP_THREADS")) {
    try {
      int v = std::stoi(env);
      if (v > 0)
        return v;
    } catch (...) {
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

//! runs f(i) for i in [0, n); each index exactly once, results must be
//! written by index so the outcome does not depend on scheduling
template <class F>
void parallel_for(std::size_t n, int threads, F&& f)
{
  if (n == 0)
    return;
  std::size_t nt = std::min<std::size_t>(std::max(threads, 1), n);
  if (nt == 1) {
    for (std::size_t i = 0; i < n; ++i)
      f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n)
        return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err)
          err = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t)
    pool.emplace_back(work);
  for (auto& th : pool)
    th.join();
  if (err)
    std::rethrow_exception(err);
}

}  // namespace rap
