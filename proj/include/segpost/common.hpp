#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace segpost {

// Error kinds surfaced by the library. Everything derives from Error so the
// CLI can map any library failure to a single "bad input" exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Environment variable consulted for the default worker count.
inline constexpr const char* kThreadsEnv = "SEGPOST_THREADS";

inline std::size_t default_threads() {
  if (const char* env = std::getenv(kThreadsEnv)) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is owned by
// exactly one chunk, so callers writing disjoint outputs stay deterministic.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (n == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, n);
  if (threads == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace segpost
