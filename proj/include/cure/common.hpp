#pragma once
// Shared numeric types, errors, RNG and small utilities.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cure {

// Row-major so flat serialization matches the checkpoint layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy; the CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AttributionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline double draw_normal(Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

inline std::int64_t draw_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> d(lo, hi);
  return d(rng);
}

inline double draw_unit(Rng& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(rng);
}

// FNV-1a, used for content hashes (graph, checkpoints, cache keys).
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_str(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t hash_u64(std::uint64_t v, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(&v, sizeof(v), h);
}

// Chunked parallel map. Work is split into contiguous ranges so callers can
// reduce results in index order and stay deterministic for a fixed thread count.
inline void parallel_chunks(std::size_t n, int threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  int workers = std::max(1, threads);
  if (workers == 1 || n < 2) {
    fn(0, n);
    return;
  }
  workers = static_cast<int>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

inline double clamp_prob(double p) {
  const double lo = 1e-12;
  return std::min(1.0 - lo, std::max(lo, p));
}

}  // namespace cure
