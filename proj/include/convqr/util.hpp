#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace convqr {

// 64-bit FNV-1a. Used for context bucketing, seed substreams and content
// digests. Stable across platforms by construction.
constexpr std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (char c : data) {
    hash ^= static_cast<std::uint8_t>(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::string to_hex(std::uint64_t value);

// splitmix64 step; good avalanche for seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent named RNG stream from a master seed. All
// randomness in the pipeline flows through these so that one config seed
// pins every artifact.
std::uint64_t seed_substream(std::uint64_t seed, std::string_view name);

// Deterministic RNG helpers. The standard distributions are
// implementation-defined, so bounded draws and shuffles are done by hand
// to keep artifacts byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Uniform in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  double unit();  // uniform in [0, 1)

  // Fisher-Yates over indices 0..n-1; returns the permuted index vector.
  std::vector<std::size_t> permutation(std::size_t n);

  // First k elements of a random permutation of 0..n-1 (sampling without
  // replacement), k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
};

std::string trim(std::string_view s);
std::string lower(std::string_view s);

// Collapses runs of whitespace to single spaces, trims, and case-folds.
// This is the normalization used for rewrite dedup and pair identity.
std::string normalize_text(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix);

std::vector<std::string> split_ws(std::string_view s);

// Reads a whole file; throws DataError if it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// FNV-1a digest of file content, rendered "fnv1a64:<hex>".
std::string file_digest(const std::string& path);

// Applies fn(i) for i in [0, n) on up to `workers` threads and collects
// results in index order, so output never depends on scheduling.
void parallel_for_ordered(std::size_t n, int workers,
                          const std::function<void(std::size_t)>& fn);

// Fixed-precision decimal formatting (snprintf "%.*f"); deterministic
// across platforms for IEEE doubles.
std::string format_fixed(double value, int decimals);

}  // namespace convqr
