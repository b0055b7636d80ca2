#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace smc {

/// Identity of a random stream. Two equal RngStreams always produce the same
/// draws; the draws themselves come from a Generator built from the stream.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  /// A child stream keyed by a label, e.g. a layer name.
  RngStream derive(std::string_view label) const;
  RngStream derive(std::uint64_t index) const;

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

/// Mutable engine for one stream: mt19937_64 seeded through std::seed_seq with
/// (seed, stream_id) split into 32-bit words. Both algorithms are fixed by the
/// C++ standard, so sequences match across platforms. Distributions are
/// implemented here rather than with <random>'s, whose outputs are not
/// portable.
class Generator {
 public:
  explicit Generator(const RngStream& stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);
  /// Standard normal via Box–Muller; the second variate is cached.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n i.i.d. N(0, sigma²) draws. Throws InvalidInput for negative sigma.
std::vector<double> gaussian(const RngStream& rng, std::size_t n, double sigma);

/// Fisher–Yates permutation of [0, n).
std::vector<std::size_t> permutation(const RngStream& rng, std::size_t n);

/// 64-bit FNV-1a, used for stable labels and checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace smc
