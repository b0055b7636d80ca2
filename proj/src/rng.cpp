#include "smc/rng.hpp"

#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include "smc/error.hpp"

namespace smc {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(const RngStream& stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(stream.seed), static_cast<std::uint32_t>(stream.seed >> 32),
                    static_cast<std::uint32_t>(stream.stream_id),
                    static_cast<std::uint32_t>(stream.stream_id >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream RngStream::derive(std::string_view label) const { return {seed, splitmix64(stream_id ^ fnv1a64(label))}; }

RngStream RngStream::derive(std::uint64_t index) const {
  return {seed, splitmix64(stream_id + 0x632be59bd9b4e019ULL * (index + 1))};
}

Generator::Generator(const RngStream& stream) : engine_(make_engine(stream)) {}

double Generator::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Generator::uniform_below(std::uint64_t bound) {
  require(bound > 0, ErrorCode::InvalidInput, "uniform_below needs a positive bound");
  // Rejection sampling on the top range to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Generator::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::vector<double> gaussian(const RngStream& rng, std::size_t n, double sigma) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::InvalidInput, "sigma must be finite and non-negative");
  std::vector<double> out(n, 0.0);
  if (sigma == 0.0) return out;
  Generator gen(rng);
  for (double& v : out) v = sigma * gen.normal();
  return out;
}

std::vector<std::size_t> permutation(const RngStream& rng, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Generator gen(rng);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(gen.uniform_below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace smc
