#pragma once

#include <cstdint>
#include <utility>
#include <limits>

namespace raven {

// Counter-based random stream. Draw n of stream (seed, id) is a pure function
// of (seed, id, n): the key is derived once from (seed, id) and each draw is
// the SplitMix64 finalizer applied to key + n * golden-gamma. Parallel work
// uses distinct stream ids instead of sharing a stream.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() = default;
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id, std::uint64_t counter = 0);

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  result_type operator()() { return next_u64(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  // Uniform integer in [0, n); n > 0. Lemire's multiply-and-reject.
  std::uint64_t uniform_index(std::uint64_t n);
  // Uniform double in [0, 1) with 53 bits of resolution.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Standard normal via Box-Muller; consumes two draws per value.
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  // Independent child stream. The child id mixes this stream's id with `tag`,
  // so children of different parents never collide in practice.
  RngStream substream(std::uint64_t tag) const;

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t master_seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t key_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

// In-place Fisher-Yates shuffle driven by `rng`.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, RngStream& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = static_cast<decltype(i)>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
    using std::swap;
    swap(first[i], first[j]);
  }
}

}  // namespace raven
