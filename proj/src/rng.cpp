#include "raven/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace raven {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_id, std::uint64_t counter)
    : master_seed_(master_seed), stream_id_(stream_id), counter_(counter) {
  key_ = splitmix64_mix(master_seed_ + kGamma) ^ splitmix64_mix(stream_id_ * 0xD1342543DE82EF95ULL + 1);
  key_ = splitmix64_mix(key_);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t z = key_ + (counter_ + 1) * kGamma;
  ++counter_;
  return splitmix64_mix(z);
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::substream(std::uint64_t tag) const {
  return RngStream(master_seed_, splitmix64_mix(stream_id_ ^ splitmix64_mix(tag + kGamma)));
}

}  // namespace raven
