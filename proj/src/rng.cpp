#include "epgn/rng.hpp"

#include <cmath>
#include <numbers>

namespace epgn {

std::uint64_t RngStream::mix(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream RngStream::split(std::string_view name) const {
  return RngStream(mix(key_ ^ fnv1a64(name)), 0);
}

RngStream RngStream::split(std::uint64_t index) const {
  return RngStream(mix(key_ ^ mix(index + 0x243f6a8885a308d3ULL)), 0);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t c = counter_++;
  return mix(key_ ^ mix(c));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

void RngStream::fill_uniform(std::span<double> out) {
  for (double& v : out) v = static_cast<double>(mix(key_ ^ mix(counter_++)) >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller, one output per pair of draws.
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  // Rejection keeps the result exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return r % bound;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace epgn
