#pragma once

#include <array>
#include <cstdint>

namespace nestmc {

// Philox4x64 with 10 rounds: a keyed 256-bit block function. The
// (counter, key) -> output map matches the reference implementation used by
// numpy.random.Philox, so test vectors can be generated independently.
std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> counter,
                                        std::array<std::uint64_t, 2> key);

// Splittable counter-based random stream.
//
// A stream is identified by a 128-bit key; output block n is
// philox4x64({n, 0, 0, 0}, key). child(i) derives a fresh 128-bit key by
// evaluating the block function on a counter subspace disjoint from output
// generation, so a simulation tree can hand every node randomness that
// depends only on (root seed, path of child indices) and never on worker
// scheduling. Copying a stream copies its position; streams are cheap value
// types and must not be shared across threads.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  // Independent stream keyed by (this stream's identity, index).
  RngStream child(std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform draw strictly inside (0, 1), mapped as ((u >> 12) + 0.5) * 2^-52.
  double uniform();

  // Standard normal via a 256-layer ziggurat with exact tail sampling.
  double normal();

  // Exponential with the given rate (mean 1/rate); always finite and > 0.
  double exponential(double rate);

  // Gamma(shape, rate) by Marsaglia-Tsang rejection, using the shape+1 boost
  // when shape < 1. Draws that underflow to 0 are rejected, so the result is
  // always strictly positive (reciprocals of these draws are formed later).
  double gamma(double shape, double rate);

 private:
  std::array<std::uint64_t, 2> key_{0, 0};
  std::array<std::uint64_t, 4> buffer_{};
  std::uint64_t block_ = 0;
  int buffer_pos_ = 4;
};

}  // namespace nestmc
