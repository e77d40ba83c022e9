#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace coseg {

// PCG32: small, fast, deterministic across platforms, and with a state that
// serializes to 16 bytes. All randomness in the project flows through this
// engine so that runs are reproducible from a single seed and the trainer
// can checkpoint its stream.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform in [0,1).
  double next_double();
  float next_float();

  // Uniform integer in [0, bound); bound must be > 0.
  std::uint32_t uniform_int(std::uint32_t bound);

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller. Stateless beyond the engine itself so
  // the serialized state fully describes the stream position.
  double normal();

  // Fisher-Yates shuffle with this engine.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_int(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::array<std::uint8_t, 16> state_bytes() const;
  void set_state_bytes(const std::array<std::uint8_t, 16>& bytes);

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace coseg
