#include "coseg/rng.hpp"

#include <cmath>

namespace coseg {

namespace {
constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
constexpr std::uint64_t kDefaultStream = 1442695040888963407ULL;
}  // namespace

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
  inc_ = ((stream + kDefaultStream) << 1u) | 1u;
  state_ = 0;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Pcg32::next_u32() {
  std::uint64_t old = state_;
  state_ = old * kMultiplier + inc_;
  std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint64_t Pcg32::next_u64() {
  std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double Pcg32::next_double() {
  return next_u32() * 0x1.0p-32;
}

float Pcg32::next_float() {
  return static_cast<float>(next_u32() * 0x1.0p-32);
}

std::uint32_t Pcg32::uniform_int(std::uint32_t bound) {
  // Lemire multiply-shift; bias is < bound / 2^32, irrelevant at our scales.
  std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * bound;
  return static_cast<std::uint32_t>(m >> 32);
}

double Pcg32::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double Pcg32::normal() {
  double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1.0p-32;  // (0,1]
  double u2 = next_double();                                        // [0,1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::array<std::uint8_t, 16> Pcg32::state_bytes() const {
  std::array<std::uint8_t, 16> out{};
  for (int i = 0; i < 8; ++i) {
    out[i] = static_cast<std::uint8_t>(state_ >> (8 * i));
    out[8 + i] = static_cast<std::uint8_t>(inc_ >> (8 * i));
  }
  return out;
}

void Pcg32::set_state_bytes(const std::array<std::uint8_t, 16>& bytes) {
  state_ = 0;
  inc_ = 0;
  for (int i = 7; i >= 0; --i) {
    state_ = (state_ << 8) | bytes[i];
    inc_ = (inc_ << 8) | bytes[8 + i];
  }
}

}  // namespace coseg
