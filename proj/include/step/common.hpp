#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace step {

// Error taxonomy shared across the library. The CLI maps these to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct SamplingError : Error { using Error::Error; };
struct InitError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

using Rng = std::mt19937_64;

// Decorrelates (seed, stream) pairs so per-epoch / per-sequence generators
// are independent and resume-stable without serializing engine state.
inline Rng make_rng(uint64_t seed, uint64_t stream = 0) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace step
