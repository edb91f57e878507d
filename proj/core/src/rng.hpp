// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace moesim::detail {

// Independent, reproducible generator streams derived from one user seed.
enum class Stream : std::uint32_t {
  toy_model = 1,
  trace = 2,
  predictor_init = 3,
  training_order = 4,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace moesim::detail
