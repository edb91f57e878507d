// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "moesim/trace.hpp"

namespace moesim {

// Synthesizes a trace whose layer-0 expert popularity is Zipf(skew) over a
// seeded permutation of the experts. Token embeddings are sampled around the
// toy model's router centroids (make_toy_model(shape, seed)) and resampled
// until the model routes them to the drawn expert at every layer with a
// positive margin, both on the raw embedding and along the residual stream.
RoutingTrace generate_trace(const ModelShape& shape, int num_batches, double skew, std::uint64_t seed);

// Same, but every batch splits its tokens evenly over `hot_experts` experts.
RoutingTrace generate_hot_trace(const ModelShape& shape, int num_batches, int hot_experts, std::uint64_t seed);

RoutingTrace generate_trace(const TraceMeta& meta);

// Text format, one record per line:
//   moesim-trace version=1 layers=L experts=E d_model=D batch_size=B batches=N skew=S hot_experts=H seed=X
//   <batch> <position> <expert_0> ... <expert_{L-1}> <x_0> ... <x_{D-1}>
// Records are batch-major then position-major. Reals use the shortest decimal
// form that round-trips, so read_trace(write_trace(t)) == t exactly.
void write_trace(const RoutingTrace& trace, std::ostream& out);
void write_trace(const RoutingTrace& trace, const std::filesystem::path& path);

// Throws ParseError (with line number) on malformed or truncated input and
// ValidationError when a record violates the header's shape.
RoutingTrace read_trace(std::istream& in);
RoutingTrace read_trace(const std::filesystem::path& path);

}  // namespace moesim
