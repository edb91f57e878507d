// SPDX-License-Identifier: Apache-2.0
#include "moesim/error.hpp"

namespace moesim {

ParseError::ParseError(const std::string& what, std::size_t line)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

InfeasibleCapacityError::InfeasibleCapacityError(const std::string& what, std::optional<int> layer)
    : Error(layer ? "layer " + std::to_string(*layer) + ": " + what : what), layer_(layer) {}

TrainingError::TrainingError(const std::string& what, int epoch)
    : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

}  // namespace moesim
