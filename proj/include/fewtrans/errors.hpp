#pragma once

#include <stdexcept>
#include <string>

namespace fewtrans {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Cross-validation needs at least two support items per class to split.
struct CvInfeasibleError : Error {
    explicit CvInfeasibleError(const std::string& what) : Error("cv-infeasible: " + what) {}
};

/// Adaptation diverged; carries the epoch at which the loss left the reals.
struct NonFiniteLossError : Error {
    NonFiniteLossError(const std::string& what, int epoch_index)
        : Error(what + " (epoch " + std::to_string(epoch_index) + ")"), epoch(epoch_index) {}
    int epoch;
};

}  // namespace fewtrans
