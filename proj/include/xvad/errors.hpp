// errors.hpp - Exception taxonomy shared across the toolkit.
//
// The CLI maps these onto process exit codes:
//   config_error -> 2, data_error -> 3, numeric_error -> 4,
// anything else -> 1.
#pragma once

#include <stdexcept>
#include <string>

namespace xvad {

// Malformed or inconsistent configuration (bad JSON, invalid overrides,
// out-of-range hyperparameters).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken on-disk data: unreadable files, bad magic, truncated payloads,
// manifest inconsistencies, datasets that violate an operation's precondition.
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values detected during training or inference.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A video admits no clip start other than the base window, so no temporal
// negative can be drawn. Callers skip the offending video.
struct no_valid_shift_error : data_error {
    explicit no_valid_shift_error(const std::string& msg) : data_error(msg) {}
};

}  // namespace xvad
