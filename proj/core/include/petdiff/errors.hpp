#pragma once

#include <stdexcept>
#include <string>

namespace petdiff {

// Invalid user-supplied configuration (schedules, specs, CLI parameter sets).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Precondition violation on an operation argument (shape mismatch, bad range).
class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed volume/checkpoint file. Carries offset/size diagnostics in the message.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or diverging optimization. Message carries step diagnostics.
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite intermediate during reverse sampling. Message carries (slice, sub-step).
class SamplingError : public std::runtime_error {
public:
    explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric preconditions violated (empty mask, zero reference).
class EvaluationError : public std::runtime_error {
public:
    explicit EvaluationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace petdiff
