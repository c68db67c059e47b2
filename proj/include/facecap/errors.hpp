#pragma once

#include <stdexcept>
#include <string>

namespace facecap {

// Base error for everything raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (feature/face/caption/split files).
struct CorpusError : Error {
    explicit CorpusError(const std::string& msg) : Error(msg) {}
};

// Checkpoint format, version, or truncation problems.
struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

// Non-finite values where finite ones are required (losses, gradients).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace facecap
