#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace direal {

// Tensor/matrix dimensions do not match what an operation requires.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad experiment configuration. Carries the offending key when known.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg, std::string key = "")
        : std::runtime_error(msg), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// Malformed binary file (IDX dataset, checkpoint). Carries the byte offset
// at which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}
    std::size_t byte_offset() const { return offset_; }

private:
    std::size_t offset_;
};

// API misuse: calling backward without a matching forward, sampling zero
// points, empty metric inputs, and similar.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss; carries the step for diagnostics.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& msg, long step)
        : std::runtime_error(msg), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

}  // namespace direal
