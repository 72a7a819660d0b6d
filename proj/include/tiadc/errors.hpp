#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace tiadc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid converter or experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed arguments (length mismatch, non-positive gain, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// Transform length is not a power of two.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Frequency outside the first Nyquist zone.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A stream carries no usable signal (zero power, constant input, ...).
class DegenerateSignalError : public Error {
public:
    using Error::Error;
};

/// Timing estimate or correction beyond half a sample period.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Wraps an estimator failure with the channel it occurred on.
class ChannelEstimationError : public Error {
public:
    ChannelEstimationError(std::size_t channel, const std::string& stage, const Error& cause)
        : Error("channel " + std::to_string(channel) + " (" + stage + "): " + cause.what()),
          channel_(channel),
          degenerate_(dynamic_cast<const DegenerateSignalError*>(&cause) != nullptr) {}

    std::size_t channel() const noexcept { return channel_; }
    bool degenerate() const noexcept { return degenerate_; }

private:
    std::size_t channel_;
    bool degenerate_;
};

}  // namespace tiadc
