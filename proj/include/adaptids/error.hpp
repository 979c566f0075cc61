#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace adaptids {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates an operation's precondition.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Configuration is malformed or references missing resources.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input and model shapes disagree.
class ShapeMismatch : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

/// Capture file is not classic microsecond pcap.
class UnsupportedFormat : public Error {
public:
    using Error::Error;
};

/// Capture ends in the middle of a record.
class TruncatedCapture : public Error {
public:
    TruncatedCapture(std::uint64_t offset, const std::string& what)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

enum class ContainerErrorKind { bad_magic, version_mismatch, length_mismatch, truncated, bad_metadata };

/// Dataset or checkpoint container could not be decoded.
class ContainerError : public Error {
public:
    ContainerError(ContainerErrorKind kind, const std::string& what, std::int64_t sample_index = -1)
        : Error(what), kind_(kind), sample_index_(sample_index) {}
    ContainerErrorKind kind() const noexcept { return kind_; }
    /// Index of the sample being decoded when the error occurred, or -1.
    std::int64_t sample_index() const noexcept { return sample_index_; }

private:
    ContainerErrorKind kind_;
    std::int64_t sample_index_;
};

/// A sampling pool cannot supply the requested number of samples.
class InsufficientPool : public Error {
public:
    using Error::Error;
};

/// Operation requires a different model kind (e.g. streaming on a CNN).
class UnsupportedModel : public Error {
public:
    using Error::Error;
};

/// The federated server handle could not be reached.
class ServerUnavailable : public Error {
public:
    using Error::Error;
};

}  // namespace adaptids
