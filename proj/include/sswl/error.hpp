#pragma once

#include <stdexcept>
#include <string>

namespace sswl {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value violates a type invariant or an operation precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; the message always carries the offending path.
class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed on-disk container.
class FormatError : public Error {
public:
    enum class Kind { bad_magic, truncated, checksum_mismatch, bad_header, version_mismatch };

    FormatError(Kind kind, const std::string& path, const std::string& what)
        : Error(path + ": " + what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// A forward pass produced a non-finite activation.
class NumericError : public Error {
public:
    NumericError(const std::string& layer, const std::string& what)
        : Error("non-finite value in " + layer + ": " + what), layer_(layer) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

}  // namespace sswl
