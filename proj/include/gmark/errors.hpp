#pragma once

#include <stdexcept>
#include <string>

namespace gmark {

// Dimension or shape disagreement between tensors / configs.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument value (out-of-range landmark, bad config, ...).
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / serialization failures with a machine-checkable kind.
class IoError : public std::runtime_error {
public:
    enum class Kind {
        NotFound,
        BadMagic,
        BadVersion,
        Truncated,
        BadHeader,
        BadData,
        WriteFailed,
    };

    IoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Training aborted (non-finite loss, inconsistent dataset, ...).
class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gmark
