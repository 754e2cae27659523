#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dragon {

enum class ErrorKind {
    parse,
    validation,
    domain,
    out_of_bounds,
    degenerate,
    insufficient_data,
    missing_prerequisite,
    consistency,
    shape,
    numeric,
    checkpoint,
    training,
    io,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::parse: return "parse error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::domain: return "domain error";
        case ErrorKind::out_of_bounds: return "out-of-bounds error";
        case ErrorKind::degenerate: return "degenerate geometry";
        case ErrorKind::insufficient_data: return "insufficient data";
        case ErrorKind::missing_prerequisite: return "missing prerequisite";
        case ErrorKind::consistency: return "consistency error";
        case ErrorKind::shape: return "shape error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::checkpoint: return "checkpoint error";
        case ErrorKind::training: return "training error";
        case ErrorKind::io: return "i/o error";
    }
    return "error";
}

/// Base of every exception thrown by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

template <ErrorKind Kind>
class KindedError : public Error {
public:
    explicit KindedError(const std::string& message) : Error(Kind, message) {}
};

using ParseError = KindedError<ErrorKind::parse>;
using ValidationError = KindedError<ErrorKind::validation>;
using DomainError = KindedError<ErrorKind::domain>;
using OutOfBoundsError = KindedError<ErrorKind::out_of_bounds>;
using DegenerateError = KindedError<ErrorKind::degenerate>;
using InsufficientDataError = KindedError<ErrorKind::insufficient_data>;
using MissingPrerequisiteError = KindedError<ErrorKind::missing_prerequisite>;
using ConsistencyError = KindedError<ErrorKind::consistency>;
using ShapeError = KindedError<ErrorKind::shape>;
using NumericError = KindedError<ErrorKind::numeric>;
using CheckpointError = KindedError<ErrorKind::checkpoint>;
using TrainingError = KindedError<ErrorKind::training>;
using IoError = KindedError<ErrorKind::io>;

}  // namespace dragon
