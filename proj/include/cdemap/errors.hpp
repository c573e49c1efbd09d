#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdemap {

enum class ErrorCode {
    MalformedRow,
    DuplicateConcept,
    DanglingReference,
    NotFound,
    ProviderFailure,
    InvalidEntry,
    DecompositionFailure,
    OutOfRange,
    NotPending,
    UnknownReview,
    InvalidConcept,
    InvalidConfig,
    MissingRanking,
    LengthMismatch,
    BadPayload,
    Io,
};

constexpr std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedRow: return "MalformedRow";
        case ErrorCode::DuplicateConcept: return "DuplicateConcept";
        case ErrorCode::DanglingReference: return "DanglingReference";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::ProviderFailure: return "ProviderFailure";
        case ErrorCode::InvalidEntry: return "InvalidEntry";
        case ErrorCode::DecompositionFailure: return "DecompositionFailure";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::NotPending: return "NotPending";
        case ErrorCode::UnknownReview: return "UnknownReview";
        case ErrorCode::InvalidConcept: return "InvalidConcept";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::MissingRanking: return "MissingRanking";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::BadPayload: return "BadPayload";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

// Base of every error raised by the library. The code is stable and
// machine-readable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    std::string_view code_name() const noexcept { return error_code_name(code_); }

private:
    ErrorCode code_;
};

template <ErrorCode C>
class CodedError : public Error {
public:
    explicit CodedError(const std::string& message) : Error(C, message) {}
};

using MalformedRow = CodedError<ErrorCode::MalformedRow>;
using DuplicateConcept = CodedError<ErrorCode::DuplicateConcept>;
using DanglingReference = CodedError<ErrorCode::DanglingReference>;
using NotFound = CodedError<ErrorCode::NotFound>;
using ProviderFailure = CodedError<ErrorCode::ProviderFailure>;
using InvalidEntry = CodedError<ErrorCode::InvalidEntry>;
using DecompositionFailure = CodedError<ErrorCode::DecompositionFailure>;
using OutOfRange = CodedError<ErrorCode::OutOfRange>;
using NotPending = CodedError<ErrorCode::NotPending>;
using UnknownReview = CodedError<ErrorCode::UnknownReview>;
using InvalidConcept = CodedError<ErrorCode::InvalidConcept>;
using InvalidConfig = CodedError<ErrorCode::InvalidConfig>;
using MissingRanking = CodedError<ErrorCode::MissingRanking>;
using LengthMismatch = CodedError<ErrorCode::LengthMismatch>;
using BadPayload = CodedError<ErrorCode::BadPayload>;
using IoError = CodedError<ErrorCode::Io>;

}  // namespace cdemap
