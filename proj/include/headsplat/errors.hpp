#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace headsplat {

enum class ErrorCode {
    InvalidArgument,
    Io,
    AllFacesDegenerate,
    NonFiniteLatent,
    ShapeMismatch,
    ResolutionMismatch,
    SchemaMismatch,
    DegenerateBox,
    NoExtractor,
    MissingLandmarks,
    GeneratorNotInitialized,
    MissingTracking,
    FrameCountMismatch,
    BadBox,
    MissingCheckpoint,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) {
        fail(code, what);
    }
}

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::AllFacesDegenerate: return "AllFacesDegenerate";
    case ErrorCode::NonFiniteLatent: return "NonFiniteLatent";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::NoExtractor: return "NoExtractor";
    case ErrorCode::MissingLandmarks: return "MissingLandmarks";
    case ErrorCode::GeneratorNotInitialized: return "GeneratorNotInitialized";
    case ErrorCode::MissingTracking: return "MissingTracking";
    case ErrorCode::FrameCountMismatch: return "FrameCountMismatch";
    case ErrorCode::BadBox: return "BadBox";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    }
    return "Unknown";
}

} // namespace headsplat
