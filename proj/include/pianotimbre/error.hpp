#pragma once

#include <stdexcept>
#include <string>

namespace pt {

/// Failure categories shared by every module. The C API maps these 1:1 onto
/// pt_status values, so the numeric order is part of the ABI.
enum class ErrorCode : int {
    InvalidArgument = 1,
    MissingFile,
    IoFailure,
    UnsupportedEncoding,
    MalformedHeader,
    EmptyClip,
    DimMismatch,
    GraphNotRecorded,
    ClipTooShort,
    NegativeFrequency,
    IndexOutOfRange,
    WrongSampleRate,
    EmptyInput,
    EmptyCodebook,
    InsufficientDistinctValues,
    SchemaVersionMismatch,
    TOutOfRange,
    NonFiniteLoss,
    BadMagic,
    VersionMismatch,
    TensorDimMismatch,
    PitchIndexZeroInScore,
    GridMismatch,
    DurationMismatch,
    UnknownConfigKey,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what)
{
    if (!cond)
        throw Error(code, what);
}

} // namespace pt
