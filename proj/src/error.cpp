#include "pianotimbre/error.hpp"

namespace pt {

const char* error_code_name(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::EmptyClip: return "EmptyClip";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::GraphNotRecorded: return "GraphNotRecorded";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::NegativeFrequency: return "NegativeFrequency";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::WrongSampleRate: return "WrongSampleRate";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCodebook: return "EmptyCodebook";
    case ErrorCode::InsufficientDistinctValues: return "InsufficientDistinctValues";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::TOutOfRange: return "TOutOfRange";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TensorDimMismatch: return "TensorDimMismatch";
    case ErrorCode::PitchIndexZeroInScore: return "PitchIndexZeroInScore";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::DurationMismatch: return "DurationMismatch";
    case ErrorCode::UnknownConfigKey: return "UnknownConfigKey";
    }
    return "Unknown";
}

} // namespace pt
