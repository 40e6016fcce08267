#include "dve/error.hpp"

namespace dve {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingSegment: return "MissingSegment";
    case ErrorCode::DuplicateSegment: return "DuplicateSegment";
    case ErrorCode::EmptyCoverage: return "EmptyCoverage";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::NoLabeledPixels: return "NoLabeledPixels";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::UnknownDtype: return "UnknownDtype";
    case ErrorCode::BadSchema: return "BadSchema";
    case ErrorCode::Io: return "Io";
    case ErrorCode::NoEmbedderConfigured: return "NoEmbedderConfigured";
    case ErrorCode::ProviderUnreachable: return "ProviderUnreachable";
    case ErrorCode::ProviderTimeout: return "ProviderTimeout";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::NoMapLoaded: return "NoMapLoaded";
    case ErrorCode::MissingReferences: return "MissingReferences";
    case ErrorCode::MissingProbe: return "MissingProbe";
  }
  return "Unknown";
}

}  // namespace dve
