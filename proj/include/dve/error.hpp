#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dve {

enum class ErrorCode {
  ZeroVector,
  DimMismatch,
  ShapeMismatch,
  MissingSegment,
  DuplicateSegment,
  EmptyCoverage,
  EmptyClass,
  NoLabeledPixels,
  NonFinite,
  InvalidArgument,
  BadMagic,
  BadVersion,
  TruncatedPayload,
  UnknownDtype,
  BadSchema,
  Io,
  NoEmbedderConfigured,
  ProviderUnreachable,
  ProviderTimeout,
  UnknownImage,
  NoMapLoaded,
  MissingReferences,
  MissingProbe,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the library carries one of the codes above so
/// callers (CLI, HTTP layer, tests) can dispatch on it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dve
