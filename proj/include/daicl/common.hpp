#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace daicl {

enum class ErrorCode {
  // corpus
  MalformedLine,
  UnknownTag,
  OutOfRange,
  OverlappingSpans,
  SpanOutOfBounds,
  MalformedRecord,
  // embed_index
  DimensionMismatch,
  ZeroNorm,
  EmptyCorpus,
  EmptySequence,
  EmptyIndex,
  KTooLarge,
  InvalidSpec,
  CorruptIndex,
  // prompt_forge
  EmptySource,
  AlreadyMasked,
  TemplateMismatch,
  UnknownVariant,
  EmptyDemos,
  NoLabelFound,
  SourceTooLong,
  // neural_core
  TooLong,
  EmptyMaskSet,
  BadTag,
  GraphReuse,
  EmptyLossMask,
  ShapeMismatch,
  CorruptCheckpoint,
  // trainer
  NonFiniteGradient,
  MissingIndex,
  DivergenceDetected,
  // evalbench
  LengthMismatch,
  TooFewSeeds,
  // cli
  ConfigInvalid,
  HttpError,
  Timeout,
  MalformedResponse,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t x);

// Per-instance seed for parallel builders: global ⊕ index, then mixed.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  return mix_seed(global_seed ^ index);
}

}  // namespace daicl
