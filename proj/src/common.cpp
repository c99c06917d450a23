#include "daicl/common.hpp"

namespace daicl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::UnknownTag: return "UnknownTag";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::OverlappingSpans: return "OverlappingSpans";
    case ErrorCode::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::CorruptIndex: return "CorruptIndex";
    case ErrorCode::EmptySource: return "EmptySource";
    case ErrorCode::AlreadyMasked: return "AlreadyMasked";
    case ErrorCode::TemplateMismatch: return "TemplateMismatch";
    case ErrorCode::UnknownVariant: return "UnknownVariant";
    case ErrorCode::EmptyDemos: return "EmptyDemos";
    case ErrorCode::NoLabelFound: return "NoLabelFound";
    case ErrorCode::SourceTooLong: return "SourceTooLong";
    case ErrorCode::TooLong: return "TooLong";
    case ErrorCode::EmptyMaskSet: return "EmptyMaskSet";
    case ErrorCode::BadTag: return "BadTag";
    case ErrorCode::GraphReuse: return "GraphReuse";
    case ErrorCode::EmptyLossMask: return "EmptyLossMask";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::MissingIndex: return "MissingIndex";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewSeeds: return "TooFewSeeds";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace daicl

#include "daicl/variant.hpp"

namespace daicl {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::NoIcl: return "NO_ICL";
    case Variant::IclRand: return "ICL_RAND";
    case Variant::IclSup: return "ICL_SUP";
    case Variant::IclSource: return "ICL_SOURCE";
    case Variant::Daicl: return "DAICL";
    case Variant::AdaptivePretrain: return "ADAPTIVE_PRETRAIN";
  }
  throw Error(ErrorCode::UnknownVariant, std::to_string(static_cast<int>(v)));
}

Variant variant_from_string(std::string_view s) {
  for (auto v : {Variant::NoIcl, Variant::IclRand, Variant::IclSup, Variant::IclSource,
                 Variant::Daicl, Variant::AdaptivePretrain}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::UnknownVariant, std::string(s));
}

std::string_view to_string(Task t) { return t == Task::Ner ? "ner" : "sa"; }

Task task_from_string(std::string_view s) {
  if (s == "ner") return Task::Ner;
  if (s == "sa") return Task::Sa;
  throw Error(ErrorCode::ConfigInvalid, "unknown task '" + std::string(s) + "'");
}

std::string_view to_string(ModelKind k) { return k == ModelKind::Encoder ? "encoder" : "decoder"; }

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "encoder") return ModelKind::Encoder;
  if (s == "decoder") return ModelKind::Decoder;
  throw Error(ErrorCode::ConfigInvalid, "unknown model kind '" + std::string(s) + "'");
}

ContextSource context_source(Variant v) {
  switch (v) {
    case Variant::Daicl:
    case Variant::IclSup: return ContextSource::TargetRetrieved;
    case Variant::IclRand: return ContextSource::TargetRandom;
    case Variant::IclSource: return ContextSource::SourceRetrieved;
    case Variant::NoIcl:
    case Variant::AdaptivePretrain: return ContextSource::None;
  }
  throw Error(ErrorCode::UnknownVariant, std::to_string(static_cast<int>(v)));
}

bool uses_mlm(Variant v) {
  switch (v) {
    case Variant::Daicl:
    case Variant::IclRand:
    case Variant::IclSource: return true;
    case Variant::IclSup:
    case Variant::NoIcl:
    case Variant::AdaptivePretrain: return false;
  }
  throw Error(ErrorCode::UnknownVariant, std::to_string(static_cast<int>(v)));
}

}  // namespace daicl
