#pragma once

#include <string>
#include <string_view>

namespace daicl {

// Training ablations; each fixes a context source and a loss policy.
enum class Variant { NoIcl, IclRand, IclSup, IclSource, Daicl, AdaptivePretrain };

enum class Task { Ner, Sa };

enum class ModelKind { Encoder, Decoder };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);  // throws UnknownVariant
std::string_view to_string(Task t);
Task task_from_string(std::string_view s);
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

// Where a variant's contexts come from.
enum class ContextSource { None, TargetRetrieved, TargetRandom, SourceRetrieved };
ContextSource context_source(Variant v);

// Encoder: whether context tokens are masked for the MLM objective.
bool uses_mlm(Variant v);

}  // namespace daicl
