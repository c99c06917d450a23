#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "daicl/corpus.hpp"
#include "daicl/text.hpp"
#include "daicl/variant.hpp"

namespace daicl::prompt {

using text::Tokens;

enum class Region : std::uint8_t { Source, Sep, Context, Template, Response };

std::string_view to_string(Region r);

// A labeled source input: class id for SA, BIO tag ids for NER.
struct SourceInput {
  Tokens tokens;
  int label_class = -1;
  std::vector<int> tags;
};

// Layout [x^S, SEP, c_1, SEP, ..., SEP, c_k] with c_1 the most similar context.
struct EncoderInstance {
  std::vector<int> ids;
  std::vector<Region> region;
  std::vector<std::size_t> mask_positions;
  std::vector<int> mask_targets;
  int label_class = -1;
  std::vector<int> label_tags;
  bool masked = false;
  std::size_t contexts_kept = 0;

  std::size_t size() const { return ids.size(); }
  std::vector<std::size_t> positions(Region r) const;
  std::size_t count(Region r) const;
};

// Contexts beyond max_len are dropped from the far end; the source is never cut.
// max_len == 0 means unbounded.
EncoderInstance build_encoder_instance(const SourceInput& source, std::span<const Tokens> contexts,
                                       const text::Vocabulary& vocab, std::size_t max_len = 0);

// Target-only sequence (every position CONTEXT), used by LM-only pre-training.
EncoderInstance build_lm_instance(const Tokens& tokens, const text::Vocabulary& vocab,
                                  std::size_t max_len = 0);

// round-half-up of rate * n_context.
std::size_t mask_count(std::size_t n_context, double rate);

// Replaces sampled CONTEXT positions with MASK (no 80/10/10 mixture).
EncoderInstance apply_mlm_mask(const EncoderInstance& inst, double rate, std::mt19937_64& rng);
EncoderInstance restore_masked(const EncoderInstance& inst);

struct PromptTemplate {
  std::string name;
  std::string instruction;
  std::string context_prefix;  // rendered before each context line
  std::string layout;          // {instruction} {contexts} {input} {response}
};

const std::string& ner_instruction();
const std::string& sa_instruction();
PromptTemplate alpaca_template(Task task);

struct DecoderInstance {
  std::vector<int> ids;
  std::vector<Region> region;
  std::vector<bool> loss_mask;
  std::string text;

  std::size_t size() const { return ids.size(); }
};

// Contexts are given most-similar first and rendered in reverse, so the most similar
// sits right before the input; over-long prompts drop the least similar first.
// `response` == nullopt builds an inference prefix (no response tokens, no EOS).
DecoderInstance build_decoder_instance(const Tokens& source, std::span<const Tokens> contexts,
                                       const std::optional<Tokens>& response,
                                       const PromptTemplate& tmpl, const text::Vocabulary& vocab,
                                       std::size_t max_len = 0);

// Validates TEMPLATE..CONTEXT..TEMPLATE..SOURCE..TEMPLATE..RESPONSE.
bool decoder_layout_ok(std::span<const Region> region, bool expect_response);

std::vector<bool> loss_mask_for_variant(const DecoderInstance& inst, Variant variant);

// Joins entities for prompts and responses: "None" when empty.
std::string join_entities(std::span<const std::string> entities);
Tokens response_tokens_sa(corpus::Sentiment label);
Tokens response_tokens_ner(std::span<const std::string> entities);

enum class DemoMode { None, Random, Retrieved };
DemoMode demo_mode_from_string(const std::string& s);
std::string to_string(DemoMode m);

struct Demo {
  std::string input;
  std::string label;
};

std::string render_inference_prompt(const std::string& query, std::span<const Demo> demos, Task task,
                                    DemoMode mode);

struct ParsedEntities {
  std::vector<std::string> entities;
  bool flagged = false;
};

ParsedEntities parse_entity_response(const std::string& text);
corpus::Sentiment parse_sentiment_response(const std::string& text);

nlohmann::json encoder_instance_json(const EncoderInstance& inst);
nlohmann::json decoder_instance_json(const DecoderInstance& inst);
// Run-length encoding of a region sequence: [[name, count], ...].
nlohmann::json region_runs(std::span<const Region> region);

}  // namespace daicl::prompt
