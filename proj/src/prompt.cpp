#include "daicl/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "daicl/common.hpp"

namespace daicl::prompt {

namespace {

constexpr std::string_view kAlpacaHeader =
    "Below is an instruction that describes a task, paired with an input that provides further "
    "context. Write a response that appropriately completes the request.";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) { return text::lowercase(s); }

struct Segment {
  enum class Kind { Literal, Instruction, Contexts, Input, Response } kind;
  std::string literal;
};

std::vector<Segment> parse_layout(const std::string& layout) {
  static const std::pair<std::string_view, Segment::Kind> kPlaceholders[] = {
      {"{instruction}", Segment::Kind::Instruction},
      {"{contexts}", Segment::Kind::Contexts},
      {"{input}", Segment::Kind::Input},
      {"{response}", Segment::Kind::Response},
  };
  std::vector<Segment> segments;
  std::size_t pos = 0;
  std::string literal;
  while (pos < layout.size()) {
    bool matched = false;
    if (layout[pos] == '{') {
      for (const auto& [name, kind] : kPlaceholders) {
        if (layout.compare(pos, name.size(), name) == 0) {
          if (!literal.empty()) segments.push_back({Segment::Kind::Literal, std::move(literal)});
          literal.clear();
          segments.push_back({kind, {}});
          pos += name.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) literal.push_back(layout[pos++]);
  }
  if (!literal.empty()) segments.push_back({Segment::Kind::Literal, std::move(literal)});
  for (auto required : {Segment::Kind::Contexts, Segment::Kind::Input, Segment::Kind::Response}) {
    const auto n = std::count_if(segments.begin(), segments.end(),
                                 [&](const Segment& s) { return s.kind == required; });
    if (n != 1) {
      throw Error(ErrorCode::TemplateMismatch,
                  "layout needs exactly one each of {contexts}, {input} and {response}");
    }
  }
  return segments;
}

struct Builder {
  const text::Vocabulary& vocab;
  DecoderInstance inst;

  void tokens(const Tokens& toks, Region r) {
    for (const auto& t : toks) {
      inst.ids.push_back(vocab.id(t));
      inst.region.push_back(r);
    }
  }
  void literal(const std::string& s) {
    inst.text += s;
    tokens(text::tokenize(s), Region::Template);
  }
  void content(const Tokens& toks, Region r) {
    inst.text += text::join(toks);
    tokens(toks, r);
  }
};

bool is_bullet_line(const std::string& line, std::string& item) {
  if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') {
    item = line.substr(2);
    return true;
  }
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ') {
    item = line.substr(i + 2);
    return true;
  }
  return false;
}

std::string clean_item(std::string s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || std::isspace(static_cast<unsigned char>(s.back())))) {
    s.pop_back();
  }
  return trim(s);
}

bool is_none(const std::string& s) {
  std::string t = lower(trim(s));
  while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.back()))) t.pop_back();
  return t == "none";
}

}  // namespace

std::string_view to_string(Region r) {
  switch (r) {
    case Region::Source: return "SOURCE";
    case Region::Sep: return "SEP";
    case Region::Context: return "CONTEXT";
    case Region::Template: return "TEMPLATE";
    case Region::Response: return "RESPONSE";
  }
  return "?";
}

std::vector<std::size_t> EncoderInstance::positions(Region r) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i] == r) out.push_back(i);
  return out;
}

std::size_t EncoderInstance::count(Region r) const {
  return static_cast<std::size_t>(std::count(region.begin(), region.end(), r));
}

EncoderInstance build_encoder_instance(const SourceInput& source, std::span<const Tokens> contexts,
                                       const text::Vocabulary& vocab, std::size_t max_len) {
  if (source.tokens.empty()) throw Error(ErrorCode::EmptySource, "encoder source is empty");
  if (!source.tags.empty() && source.tags.size() != source.tokens.size()) {
    throw Error(ErrorCode::ShapeMismatch, "tags do not align with source tokens");
  }
  if (max_len && source.tokens.size() > max_len) {
    throw Error(ErrorCode::SourceTooLong, std::to_string(source.tokens.size()) + " > " +
                                              std::to_string(max_len));
  }
  EncoderInstance inst;
  inst.ids = vocab.encode(source.tokens);
  inst.region.assign(inst.ids.size(), Region::Source);
  inst.label_class = source.label_class;
  inst.label_tags = source.tags;
  for (const auto& ctx : contexts) {
    if (ctx.empty()) continue;
    if (max_len && inst.ids.size() + 1 + ctx.size() > max_len) break;
    inst.ids.push_back(text::kSep);
    inst.region.push_back(Region::Sep);
    for (const auto& t : ctx) {
      inst.ids.push_back(vocab.id(t));
      inst.region.push_back(Region::Context);
    }
    ++inst.contexts_kept;
  }
  return inst;
}

EncoderInstance build_lm_instance(const Tokens& tokens, const text::Vocabulary& vocab,
                                  std::size_t max_len) {
  if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "lm instance is empty");
  EncoderInstance inst;
  const std::size_t n = max_len ? std::min(max_len, tokens.size()) : tokens.size();
  inst.ids = vocab.encode(std::span<const std::string>(tokens.data(), n));
  inst.region.assign(n, Region::Context);
  inst.contexts_kept = 1;
  return inst;
}

std::size_t mask_count(std::size_t n_context, double rate) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n_context) + 0.5));
}

EncoderInstance apply_mlm_mask(const EncoderInstance& inst, double rate, std::mt19937_64& rng) {
  if (inst.masked) throw Error(ErrorCode::AlreadyMasked, "instance already masked");
  EncoderInstance out = inst;
  out.masked = true;
  auto ctx = inst.positions(Region::Context);
  const std::size_t m = std::min(mask_count(ctx.size(), rate), ctx.size());
  // Partial Fisher-Yates: the first m entries are a uniform sample without replacement.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ctx.size() - 1);
    std::swap(ctx[i], ctx[pick(rng)]);
  }
  ctx.resize(m);
  std::sort(ctx.begin(), ctx.end());
  out.mask_positions = ctx;
  out.mask_targets.reserve(m);
  for (auto p : ctx) {
    out.mask_targets.push_back(out.ids[p]);
    out.ids[p] = text::kMask;
  }
  return out;
}

EncoderInstance restore_masked(const EncoderInstance& inst) {
  EncoderInstance out = inst;
  for (std::size_t i = 0; i < inst.mask_positions.size(); ++i) {
    out.ids[inst.mask_positions[i]] = inst.mask_targets[i];
  }
  out.mask_positions.clear();
  out.mask_targets.clear();
  out.masked = false;
  return out;
}

const std::string& ner_instruction() {
  static const std::string s =
      "Please identify all entities from the input sentence. If there is no entity, please "
      "output None.";
  return s;
}

const std::string& sa_instruction() {
  static const std::string s =
      "Please identify the sentiment of the input review. Answer with negative, neutral or "
      "positive.";
  return s;
}

PromptTemplate alpaca_template(Task task) {
  PromptTemplate t;
  const bool ner = task == Task::Ner;
  t.name = ner ? "alpaca_ner" : "alpaca_sa";
  t.instruction = ner ? ner_instruction() : sa_instruction();
  t.context_prefix = ner ? "Sentence: " : "Review: ";
  t.layout = std::string(kAlpacaHeader) + "\n\n### Instruction:\n{instruction}\n\n{contexts}" +
             (ner ? "Input sentence: " : "Input review: ") + "{input}\n\n### Response:\n{response}";
  return t;
}

DecoderInstance build_decoder_instance(const Tokens& source, std::span<const Tokens> contexts,
                                       const std::optional<Tokens>& response,
                                       const PromptTemplate& tmpl, const text::Vocabulary& vocab,
                                       std::size_t max_len) {
  if (source.empty()) throw Error(ErrorCode::EmptySource, "decoder source is empty");
  const auto segments = parse_layout(tmpl.layout);

  auto render = [&](std::size_t n_ctx) {
    Builder b{vocab, {}};
    b.inst.ids.push_back(text::kBos);
    b.inst.region.push_back(Region::Template);
    for (const auto& seg : segments) {
      switch (seg.kind) {
        case Segment::Kind::Literal: b.literal(seg.literal); break;
        case Segment::Kind::Instruction: b.literal(tmpl.instruction); break;
        case Segment::Kind::Contexts:
          for (std::size_t i = n_ctx; i-- > 0;) {
            b.literal(tmpl.context_prefix);
            b.content(contexts[i], Region::Context);
            b.literal("\n");
          }
          break;
        case Segment::Kind::Input: b.content(source, Region::Source); break;
        case Segment::Kind::Response:
          if (response) {
            b.content(*response, Region::Response);
            b.inst.ids.push_back(text::kEos);
            b.inst.region.push_back(Region::Response);
          }
          break;
      }
    }
    b.inst.loss_mask.assign(b.inst.ids.size(), false);
    return std::move(b.inst);
  };

  std::size_t n_ctx = 0;
  for (const auto& c : contexts) {
    if (c.empty()) break;
    ++n_ctx;
  }
  DecoderInstance inst = render(n_ctx);
  while (max_len && inst.size() > max_len) {
    if (n_ctx == 0) {
      throw Error(ErrorCode::SourceTooLong,
                  "prompt of " + std::to_string(inst.size()) + " tokens exceeds " +
                      std::to_string(max_len) + " without contexts");
    }
    inst = render(--n_ctx);
  }
  return inst;
}

bool decoder_layout_ok(std::span<const Region> region, bool expect_response) {
  // Collapse into runs and match T (C|T)* S T R? with at least one leading T.
  std::vector<Region> runs;
  for (auto r : region)
    if (runs.empty() || runs.back() != r) runs.push_back(r);
  std::size_t i = 0;
  if (i >= runs.size() || runs[i] != Region::Template) return false;
  while (i < runs.size() && (runs[i] == Region::Template || runs[i] == Region::Context)) ++i;
  if (i == 0 || runs[i - 1] != Region::Template) return false;
  if (i >= runs.size() || runs[i] != Region::Source) return false;
  ++i;
  if (i >= runs.size() || runs[i] != Region::Template) return false;
  ++i;
  if (expect_response) {
    if (i >= runs.size() || runs[i] != Region::Response) return false;
    ++i;
  }
  return i == runs.size();
}

std::vector<bool> loss_mask_for_variant(const DecoderInstance& inst, Variant variant) {
  std::vector<bool> mask(inst.size(), false);
  switch (variant) {
    case Variant::Daicl:
    case Variant::IclRand:
    case Variant::IclSource:
      std::fill(mask.begin(), mask.end(), true);
      break;
    case Variant::IclSup:
    case Variant::NoIcl:
    case Variant::AdaptivePretrain:
      for (std::size_t i = 0; i < inst.size(); ++i) mask[i] = inst.region[i] == Region::Response;
      break;
    default:
      throw Error(ErrorCode::UnknownVariant, std::to_string(static_cast<int>(variant)));
  }
  return mask;
}

std::string join_entities(std::span<const std::string> entities) {
  if (entities.empty()) return "None";
  const bool bullets = std::any_of(entities.begin(), entities.end(), [](const std::string& e) {
    return e.find(',') != std::string::npos;
  });
  std::string out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (bullets) {
      if (i) out += '\n';
      out += "- " + entities[i];
    } else {
      if (i) out += ", ";
      out += entities[i];
    }
  }
  return out;
}

Tokens response_tokens_sa(corpus::Sentiment label) { return {std::string(corpus::to_string(label))}; }

Tokens response_tokens_ner(std::span<const std::string> entities) {
  return text::tokenize(join_entities(entities));
}

DemoMode demo_mode_from_string(const std::string& s) {
  if (s == "none") return DemoMode::None;
  if (s == "random") return DemoMode::Random;
  if (s == "retrieved") return DemoMode::Retrieved;
  throw Error(ErrorCode::ConfigInvalid, "unknown demo mode '" + s + "'");
}

std::string to_string(DemoMode m) {
  switch (m) {
    case DemoMode::None: return "none";
    case DemoMode::Random: return "random";
    case DemoMode::Retrieved: return "retrieved";
  }
  return "none";
}

std::string render_inference_prompt(const std::string& query, std::span<const Demo> demos, Task task,
                                    DemoMode mode) {
  if (mode != DemoMode::None && demos.empty()) {
    throw Error(ErrorCode::EmptyDemos, "demo mode '" + to_string(mode) + "' without demos");
  }
  if (mode == DemoMode::None && !demos.empty()) {
    throw Error(ErrorCode::InvalidSpec, "demo mode 'none' given demonstrations");
  }
  const bool ner = task == Task::Ner;
  const std::string in_label = ner ? "Sentence: " : "Review: ";
  const std::string out_label = ner ? "Entity:" : "Sentiment:";
  std::string out = (ner ? ner_instruction() : sa_instruction()) + "\n";
  for (const auto& d : demos) {
    out += in_label + d.input + "\n";
    out += out_label + " " + d.label + "\n";
  }
  out += in_label + query + "\n" + out_label;
  return out;
}

ParsedEntities parse_entity_response(const std::string& text) {
  ParsedEntities parsed;
  const std::string whole = trim(text);
  if (whole.empty()) {
    parsed.flagged = true;
    return parsed;
  }
  if (is_none(whole)) return parsed;

  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= whole.size()) {
    auto end = whole.find('\n', start);
    if (end == std::string::npos) end = whole.size();
    std::string line = trim(std::string_view(whole).substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    for (std::string_view prefix : {"entities:", "entity:"}) {
      if (lower(line).starts_with(prefix)) {
        line = trim(std::string_view(line).substr(prefix.size()));
        break;
      }
    }
    std::string item;
    if (is_bullet_line(line, item)) {
      items.push_back(item);
      continue;
    }
    std::size_t p = 0;
    while (p <= line.size()) {
      auto comma = line.find(',', p);
      if (comma == std::string::npos) comma = line.size();
      items.push_back(line.substr(p, comma - p));
      p = comma + 1;
    }
  }
  for (auto& raw : items) {
    std::string item = clean_item(raw);
    if (item.empty() || is_none(item)) continue;
    if (std::find(parsed.entities.begin(), parsed.entities.end(), item) == parsed.entities.end()) {
      parsed.entities.push_back(std::move(item));
    }
  }
  if (parsed.entities.empty()) parsed.flagged = true;
  return parsed;
}

corpus::Sentiment parse_sentiment_response(const std::string& text) {
  const std::string t = lower(text);
  std::size_t best = std::string::npos;
  corpus::Sentiment label = corpus::Sentiment::Neutral;
  for (auto s : {corpus::Sentiment::Negative, corpus::Sentiment::Neutral,
                 corpus::Sentiment::Positive}) {
    const auto pos = t.find(corpus::to_string(s));
    if (pos != std::string::npos && pos < best) {
      best = pos;
      label = s;
    }
  }
  if (best == std::string::npos) throw Error(ErrorCode::NoLabelFound, "'" + text + "'");
  return label;
}

nlohmann::json region_runs(std::span<const Region> region) {
  nlohmann::json runs = nlohmann::json::array();
  std::size_t i = 0;
  while (i < region.size()) {
    std::size_t j = i;
    while (j < region.size() && region[j] == region[i]) ++j;
    runs.push_back({std::string(to_string(region[i])), j - i});
    i = j;
  }
  return runs;
}

nlohmann::json encoder_instance_json(const EncoderInstance& inst) {
  nlohmann::json j;
  j["ids"] = inst.ids;
  j["regions"] = region_runs(inst.region);
  j["mask_positions"] = inst.mask_positions;
  j["mask_targets"] = inst.mask_targets;
  if (inst.label_class >= 0) j["label"] = inst.label_class;
  if (!inst.label_tags.empty()) j["tags"] = inst.label_tags;
  return j;
}

nlohmann::json decoder_instance_json(const DecoderInstance& inst) {
  nlohmann::json j;
  j["ids"] = inst.ids;
  j["regions"] = region_runs(inst.region);
  std::vector<int> mask(inst.loss_mask.begin(), inst.loss_mask.end());
  j["loss_mask"] = mask;
  return j;
}

}  // namespace daicl::prompt
