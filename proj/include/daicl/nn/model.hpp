#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "daicl/nn/params.hpp"
#include "daicl/nn/tape.hpp"

namespace daicl::nn {

enum class Attention { Bidirectional, Causal };

struct AdapterConfig {
  std::size_t rank = 16;
  double alpha = 16.0;
  double dropout = 0.05;
};

struct ModelConfig {
  std::size_t vocab = 0;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_len = 128;
  std::size_t mlp_mult = 4;
  Attention attention = Attention::Bidirectional;
  bool mlm_head = false;
  std::size_t num_classes = 0;  // classifier head when > 0
  std::size_t num_tags = 0;     // emission head + CRF when > 0
  std::optional<AdapterConfig> adapter;
  double init_std = 0.02;

  void validate() const;  // ConfigInvalid
  bool causal() const { return attention == Attention::Causal; }
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct HeadCounters {
  std::atomic<std::size_t> mlm{0};
  std::atomic<std::size_t> classifier{0};
  std::atomic<std::size_t> emission{0};
  std::atomic<std::size_t> lm{0};

  HeadCounters() = default;
  HeadCounters(const HeadCounters& o) { *this = o; }
  HeadCounters& operator=(const HeadCounters& o);
  void reset();
};

struct Model {
  ModelConfig config;
  ParamStore params;
  std::uint64_t seed = 0;
  mutable HeadCounters calls;
};

Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// Adds A (r x d_in, Gaussian) and B (d_out x r, zero) to every query/value projection
// and freezes all other parameters. ShapeMismatch if adapters already exist.
void attach_adapters(Model& model, const AdapterConfig& cfg, std::uint64_t seed);
bool has_adapters(const Model& model);
// Base parameters with W + (alpha/r) B A folded in; adapter entries removed.
ParamStore effective_weights(const Model& model);

struct ForwardOptions {
  bool train = false;  // enables adapter dropout
  std::uint64_t dropout_seed = 0;
};

// n x d final hidden states.
Var forward_encoder(const Model& model, Tape& tape, std::span<const int> ids,
                    const ForwardOptions& opts = {});
Var decoder_hidden(const Model& model, Tape& tape, std::span<const int> ids,
                   const ForwardOptions& opts = {});
// n x V next-token logits (row i predicts ids[i+1]).
Var forward_decoder(const Model& model, Tape& tape, std::span<const int> ids,
                    const ForwardOptions& opts = {});

// |M| x V log-probabilities through the tied embedding table.
Var mlm_log_probs(const Model& model, Tape& tape, Var hidden, std::span<const std::size_t> positions);
// 1 x C log-probabilities from the mean of the given rows.
Var pooled_class_log_probs(const Model& model, Tape& tape, Var hidden,
                           std::span<const std::size_t> source_positions);
// |positions| x K emission scores.
Var emission_scores(const Model& model, Tape& tape, Var hidden,
                    std::span<const std::size_t> positions);

std::string layer_param(std::size_t layer, const std::string& leaf);

}  // namespace daicl::nn
