#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "daicl/corpus.hpp"
#include "daicl/nn/checkpoint.hpp"
#include "daicl/nn/model.hpp"
#include "daicl/optim.hpp"
#include "daicl/prompt.hpp"
#include "daicl/retrieval.hpp"
#include "daicl/synth.hpp"
#include "daicl/text.hpp"
#include "daicl/variant.hpp"

namespace daicl::train {

using text::Tokens;

// Production hyperparameters of the reference setup, accepted by configs but not the
// desk-scale defaults.
namespace reference {
inline constexpr double kEncoderLr = 1e-5;
inline constexpr double kCrfLr = 0.05;
inline constexpr double kAdapterLr = 3e-4;
inline constexpr std::size_t kAdapterBatch = 256;
inline constexpr std::size_t kEpochs = 5;
inline constexpr std::size_t kAdapterRank = 16;
inline constexpr double kAdapterDropout = 0.05;
inline constexpr std::size_t kContexts = 5;
inline constexpr double kLambda = 0.2;
inline constexpr double kMaskRate = 0.15;
inline constexpr double kWarmupFrac = 0.1;
}  // namespace reference

struct TaskData {
  Task task = Task::Sa;
  std::vector<prompt::SourceInput> source_train;
  std::vector<prompt::SourceInput> source_dev;
  std::vector<Tokens> target_unlabeled;
  std::vector<prompt::SourceInput> target_test;
};

prompt::SourceInput sa_input(const corpus::SentimentExample& ex);
prompt::SourceInput ner_input(const corpus::TaggedSentence& s);
TaskData sa_task_data(const synth::ShiftBenchmark& b);

struct TrainConfig {
  double lr = 1e-3;
  double crf_lr = reference::kCrfLr;
  double weight_decay = 0.01;
  optim::AdamConfig adam;
  std::size_t batch_size = 16;
  std::size_t epochs = reference::kEpochs;
  double warmup_frac = reference::kWarmupFrac;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  double lambda = reference::kLambda;
  std::size_t k = reference::kContexts;
  double mask_rate = reference::kMaskRate;
  bool mask_contexts = true;  // false turns MLM masking off for every variant
  std::size_t patience = 2;
  std::size_t pretrain_epochs = 1;
  std::size_t max_steps = 0;  // 0 = no cap

  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_len = 128;
  double init_std = 0.02;
  std::optional<nn::AdapterConfig> adapter;  // decoder only
  std::optional<std::string> init_checkpoint;

  retrieval::EmbedderSpec embedder;
  retrieval::Metric metric = retrieval::Metric::Cosine;
  std::optional<std::string> cache_dir;
  std::size_t threads = 1;
  std::size_t max_new_tokens = 32;

  void validate() const;  // ConfigInvalid
};

nlohmann::json to_json(const TrainConfig& cfg);

// Context ids into `pool` per query.
struct ContextSet {
  const std::vector<Tokens>* pool = nullptr;
  std::vector<std::vector<std::size_t>> ids;

  std::vector<Tokens> contexts(std::size_t query) const;
};

struct Indices {
  const retrieval::RetrievalIndex* target = nullptr;
  const retrieval::RetrievalIndex* source = nullptr;
};

// DAICL/ICL_SUP: top_k over target; ICL_RAND: random_k over target; ICL_SOURCE: top_k
// over source skipping sentences identical to the query; others: none.
ContextSet select_contexts(Variant variant, std::span<const Tokens> queries, const Indices& indices,
                           std::size_t k, std::uint64_t seed,
                           const std::optional<std::string>& cache_dir = std::nullopt);

std::vector<prompt::EncoderInstance> assemble_encoder_batch(
    Variant variant, std::span<const prompt::SourceInput> batch, std::span<const std::size_t> ids,
    const ContextSet& contexts, const text::Vocabulary& vocab, const TrainConfig& cfg,
    std::mt19937_64& rng);

std::vector<prompt::DecoderInstance> assemble_decoder_batch(
    Variant variant, Task task, std::span<const prompt::SourceInput> batch,
    std::span<const std::size_t> ids, const ContextSet& contexts, const text::Vocabulary& vocab,
    const TrainConfig& cfg);

Tokens response_tokens(Task task, const prompt::SourceInput& input);
Tokens template_tokens(const prompt::PromptTemplate& tmpl);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_task = 0.0;
  double loss_lm = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_task = 0.0;
  double train_lm = 0.0;
  double dev_metric = 0.0;
};

struct TrainResult {
  nn::Checkpoint checkpoint;  // best model by dev metric
  text::Vocabulary vocab;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev = 0.0;
};

void write_history_jsonl(std::ostream& out, const TrainResult& r);

TrainResult train(Variant variant, ModelKind kind, const TaskData& data, const TrainConfig& cfg);

struct PretrainResult {
  nn::Model stage1;
  std::vector<StepRecord> stage1_steps;
  TrainResult stage2;
};

// Stage 1: LM-only on target text (MLM / causal, no contexts). Stage 2: NO_ICL fine-tuning.
PretrainResult adaptive_pretrain(ModelKind kind, const TaskData& data, const TrainConfig& cfg);

struct EvalResult {
  double metric = 0.0;  // accuracy (SA) or span F1 (NER)
  std::vector<int> predicted_classes;
  std::vector<corpus::SpanSet> predicted_spans;
};

// Evaluates unmasked inputs with the variant's context policy.
EvalResult evaluate(const TrainResult& trained, Variant variant, ModelKind kind, const TaskData& data,
                    std::span<const prompt::SourceInput> split, const TrainConfig& cfg);

text::Vocabulary build_vocabulary(const TaskData& data, ModelKind kind);

}  // namespace daicl::train
