#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "daicl/prompt.hpp"
#include "daicl/train.hpp"

namespace daicl::cli {

struct CompletionEndpoint {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string token_env = "DAICL_API_TOKEN";
  double timeout_s = 30.0;
  std::size_t max_retries = 3;
  double backoff_s = 0.5;
  // JSON path to the reply text inside the response body.
  nlohmann::json response_path = nlohmann::json::array({"choices", 0, "message", "content"});
};

// POSTs {"model", "messages": [{"role": "user", "content": prompt}]} and returns the reply.
// Transient failures (connection errors, 429, 5xx) are retried with exponential backoff.
std::string complete_remote(const std::string& prompt, const CompletionEndpoint& ep);

struct InferenceReport {
  nlohmann::json trace = nlohmann::json::array();  // one object per query, input order
  nlohmann::json summary;
  std::size_t retrieval_calls = 0;
};

using CompletionFn = std::function<std::string(const std::string&)>;

// Few-shot demonstrations from source data (none / random / retrieved), graded on the
// test split.
InferenceReport inference_eval(Task task, prompt::DemoMode mode, std::size_t k,
                               const train::TaskData& data, const CompletionFn& complete,
                               const train::TrainConfig& cfg, std::size_t concurrency = 1,
                               std::size_t limit = 0);

}  // namespace daicl::cli
