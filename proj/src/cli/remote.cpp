#include "daicl/cli/remote.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <regex>
#include <thread>

#include <httplib.h>

#include "daicl/common.hpp"
#include "daicl/corpus.hpp"
#include "daicl/metrics.hpp"
#include "daicl/retrieval.hpp"
#include "daicl/text.hpp"

namespace daicl::cli {

namespace {

using nlohmann::json;

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, no trailing slash
};

Url parse_url(const std::string& base) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(base, m, re)) throw Error(ErrorCode::ConfigInvalid, "bad base_url '" + base + "'");
  Url u{m[1].str(), m[2].str()};
  while (!u.prefix.empty() && u.prefix.back() == '/') u.prefix.pop_back();
  return u;
}

std::string extract_reply(const std::string& body, const json& path) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw Error(ErrorCode::MalformedResponse, "response body is not JSON");
  }
  const json* cur = &j;
  for (const auto& step : path) {
    if (step.is_string() && cur->is_object() && cur->contains(step.get<std::string>())) {
      cur = &(*cur)[step.get<std::string>()];
    } else if (step.is_number_integer() && step.get<long long>() >= 0 && cur->is_array() &&
               static_cast<std::size_t>(step.get<long long>()) < cur->size()) {
      cur = &(*cur)[static_cast<std::size_t>(step.get<long long>())];
    } else {
      throw Error(ErrorCode::MalformedResponse, "response missing " + path.dump());
    }
  }
  if (!cur->is_string()) throw Error(ErrorCode::MalformedResponse, "reply at " + path.dump() + " is not a string");
  return cur->get<std::string>();
}

bool transient(int status) { return status == 429 || status >= 500; }

std::string sentence_text(const prompt::SourceInput& s) { return text::join(s.tokens); }

corpus::SpanSet gold_spans(const prompt::SourceInput& s) {
  std::vector<std::string> tags;
  tags.reserve(s.tags.size());
  for (int t : s.tags) tags.emplace_back(corpus::id_to_bio(t));
  return corpus::tags_to_spans(tags);
}

std::string gold_label(Task task, const prompt::SourceInput& s) {
  if (task == Task::Sa) return std::string(corpus::to_string(static_cast<corpus::Sentiment>(s.label_class)));
  const auto entities = metrics::spans_to_entities(gold_spans(s), s.tokens);
  return prompt::join_entities(entities);
}

json spans_json(const corpus::SpanSet& spans) {
  json a = json::array();
  for (const auto& sp : spans) a.push_back({sp.start, sp.end});
  return a;
}

}  // namespace

std::string complete_remote(const std::string& prompt, const CompletionEndpoint& ep) {
  const Url url = parse_url(ep.base_url);
  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(ep.timeout_s);
  const auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* token = std::getenv(ep.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const json body = {{"model", ep.model},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", 0}};
  const std::string payload = body.dump();
  const std::string path = url.prefix + ep.path;

  std::string last_error;
  ErrorCode last_code = ErrorCode::HttpError;
  double wait = ep.backoff_s;
  for (std::size_t attempt = 0; attempt <= ep.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      wait *= 2.0;
    }
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      // No response at all (refused, unreachable, timed out) counts as a timeout.
      last_code = ErrorCode::Timeout;
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return extract_reply(res->body, ep.response_path);
    last_code = ErrorCode::HttpError;
    last_error = "status " + std::to_string(res->status);
    if (!transient(res->status)) break;
  }
  throw Error(last_code, ep.base_url + path + ": " + last_error);
}

InferenceReport inference_eval(Task task, prompt::DemoMode mode, std::size_t k,
                               const train::TaskData& data, const CompletionFn& complete,
                               const train::TrainConfig& cfg, std::size_t concurrency,
                               std::size_t limit) {
  if (data.target_test.empty()) throw Error(ErrorCode::EmptyCorpus, "no test examples");
  if (mode != prompt::DemoMode::None) {
    if (k == 0) throw Error(ErrorCode::ConfigInvalid, "k must be >= 1 with demonstrations");
    if (data.source_train.empty()) throw Error(ErrorCode::EmptyCorpus, "no source demonstrations");
  }
  const std::size_t n = limit == 0 ? data.target_test.size() : std::min(limit, data.target_test.size());

  std::vector<prompt::Demo> pool;
  pool.reserve(data.source_train.size());
  for (const auto& s : data.source_train) pool.push_back({sentence_text(s), gold_label(task, s)});

  std::optional<retrieval::RetrievalIndex> index;
  std::optional<retrieval::Embedder> embedder;
  if (mode == prompt::DemoMode::Retrieved) {
    std::vector<text::Tokens> corpus;
    for (const auto& s : data.source_train) corpus.push_back(s.tokens);
    index = retrieval::build_index(corpus, cfg.embedder, cfg.metric);
    embedder.emplace(cfg.embedder);
  }

  // Demonstrations are chosen up front so that the trace does not depend on scheduling.
  InferenceReport report;
  std::vector<std::vector<prompt::Demo>> demos(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = data.target_test[i].tokens;
    if (mode == prompt::DemoMode::Random) {
      for (auto id : retrieval::random_k(pool.size(), k, derive_seed(cfg.seed, i))) demos[i].push_back(pool[id]);
    } else if (mode == prompt::DemoMode::Retrieved) {
      const auto hits = retrieval::top_k(retrieval::make_query(q, *index, *embedder), *index, k);
      ++report.retrieval_calls;
      for (auto it = hits.rbegin(); it != hits.rend(); ++it) demos[i].push_back(pool[it->corpus_id]);
    }
  }

  std::vector<std::string> prompts(n), replies(n);
  std::vector<std::exception_ptr> failures(n);
  for (std::size_t i = 0; i < n; ++i) {
    prompts[i] = prompt::render_inference_prompt(sentence_text(data.target_test[i]), demos[i], task, mode);
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        replies[i] = complete(prompts[i]);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> threads;
    const std::size_t workers = std::max<std::size_t>(1, std::min(concurrency, n));
    for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(worker);
    worker();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (failures[i]) std::rethrow_exception(failures[i]);
  }

  std::size_t correct = 0, tp = 0, fp = 0, fn = 0, flagged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = data.target_test[i];
    json row = {{"index", i}, {"prompt", prompts[i]}, {"response", replies[i]}, {"demos", demos[i].size()}};
    if (task == Task::Sa) {
      const auto gold = static_cast<corpus::Sentiment>(ex.label_class);
      bool ok = false;
      try {
        const auto pred = prompt::parse_sentiment_response(replies[i]);
        row["prediction"] = std::string(corpus::to_string(pred));
        row["flagged"] = false;
        ok = pred == gold;
      } catch (const Error&) {
        row["prediction"] = nullptr;
        row["flagged"] = true;
        ++flagged;
      }
      row["gold"] = std::string(corpus::to_string(gold));
      row["correct"] = ok;
      correct += ok ? 1 : 0;
    } else {
      const auto parsed = prompt::parse_entity_response(replies[i]);
      const auto pred = metrics::entities_to_spans(parsed, ex.tokens);
      const auto gold = gold_spans(ex);
      std::size_t hit = 0;
      for (const auto& sp : pred) hit += gold.count(sp);
      tp += hit;
      fp += pred.size() - hit;
      fn += gold.size() - hit;
      flagged += parsed.flagged ? 1 : 0;
      row["entities"] = parsed.entities;
      row["flagged"] = parsed.flagged;
      row["prediction"] = spans_json(pred);
      row["gold"] = spans_json(gold);
    }
    report.trace.push_back(std::move(row));
  }

  report.summary = {{"task", std::string(to_string(task))},
                    {"mode", prompt::to_string(mode)},
                    {"k", mode == prompt::DemoMode::None ? 0 : k},
                    {"n", n},
                    {"flagged", flagged},
                    {"retrieval_calls", report.retrieval_calls}};
  if (task == Task::Sa) {
    report.summary["correct"] = correct;
    report.summary["accuracy"] = static_cast<double>(correct) / static_cast<double>(n);
  } else {
    const auto r = metrics::span_report(tp, fp, fn);
    report.summary["tp"] = r.tp;
    report.summary["fp"] = r.fp;
    report.summary["fn"] = r.fn;
    report.summary["precision"] = r.precision;
    report.summary["recall"] = r.recall;
    report.summary["f1"] = r.f1;
  }
  return report;
}

}  // namespace daicl::cli
