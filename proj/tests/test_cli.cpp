#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "daicl/cli/commands.hpp"
#include "daicl/cli/remote.hpp"
#include "daicl/cli/run_spec.hpp"
#include "daicl/common.hpp"
#include "daicl/synth.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines _res.
#include <httplib.h>

#ifndef DAICL_SOURCE_DIR
#error "DAICL_SOURCE_DIR must point at the repository root"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace daicl;
using daicl::testing::fixture;
using daicl::testing::slurp;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("daicl-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p.string();
}

json ner_config(const fs::path& out) {
  const auto c = fixture("three_blocks.conll");
  return {{"task", "ner"},
          {"variant", "DAICL"},
          {"paths", {{"source_train", c}, {"source_dev", c}, {"target_unlabeled", c}, {"target_test", c}}},
          {"train", {{"epochs", 1}, {"dim", 8}, {"layers", 1}, {"heads", 2}, {"max_len", 48}}},
          {"embedder", {{"dim", 16}}},
          {"k", 2},
          {"output_dir", out.string()}};
}

class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

  explicit StubServer(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      int n;
      {
        std::lock_guard lock(mu_);
        n = calls_++;
        auth_.push_back(req.get_header_value("Authorization"));
        bodies_.push_back(req.body);
      }
      handler_(req, res, n);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    while (!server_.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  cli::CompletionEndpoint endpoint() const {
    cli::CompletionEndpoint ep;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port_);
    ep.timeout_s = 2.0;
    ep.max_retries = 3;
    ep.backoff_s = 0.01;
    return ep;
  }
  int calls() {
    std::lock_guard lock(mu_);
    return calls_;
  }
  std::vector<std::string> auth() {
    std::lock_guard lock(mu_);
    return auth_;
  }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  int calls_ = 0;
  std::vector<std::string> auth_, bodies_;
};

void reply(httplib::Response& res, const std::string& content) {
  const json j = {{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}};
  res.set_content(j.dump(), "application/json");
}

train::TaskData small_sa(std::size_t test = 12) {
  synth::SyntheticShiftSpec s;
  s.source_train = 40;
  s.source_dev = 0;
  s.target_unlabeled = 20;
  s.target_test = test;
  return train::sa_task_data(synth::gen_synthetic_shift(s));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("run spec parser is strict") {
  try {
    cli::parse_run_spec({{"trian", {}}});
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
    CHECK(std::string(e.what()).find("$.trian") != std::string::npos);
  }
  try {
    cli::parse_run_spec({{"train", {{"lr", "fast"}}}});
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("$.train.lr") != std::string::npos);
  }
  try {
    cli::parse_run_spec({{"variant", "BOGUS"}});
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("$.variant") != std::string::npos);
    CHECK(std::string(e.what()).find("BOGUS") != std::string::npos);
  }
  CHECK(code_of([] { cli::parse_run_spec({{"endpoint", {{"response_path", {"a", -1}}}}}); }) ==
        ErrorCode::ConfigInvalid);
  CHECK(code_of([] { cli::parse_run_spec({{"endpoint", {{"timeout_s", 0}}}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { cli::parse_run_spec({{"endpoint", {{"token", "x"}}}}); }) == ErrorCode::ConfigInvalid);

  const auto s = cli::parse_run_spec({{"variants", {"NO_ICL", "DAICL"}}, {"seeds", {3, 4}}, {"k", 7}});
  CHECK(s.variants.size() == 2);
  CHECK(s.train.seed == 3);
  CHECK(s.train.k == 7);
  CHECK(cli::parse_run_spec({{"train", {{"cache_dir", "/tmp/ctx"}}}}).train.cache_dir == "/tmp/ctx");
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  const auto bad = write_json(dir / "bad.json", {{"train", {{"lr", "x"}}}});
  CHECK(call({"train", "--config", bad}).code == cli::kExitValidation);
  CHECK(call({"train", "--variant", "NOPE", "--out", dir.string()}).code == cli::kExitValidation);
  CHECK(call({"no-such-command"}).code == cli::kExitValidation);
  CHECK(call({}).code == cli::kExitValidation);
  CHECK(call({"--help"}).code == cli::kExitOk);
}

TEST_CASE("gradcheck command") {
  const auto dir = scratch("gradcheck");
  const auto r = call({"gradcheck", "--out", dir.string()});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(json::parse(slurp((dir / "gradcheck.json").string())).size() >= 5);
}

TEST_CASE("synth is reproducible per seed") {
  const auto a = scratch("synth-a"), b = scratch("synth-b"), c = scratch("synth-c");
  REQUIRE(call({"synth", "--seed", "7", "--out", a.string()}).code == 0);
  REQUIRE(call({"--seed", "7", "synth", "--out", b.string()}).code == 0);
  REQUIRE(call({"synth", "--seed", "8", "--out", c.string()}).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    const auto name = e.path().filename();
    CHECK(slurp(e.path().string()) == slurp((b / name).string()));
  }
  CHECK(files >= 4);
  CHECK(slurp((a / "source_train.jsonl").string()) != slurp((c / "source_train.jsonl").string()));
}

TEST_CASE("NER pipeline through the command line") {
  const auto dir = scratch("ner");
  const auto cfg = write_json(dir / "run.json", ner_config(dir));

  auto r = call({"ingest", "--config", cfg, "--input", fixture("three_blocks.conll")});
  REQUIRE(r.code == 0);
  const auto report = json::parse(slurp((dir / "three_blocks.report.json").string()));
  CHECK(report["sentences"] == 3);
  CHECK(report["spans"] == 4);
  CHECK(report["docstart_dropped"] == 1);

  r = call({"ingest", "--config", cfg, "--input", fixture("reviews.jsonl"), "--format", "reviews"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(slurp((dir / "reviews.report.json").string()))["examples"] == 3);

  CHECK(call({"retrieve", "--config", cfg, "--query", "Peter"}).code == cli::kExitRuntime);
  REQUIRE(call({"index", "--config", cfg}).code == 0);
  CHECK(fs::exists(dir / "index-target.bin"));
  r = call({"retrieve", "--config", cfg, "--query", "Peter Blackburn", "--k", "1"});
  REQUIRE(r.code == 0);
  const auto hit = json::parse(r.out);
  CHECK(hit["hits"].size() == 1);
  CHECK(hit["hits"][0]["text"] == "Peter Blackburn");

  r = call({"prompts", "--config", cfg, "--limit", "2"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["count"] == 2);
  const auto txt = slurp((dir / "prompts.txt").string());
  CHECK(txt.find("-----") != std::string::npos);

  r = call({"train", "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(fs::exists(dir / "history.jsonl"));
  r = call({"eval", "--config", cfg});
  REQUIRE(r.code == 0);
  const auto ev = json::parse(slurp((dir / "eval.json").string()));
  CHECK(ev["n"] == 3);
  CHECK(ev["metric"].get<double>() >= 0.0);
  CHECK(ev["metric"].get<double>() <= 1.0);
  CHECK(ev["variant"] == "DAICL");
}

TEST_CASE("smoke matrix matches the frozen golden") {
  const auto dir = scratch("smoke");
  const std::string cfg = std::string(DAICL_SOURCE_DIR) + "/configs/smoke.json";
  const auto r = call({"matrix", "--config", cfg, "--out", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(slurp((dir / "matrix.csv").string()) == slurp(fixture("golden/smoke_matrix.csv")));
  CHECK(r.out.find("DAICL") != std::string::npos);
  const auto j = json::parse(slurp((dir / "matrix.json").string()));
  CHECK(j["cells"].size() == 6);
}

TEST_CASE("remote completion against a local stub") {
  SECTION("plain reply") {
    StubServer s([](const auto&, auto& res, int) { reply(res, "None."); });
    CHECK(cli::complete_remote("hello", s.endpoint()) == "None.");
    const auto body = json::parse(s.bodies().at(0));
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "hello");
    CHECK(body["model"] == "gpt-3.5-turbo");
  }
  SECTION("transient failures are retried") {
    StubServer s([](const auto&, auto& res, int n) {
      if (n < 2) {
        res.status = n == 0 ? 503 : 429;
        return;
      }
      reply(res, "positive");
    });
    CHECK(cli::complete_remote("x", s.endpoint()) == "positive");
    CHECK(s.calls() == 3);
  }
  SECTION("client errors are not retried") {
    StubServer s([](const auto&, auto& res, int) { res.status = 401; });
    CHECK(code_of([&] { cli::complete_remote("x", s.endpoint()); }) == ErrorCode::HttpError);
    CHECK(s.calls() == 1);
  }
  SECTION("retries are bounded") {
    StubServer s([](const auto&, auto& res, int) { res.status = 500; });
    auto ep = s.endpoint();
    ep.max_retries = 2;
    CHECK(code_of([&] { cli::complete_remote("x", ep); }) == ErrorCode::HttpError);
    CHECK(s.calls() == 3);
  }
  SECTION("malformed body") {
    StubServer s([](const auto&, auto& res, int n) {
      res.set_content(n == 0 ? R"({"choices": []})" : "not json", "application/json");
    });
    CHECK(code_of([&] { cli::complete_remote("x", s.endpoint()); }) == ErrorCode::MalformedResponse);
    CHECK(code_of([&] { cli::complete_remote("x", s.endpoint()); }) == ErrorCode::MalformedResponse);
  }
  SECTION("custom response path") {
    StubServer s([](const auto&, auto& res, int) { res.set_content(R"({"output": {"text": "ok"}})", "application/json"); });
    auto ep = s.endpoint();
    ep.response_path = json::array({"output", "text"});
    CHECK(cli::complete_remote("x", ep) == "ok");
  }
  SECTION("slow server times out") {
    StubServer s([](const auto&, auto& res, int) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      reply(res, "late");
    });
    auto ep = s.endpoint();
    ep.timeout_s = 0.1;
    ep.max_retries = 0;
    CHECK(code_of([&] { cli::complete_remote("x", ep); }) == ErrorCode::Timeout);
  }
  SECTION("bearer token comes from the environment") {
    StubServer s([](const auto&, auto& res, int) { reply(res, "None."); });
    ::unsetenv("DAICL_TEST_TOKEN");
    auto ep = s.endpoint();
    ep.token_env = "DAICL_TEST_TOKEN";
    cli::complete_remote("x", ep);
    ::setenv("DAICL_TEST_TOKEN", "tok-123", 1);
    cli::complete_remote("x", ep);
    ::unsetenv("DAICL_TEST_TOKEN");
    const auto auth = s.auth();
    REQUIRE(auth.size() == 2);
    CHECK(auth[0].empty());
    CHECK(auth[1] == "Bearer tok-123");
  }
}

TEST_CASE("unreachable endpoint") {
  cli::CompletionEndpoint ep;
  ep.base_url = "http://127.0.0.1:1";
  ep.timeout_s = 0.2;
  ep.max_retries = 1;
  ep.backoff_s = 0.01;
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(code_of([&] { cli::complete_remote("x", ep); }) == ErrorCode::Timeout);
  CHECK(std::chrono::steady_clock::now() - t0 >= std::chrono::milliseconds(10));

  const auto dir = scratch("infer-down");
  json cfg = {{"task", "sa"},
              {"synthetic", {{"source_train", 20}, {"source_dev", 0}, {"target_unlabeled", 10}, {"target_test", 4}}},
              {"endpoint", {{"base_url", ep.base_url}, {"timeout_s", 0.2}, {"max_retries", 1}, {"backoff_s", 0.01}}},
              {"output_dir", dir.string()}};
  const auto path = write_json(dir / "run.json", cfg);
  const auto r = call({"infer", "--config", path, "--mode", "none"});
  CHECK(r.code == cli::kExitRuntime);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("inference against the stub grades entity lists") {
  cli::RunSpec spec = cli::parse_run_spec(ner_config(scratch("ner-infer")));
  const auto data = cli::load_task_data(spec);
  StubServer s([](const auto&, auto& res, int) { reply(res, "Peter Blackburn, Los Angeles"); });
  const auto ep = s.endpoint();
  const auto rep = cli::inference_eval(
      Task::Ner, prompt::DemoMode::Retrieved, 2, data, [&](const std::string& p) { return cli::complete_remote(p, ep); },
      spec.train);
  // Gold: {EU, German}, {Peter Blackburn}, {Los Angeles}; each reply names both people and place.
  CHECK(rep.summary["tp"] == 2);
  CHECK(rep.summary["fp"] == 4);
  CHECK(rep.summary["fn"] == 2);
  CHECK(rep.summary["f1"].get<double>() == Catch::Approx(0.4).epsilon(1e-12));
  CHECK(rep.retrieval_calls == 3);

  StubServer none([](const auto&, auto& res, int) { reply(res, "None."); });
  const auto ep2 = none.endpoint();
  const auto empty = cli::inference_eval(
      Task::Ner, prompt::DemoMode::None, 0, data, [&](const std::string& p) { return cli::complete_remote(p, ep2); },
      spec.train);
  CHECK(empty.summary["tp"] == 0);
  CHECK(empty.summary["fp"] == 0);
  CHECK(empty.summary["fn"] == 4);
  CHECK(empty.retrieval_calls == 0);
  for (const auto& row : empty.trace) CHECK(row["entities"].empty());
}

TEST_CASE("inference demonstrations and trace consistency") {
  const auto data = small_sa(12);
  train::TrainConfig cfg;
  cfg.embedder.dim = 32;
  auto echo = [](const std::string& p) {
    return p.size() % 3 == 0 ? std::string("positive") : p.size() % 3 == 1 ? std::string("negative") : std::string("maybe");
  };

  const auto none = cli::inference_eval(Task::Sa, prompt::DemoMode::None, 5, data, echo, cfg);
  CHECK(none.retrieval_calls == 0);
  for (const auto& row : none.trace) CHECK(row["demos"] == 0);

  const auto ret = cli::inference_eval(Task::Sa, prompt::DemoMode::Retrieved, 5, data, echo, cfg);
  CHECK(ret.retrieval_calls == 12);
  std::size_t correct = 0, flagged = 0;
  for (std::size_t i = 0; i < ret.trace.size(); ++i) {
    const auto& row = ret.trace[i];
    CHECK(row["index"] == i);
    CHECK(row["demos"] == 5);
    const auto p = row["prompt"].get<std::string>();
    std::size_t answers = 0;
    for (auto pos = p.find("Sentiment:"); pos != std::string::npos; pos = p.find("Sentiment:", pos + 1)) ++answers;
    CHECK(answers == 6);
    correct += row["correct"].get<bool>() ? 1 : 0;
    flagged += row["flagged"].get<bool>() ? 1 : 0;
  }
  CHECK(ret.summary["correct"] == correct);
  CHECK(ret.summary["flagged"] == flagged);
  CHECK(ret.summary["accuracy"].get<double>() == static_cast<double>(correct) / 12.0);

  const auto par = cli::inference_eval(Task::Sa, prompt::DemoMode::Retrieved, 5, data, echo, cfg, 4);
  CHECK(par.trace == ret.trace);

  const auto lim = cli::inference_eval(Task::Sa, prompt::DemoMode::Random, 3, data, echo, cfg, 2, 5);
  CHECK(lim.trace.size() == 5);
  CHECK(lim.summary["n"] == 5);
  const auto again = cli::inference_eval(Task::Sa, prompt::DemoMode::Random, 3, data, echo, cfg, 1, 5);
  CHECK(lim.trace == again.trace);
}

TEST_CASE("concurrent requests keep input order over HTTP") {
  const auto data = small_sa(16);
  train::TrainConfig cfg;
  cfg.embedder.dim = 32;
  std::atomic<int> in_flight{0}, peak{0};
  StubServer s([&](const httplib::Request& req, httplib::Response& res, int) {
    const int now = ++in_flight;
    for (int p = peak; now > p && !peak.compare_exchange_weak(p, now);) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    const auto body = json::parse(req.body);
    reply(res, body["messages"][0]["content"].get<std::string>().size() % 2 ? "positive" : "negative");
  });
  const auto ep = s.endpoint();
  auto remote = [&](const std::string& p) { return cli::complete_remote(p, ep); };
  const auto serial = cli::inference_eval(Task::Sa, prompt::DemoMode::Random, 2, data, remote, cfg, 1);
  const auto parallel = cli::inference_eval(Task::Sa, prompt::DemoMode::Random, 2, data, remote, cfg, 4);
  CHECK(serial.trace == parallel.trace);
  CHECK(s.calls() == 32);
}

TEST_CASE("infer command writes trace and summary") {
  StubServer s([](const auto&, auto& res, int) { reply(res, "The sentiment is positive."); });
  const auto dir = scratch("infer");
  const auto ep = s.endpoint();
  json cfg = {{"task", "sa"},
              {"synthetic", {{"source_train", 30}, {"source_dev", 0}, {"target_unlabeled", 10}, {"target_test", 6}}},
              {"endpoint", {{"base_url", ep.base_url}, {"backoff_s", 0.01}}},
              {"inference", {{"mode", "retrieved"}, {"k", 3}}},
              {"output_dir", dir.string()}};
  const auto path = write_json(dir / "run.json", cfg);
  const auto r = call({"infer", "--config", path, "--concurrency", "3"});
  REQUIRE(r.code == 0);
  const auto summary = json::parse(slurp((dir / "inference_summary.json").string()));
  CHECK(summary["n"] == 6);
  CHECK(summary["k"] == 3);
  CHECK(summary["retrieval_calls"] == 6);
  std::istringstream trace(slurp((dir / "inference_trace.jsonl").string()));
  std::size_t rows = 0, correct = 0;
  for (std::string line; std::getline(trace, line);) {
    const auto row = json::parse(line);
    CHECK(row["prediction"] == "positive");
    correct += row["correct"].get<bool>() ? 1 : 0;
    ++rows;
  }
  CHECK(rows == 6);
  CHECK(summary["correct"] == correct);
}
