// Local chat-completion stub: answers every POST with a fixed reply.
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

int main(int argc, char** argv) {
  CLI::App app{"Offline chat-completion stub", "completion_stub"};
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string reply = "None.";
  int status = 200;
  std::string path = "/v1/chat/completions";
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port, "0 picks a free port")->capture_default_str();
  app.add_option("--reply", reply)->capture_default_str();
  app.add_option("--status", status, "HTTP status to return")->capture_default_str();
  app.add_option("--path", path)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  httplib::Server server;
  server.Post(path, [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("messages")) {
      res.status = 400;
      return;
    }
    res.status = status;
    const nlohmann::json out = {{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply}}}}}}};
    res.set_content(out.dump(), "application/json");
  });
  if (port == 0) port = server.bind_to_any_port(host);
  else if (!server.bind_to_port(host, port)) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return 2;
  }
  std::cout << "listening on http://" << host << ":" << port << std::endl;
  server.listen_after_bind();
  return 0;
}
