#include "conviction/stub_server.hpp"

#include <stdexcept>

#include <httplib.h>

namespace conviction {

std::string default_stub_reply(const nlohmann::json& body) {
  const auto& messages = body.at("messages");
  const auto last = messages.empty() ? std::string()
                                     : messages.back().at("content").get<std::string>();
  if (last.find("Final answer: 1") != std::string::npos)
    return "I will keep my answer.\nFinal answer: 1";
  return "Final answer: A";
}

StubServer::StubServer(StubOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  if (!options_.reply) options_.reply = default_stub_reply;

  auto authorized = [this](const httplib::Request& req) {
    return options_.api_key.empty() ||
           req.get_header_value("Authorization") == "Bearer " + options_.api_key;
  };

  server_->Get("/v1/models", [this, authorized](const httplib::Request& req,
                                                 httplib::Response& res) {
    if (!authorized(req)) {
      res.status = 401;
      return;
    }
    res.set_content(R"({"object":"list","data":[{"id":"stub-model","object":"model"}]})",
                    "application/json");
  });

  server_->Post("/v1/chat/completions", [this, authorized](const httplib::Request& req,
                                                           httplib::Response& res) {
    const auto n = ++chat_requests_;
    if (!authorized(req)) {
      res.status = 401;
      return;
    }
    if (n <= static_cast<std::uint64_t>(options_.fail_first)) {
      ++rejected_;
      res.status = 503;
      res.set_content(R"({"error":"warming up"})", "application/json");
      return;
    }
    if (options_.rate_limit_every > 0 &&
        n % static_cast<std::uint64_t>(options_.rate_limit_every) == 0) {
      ++rejected_;
      res.status = 429;
      res.set_header("Retry-After", "0");
      res.set_content(R"({"error":"rate limited"})", "application/json");
      return;
    }
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("messages") || !body.contains("model")) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    const auto text = options_.reply(body);
    {
      std::lock_guard lock(mutex_);
      bodies_.push_back(body);
    }
    nlohmann::json out = {
        {"id", "stub-" + std::to_string(n)},
        {"object", "chat.completion"},
        {"model", body.at("model")},
        {"choices",
         {{{"index", 0},
           {"message", {{"role", "assistant"}, {"content", text}}},
           {"finish_reason", "stop"}}}}};
    res.set_content(out.dump(), "application/json");
  });

  port_ = options_.port > 0 ? (server_->bind_to_port("127.0.0.1", options_.port)
                                   ? options_.port
                                   : -1)
                            : server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("stub server could not bind a port");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

StubServer::~StubServer() { stop(); }

void StubServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(port_) + "/v1";
}

std::vector<nlohmann::json> StubServer::accepted_bodies() const {
  std::lock_guard lock(mutex_);
  return bodies_;
}

}  // namespace conviction
