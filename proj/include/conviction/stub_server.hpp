#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace httplib {
class Server;
}

namespace conviction {

/// Local chat-completions endpoint for wire tests. Serves
/// POST /v1/chat/completions and GET /v1/models on 127.0.0.1.
struct StubOptions {
  int port = 0;  // 0 picks a free port
  /// Answer every k-th chat request with 429 (0 disables).
  int rate_limit_every = 0;
  /// Answer the first m chat requests with 503.
  int fail_first = 0;
  /// When non-empty, requests must carry "Authorization: Bearer <key>".
  std::string api_key;
  /// Reply text for a request body; default_stub_reply when unset.
  std::function<std::string(const nlohmann::json&)> reply;
};

/// Sticks on follow-up turns ("Final answer: 1") and picks the first label
/// on initial turns.
std::string default_stub_reply(const nlohmann::json& body);

class StubServer {
 public:
  explicit StubServer(StubOptions options = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  int port() const { return port_; }
  std::string base_url() const;  // http://127.0.0.1:<port>/v1

  /// Bodies of accepted chat requests, in arrival order.
  std::vector<nlohmann::json> accepted_bodies() const;
  std::uint64_t chat_requests() const { return chat_requests_.load(); }
  std::uint64_t rejected() const { return rejected_.load(); }

  void stop();

 private:
  StubOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> bodies_;
  std::atomic<std::uint64_t> chat_requests_{0};
  std::atomic<std::uint64_t> rejected_{0};
};

}  // namespace conviction
