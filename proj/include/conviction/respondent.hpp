#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/corpus.hpp"
#include "conviction/message.hpp"

namespace conviction {

struct GenerationParams {
  double temperature = 0.7;
  int max_output_tokens = 512;
  std::string model_name;
  nlohmann::json extra = nlohmann::json::object();  // merged into the body

  /// Throws std::invalid_argument on a non-finite temperature or a
  /// non-positive token budget.
  void validate() const;
};

enum class ErrorKind {
  timeout,
  transport,
  rate_limited,
  server_error,
  http_status,
  malformed_body,
  script_exhausted,
};

std::string_view to_string(ErrorKind k);

class RespondentError : public std::runtime_error {
 public:
  RespondentError(ErrorKind kind, const std::string& what, int status = 0)
      : std::runtime_error(what), kind_(kind), status_(status) {}

  ErrorKind kind() const { return kind_; }
  int status() const { return status_; }
  /// Timeouts, transport failures, 429 and 5xx are worth retrying.
  bool retryable() const {
    return kind_ == ErrorKind::timeout || kind_ == ErrorKind::transport ||
           kind_ == ErrorKind::rate_limited || kind_ == ErrorKind::server_error;
  }

 private:
  ErrorKind kind_;
  int status_;
};

enum class TurnKind { initial, stick_or_switch, flexibility };

/// What the harness knows about the turn. Remote endpoints never see it;
/// simulated agents use it to act on the ground truth.
struct TurnContext {
  TurnKind kind = TurnKind::initial;
  std::string target_token;       // presented label of the target
  std::string alternative_token;  // presented label of the challenger
  bool suggestion_is_truth = false;
  // Identifies the stochastic draw for this call. Turn 1 shares its key
  // across conditions that render the same prompt.
  std::uint64_t draw_key = 0;
  int turn = 1;
  std::string record_id;
  Condition condition = Condition::single_shot_full;
};

class Respondent {
 public:
  virtual ~Respondent() = default;

  /// Returns the reply text or throws RespondentError.
  virtual std::string complete(const std::vector<Message>& messages,
                               const GenerationParams& params,
                               const TurnContext& context) = 0;
  /// Whether identical inputs always produce identical replies.
  virtual bool deterministic() const = 0;
  virtual std::string describe() const = 0;
};

/// Throws std::invalid_argument unless messages are non-empty, an optional
/// system message leads, and user/assistant turns alternate starting with
/// user.
void check_message_order(const std::vector<Message>& messages);

/// Replays canned replies in order, shared across all calls.
class ScriptedRespondent final : public Respondent {
 public:
  explicit ScriptedRespondent(std::vector<std::string> replies);

  std::string complete(const std::vector<Message>& messages,
                       const GenerationParams& params,
                       const TurnContext& context) override;
  bool deterministic() const override { return true; }
  std::string describe() const override { return "scripted"; }
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::deque<std::string> replies_;
};

/// Replies computed by a pure function of the turn context; thread-safe when
/// the function is.
class PolicyRespondent final : public Respondent {
 public:
  using Policy = std::function<std::string(const TurnContext&)>;

  PolicyRespondent(std::string name, Policy policy)
      : name_(std::move(name)), policy_(std::move(policy)) {}

  std::string complete(const std::vector<Message>& messages,
                       const GenerationParams& params,
                       const TurnContext& context) override;
  bool deterministic() const override { return true; }
  std::string describe() const override { return name_; }

 private:
  std::string name_;
  Policy policy_;
};

struct BernoulliAgentSpec {
  double q_init = 1.0;
  double p_stick = 1.0;
  double q_flex_correct = 1.0;
  double q_flex_incorrect = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  static BernoulliAgentSpec ideal();
  static BernoulliAgentSpec blind_switcher(double p = 0.5);
  static BernoulliAgentSpec always_switch();
};

/// One stochastic reply. `draw_key` identifies the call (conversation and
/// turn); the reply is a pure function of (spec, kind, tokens, draw_key).
std::string bernoulli_reply(const BernoulliAgentSpec& spec, TurnKind kind,
                            std::string_view target_token,
                            std::string_view alternative_token,
                            bool suggestion_is_truth, std::uint64_t draw_key);

/// Formats a reply the parser reads as `token`.
std::string format_answer(std::string_view token);

class BernoulliRespondent final : public Respondent {
 public:
  explicit BernoulliRespondent(BernoulliAgentSpec spec);

  std::string complete(const std::vector<Message>& messages,
                       const GenerationParams& params,
                       const TurnContext& context) override;
  bool deterministic() const override { return true; }
  std::string describe() const override;
  const BernoulliAgentSpec& spec() const { return spec_; }

 private:
  BernoulliAgentSpec spec_;
};

struct RemoteOptions {
  std::string base_url;  // e.g. http://127.0.0.1:8080/v1
  std::chrono::milliseconds timeout{120'000};
  std::ptrdiff_t max_in_flight = 8;
  std::string api_key;  // sent as a bearer token when non-empty
};

/// Reads CONVICTION_API_KEY; empty when unset.
std::string api_key_from_env();

/// Chat-completions client: POST {base_url}/chat/completions.
class RemoteRespondent final : public Respondent {
 public:
  explicit RemoteRespondent(RemoteOptions options);

  std::string complete(const std::vector<Message>& messages,
                       const GenerationParams& params,
                       const TurnContext& context) override;
  bool deterministic() const override { return false; }
  std::string describe() const override { return "remote " + options_.base_url; }

  /// GET {base_url}/models; throws RespondentError when the server cannot be
  /// reached or rejects the credentials.
  void ping() const;

  std::uint64_t requests_sent() const { return requests_.load(); }

 private:
  RemoteOptions options_;
  std::string origin_;  // scheme://host:port
  std::string path_;    // path prefix, no trailing slash
  std::counting_semaphore<> in_flight_;
  std::atomic<std::uint64_t> requests_{0};
};

/// Request body for the wire protocol. Keys of `extra` overwrite defaults.
nlohmann::json chat_request_body(const std::vector<Message>& messages,
                                 const GenerationParams& params);
/// Extracts choices[0].message.content or throws malformed_body.
std::string chat_response_content(std::string_view body);

}  // namespace conviction
