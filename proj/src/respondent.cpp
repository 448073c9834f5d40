#include "conviction/respondent.hpp"

#include <cmath>
#include <cstdlib>

#include <httplib.h>

#include "conviction/random.hpp"

namespace conviction {

void GenerationParams::validate() const {
  if (!std::isfinite(temperature) || temperature < 0)
    throw std::invalid_argument("temperature must be finite and >= 0");
  if (max_output_tokens < 1)
    throw std::invalid_argument("max_output_tokens must be >= 1");
  if (!extra.is_object())
    throw std::invalid_argument("extra generation fields must be an object");
}

std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::transport: return "transport";
    case ErrorKind::rate_limited: return "rate_limited";
    case ErrorKind::server_error: return "server_error";
    case ErrorKind::http_status: return "http_status";
    case ErrorKind::malformed_body: return "malformed_body";
    case ErrorKind::script_exhausted: return "script_exhausted";
  }
  return "?";
}

void check_message_order(const std::vector<Message>& messages) {
  if (messages.empty()) throw std::invalid_argument("no messages to send");
  std::size_t i = 0;
  if (messages[0].role == Role::system) ++i;
  if (i == messages.size())
    throw std::invalid_argument("a system message alone is not a conversation");
  for (Role expected = Role::user; i < messages.size(); ++i) {
    if (messages[i].role != expected)
      throw std::invalid_argument("message " + std::to_string(i) + " has role " +
                                  std::string(to_string(messages[i].role)) +
                                  ", expected " + std::string(to_string(expected)));
    if (messages[i].content.empty())
      throw std::invalid_argument("message " + std::to_string(i) + " is empty");
    expected = expected == Role::user ? Role::assistant : Role::user;
  }
}

ScriptedRespondent::ScriptedRespondent(std::vector<std::string> replies)
    : replies_(replies.begin(), replies.end()) {}

std::string ScriptedRespondent::complete(const std::vector<Message>& messages,
                                         const GenerationParams&,
                                         const TurnContext&) {
  check_message_order(messages);
  std::lock_guard lock(mu_);
  if (replies_.empty())
    throw RespondentError(ErrorKind::script_exhausted, "script exhausted");
  auto reply = std::move(replies_.front());
  replies_.pop_front();
  return reply;
}

std::size_t ScriptedRespondent::remaining() const {
  std::lock_guard lock(mu_);
  return replies_.size();
}

std::string PolicyRespondent::complete(const std::vector<Message>& messages,
                                       const GenerationParams&,
                                       const TurnContext& context) {
  check_message_order(messages);
  return policy_(context);
}

void BernoulliAgentSpec::validate() const {
  for (double p : {q_init, p_stick, q_flex_correct, q_flex_incorrect})
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("agent probabilities must lie in [0, 1]");
}

BernoulliAgentSpec BernoulliAgentSpec::ideal() { return {1.0, 1.0, 1.0, 0.0, 0}; }

BernoulliAgentSpec BernoulliAgentSpec::blind_switcher(double p) {
  return {1.0, 1.0, p, p, 0};
}

BernoulliAgentSpec BernoulliAgentSpec::always_switch() {
  return {1.0, 0.0, 1.0, 1.0, 0};
}

std::string format_answer(std::string_view token) {
  return "Final answer: " + std::string(token);
}

std::string bernoulli_reply(const BernoulliAgentSpec& spec, TurnKind kind,
                            std::string_view target_token,
                            std::string_view alternative_token,
                            bool suggestion_is_truth, std::uint64_t draw_key) {
  const double u = keyed_unit(derive_seed(spec.seed, draw_key));
  bool hold = true;
  switch (kind) {
    case TurnKind::initial: hold = u < spec.q_init; break;
    case TurnKind::stick_or_switch: hold = u < spec.p_stick; break;
    case TurnKind::flexibility:
      hold = !(u < (suggestion_is_truth ? spec.q_flex_correct
                                        : spec.q_flex_incorrect));
      break;
  }
  return format_answer(hold ? target_token : alternative_token);
}

BernoulliRespondent::BernoulliRespondent(BernoulliAgentSpec spec)
    : spec_(spec) {
  spec_.validate();
}

std::string BernoulliRespondent::complete(const std::vector<Message>& messages,
                                          const GenerationParams&,
                                          const TurnContext& ctx) {
  check_message_order(messages);
  return bernoulli_reply(spec_, ctx.kind, ctx.target_token,
                         ctx.alternative_token, ctx.suggestion_is_truth,
                         ctx.draw_key);
}

std::string BernoulliRespondent::describe() const {
  nlohmann::ordered_json j;
  j["q_init"] = spec_.q_init;
  j["p_stick"] = spec_.p_stick;
  j["q_flex_correct"] = spec_.q_flex_correct;
  j["q_flex_incorrect"] = spec_.q_flex_incorrect;
  j["seed"] = spec_.seed;
  return "bernoulli " + j.dump();
}

std::string api_key_from_env() {
  const char* key = std::getenv("CONVICTION_API_KEY");
  return key ? key : "";
}

nlohmann::json chat_request_body(const std::vector<Message>& messages,
                                  const GenerationParams& params) {
  nlohmann::json body;
  body["model"] = params.model_name;
  body["messages"] = messages_to_json(messages);
  body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_output_tokens;
  for (const auto& [k, v] : params.extra.items()) body[k] = v;
  return body;
}

std::string chat_response_content(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw RespondentError(ErrorKind::malformed_body,
                          std::string("response is not JSON: ") + e.what());
  }
  const auto ptr = nlohmann::json::json_pointer("/choices/0/message/content");
  if (!j.contains(ptr) || !j.at(ptr).is_string())
    throw RespondentError(ErrorKind::malformed_body,
                          "response lacks choices[0].message.content");
  return j.at(ptr).get<std::string>();
}

namespace {

std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw std::invalid_argument("base_url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  std::string origin = url.substr(0, slash);
  std::string path = slash == std::string::npos ? "" : url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {origin, path};
}

void configure(httplib::Client& client, std::chrono::milliseconds timeout) {
  const auto secs = static_cast<time_t>(timeout.count() / 1000);
  const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
}

RespondentError transport_error(httplib::Error err,
                                std::chrono::steady_clock::duration elapsed,
                                std::chrono::milliseconds timeout) {
  const auto what = httplib::to_string(err);
  if (err == httplib::Error::ConnectionTimeout ||
      (err == httplib::Error::Read && elapsed >= timeout))
    return {ErrorKind::timeout, "timeout: " + what};
  return {ErrorKind::transport, "transport failure: " + what};
}

}  // namespace

RemoteRespondent::RemoteRespondent(RemoteOptions options)
    : options_(std::move(options)), in_flight_(options_.max_in_flight) {
  if (options_.max_in_flight < 1)
    throw std::invalid_argument("max_in_flight must be >= 1");
  std::tie(origin_, path_) = split_base_url(options_.base_url);
}

std::string RemoteRespondent::complete(const std::vector<Message>& messages,
                                       const GenerationParams& params,
                                       const TurnContext&) {
  check_message_order(messages);
  const auto body = chat_request_body(messages, params).dump();

  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  httplib::Client client(origin_);
  configure(client, options_.timeout);
  httplib::Headers headers;
  if (!options_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + options_.api_key);
  ++requests_;
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(path_ + "/chat/completions", headers, body,
                         "application/json");
  if (!res)
    throw transport_error(res.error(), std::chrono::steady_clock::now() - start,
                          options_.timeout);
  const int status = res->status;
  if (status == 429)
    throw RespondentError(ErrorKind::rate_limited, "rate limited (429)", status);
  if (status >= 500)
    throw RespondentError(ErrorKind::server_error,
                          "server error " + std::to_string(status), status);
  if (status < 200 || status >= 300)
    throw RespondentError(ErrorKind::http_status,
                          "unexpected status " + std::to_string(status) + ": " +
                              res->body.substr(0, 200),
                          status);
  return chat_response_content(res->body);
}

void RemoteRespondent::ping() const {
  httplib::Client client(origin_);
  configure(client, std::min(options_.timeout, std::chrono::milliseconds(10'000)));
  httplib::Headers headers;
  if (!options_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + options_.api_key);
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Get(path_ + "/models", headers);
  if (!res)
    throw transport_error(res.error(), std::chrono::steady_clock::now() - start,
                          options_.timeout);
  if (res->status == 401 || res->status == 403)
    throw RespondentError(ErrorKind::http_status,
                          "endpoint rejected credentials (" +
                              std::to_string(res->status) + ")",
                          res->status);
  if (res->status >= 500)
    throw RespondentError(ErrorKind::server_error,
                          "server error " + std::to_string(res->status),
                          res->status);
}

}  // namespace conviction
