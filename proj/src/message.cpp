#include "conviction/message.hpp"

#include <stdexcept>

namespace conviction {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

nlohmann::json messages_to_json(const std::vector<Message>& messages) {
  auto out = nlohmann::json::array();
  for (const auto& m : messages)
    out.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return out;
}

std::vector<Message> messages_from_json(const nlohmann::json& j) {
  std::vector<Message> out;
  for (const auto& m : j)
    out.push_back({parse_role(m.at("role").get<std::string>()),
                   m.at("content").get<std::string>()});
  return out;
}

}  // namespace conviction
