#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace conviction {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct Message {
  Role role = Role::user;
  std::string content;

  bool operator==(const Message&) const = default;
};

nlohmann::json messages_to_json(const std::vector<Message>& messages);
std::vector<Message> messages_from_json(const nlohmann::json& j);

}  // namespace conviction
