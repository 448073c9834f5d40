#include "conviction/transcript.hpp"

#include <algorithm>
#include <stdexcept>

namespace conviction {

std::vector<Choice> as_choices(const std::vector<Presented>& presented) {
  std::vector<Choice> out;
  out.reserve(presented.size());
  for (const auto& p : presented) out.push_back({p.label, p.text});
  return out;
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::in_progress: return "InProgress";
    case Status::survived_all: return "SurvivedAll";
    case Status::switched: return "SwitchedAtTurn";
    case Status::lost_at_turn_one: return "LostAtTurnOne";
    case Status::parse_error: return "ParseError";
    case Status::transport_error: return "TransportError";
  }
  return "?";
}

Status parse_status(std::string_view s) {
  for (auto st : {Status::in_progress, Status::survived_all, Status::switched,
                  Status::lost_at_turn_one, Status::parse_error,
                  Status::transport_error})
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown status '" + std::string(s) + "'");
}

bool Transcript::survived(int t) const {
  if (outcome.status == Status::survived_all) return true;
  return t <= survived_through;
}

TranscriptKey key_of(const Transcript& t) {
  return {t.model, t.dataset, t.record_id, t.condition, t.target_kind()};
}

std::string key_string(const TranscriptKey& k) {
  return k.model + "|" + std::string(to_string(k.dataset)) + "|" + k.record_id +
         "|" + std::string(to_string(k.condition)) + "|" +
         std::string(to_string(k.target));
}

void sort_canonical(std::vector<Transcript>& transcripts) {
  std::stable_sort(transcripts.begin(), transcripts.end(),
                   [](const Transcript& a, const Transcript& b) {
                     return key_of(a) < key_of(b);
                   });
}

namespace {

nlohmann::ordered_json optional_string(const std::optional<std::string>& s) {
  return s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json(nullptr);
}

std::optional<std::string> read_optional(const nlohmann::json& j,
                                         const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

nlohmann::ordered_json to_json(const Transcript& t) {
  nlohmann::ordered_json j;
  j["record_id"] = t.record_id;
  j["dataset"] = to_string(t.dataset);
  j["model"] = t.model;
  j["condition"] = to_string(t.condition);
  j["target"] = t.target;
  j["template_version"] = t.template_version;
  j["seed"] = t.seed;
  j["max_turns"] = t.max_turns;
  auto turns = nlohmann::ordered_json::array();
  for (const auto& turn : t.turns) {
    nlohmann::ordered_json tj;
    tj["turn"] = turn.turn;
    auto presented = nlohmann::ordered_json::array();
    for (const auto& p : turn.presented)
      presented.push_back({{"label", p.label}, {"text", p.text}, {"source", p.source}});
    tj["presented"] = presented;
    tj["prompt"] = turn.prompt;
    tj["raw_output"] = turn.raw_output;
    tj["parsed"] = {{"kind", to_string(turn.parsed.kind)},
                    {"label", turn.parsed.label},
                    {"matched_by", to_string(turn.parsed.matched_by)},
                    {"raw_span", turn.parsed.raw_span}};
    tj["selected_source"] = turn.selected_source;
    tj["attempts"] = turn.attempts;
    tj["started_at"] = optional_string(turn.started_at);
    tj["finished_at"] = optional_string(turn.finished_at);
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  j["outcome"] = {{"status", to_string(t.outcome.status)},
                  {"turn", t.outcome.turn}};
  j["survived_through"] = t.survived_through;
  j["error"] = optional_string(t.error);
  j["timestamps"] = {{"started_at", optional_string(t.started_at)},
                     {"finished_at", optional_string(t.finished_at)}};
  return j;
}

Transcript transcript_from_json(const nlohmann::json& j) {
  Transcript t;
  t.record_id = j.at("record_id").get<std::string>();
  t.dataset = parse_dataset(j.at("dataset").get<std::string>());
  t.model = j.at("model").get<std::string>();
  t.condition = parse_condition(j.at("condition").get<std::string>());
  t.target = j.at("target").get<std::string>();
  t.template_version = j.at("template_version").get<std::string>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.max_turns = j.at("max_turns").get<int>();
  for (const auto& tj : j.at("turns")) {
    TurnRecord turn;
    turn.turn = tj.at("turn").get<int>();
    for (const auto& p : tj.at("presented"))
      turn.presented.push_back({p.at("label").get<std::string>(),
                                p.at("text").get<std::string>(),
                                p.at("source").get<std::string>()});
    turn.prompt = tj.at("prompt").get<std::string>();
    turn.raw_output = tj.at("raw_output").get<std::string>();
    const auto& pj = tj.at("parsed");
    turn.parsed.kind = parse_selection_kind(pj.at("kind").get<std::string>());
    turn.parsed.label = pj.at("label").get<std::string>();
    turn.parsed.matched_by = parse_matched_by(pj.at("matched_by").get<std::string>());
    turn.parsed.raw_span = pj.at("raw_span").get<std::string>();
    turn.selected_source = tj.at("selected_source").get<std::string>();
    turn.attempts = tj.at("attempts").get<int>();
    turn.started_at = read_optional(tj, "started_at");
    turn.finished_at = read_optional(tj, "finished_at");
    t.turns.push_back(std::move(turn));
  }
  t.outcome.status = parse_status(j.at("outcome").at("status").get<std::string>());
  t.outcome.turn = j.at("outcome").at("turn").get<int>();
  t.survived_through = j.at("survived_through").get<int>();
  t.error = read_optional(j, "error");
  if (auto ts = j.find("timestamps"); ts != j.end()) {
    t.started_at = read_optional(*ts, "started_at");
    t.finished_at = read_optional(*ts, "finished_at");
  }
  return t;
}

}  // namespace conviction
