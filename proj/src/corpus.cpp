#include "conviction/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "conviction/random.hpp"

namespace conviction {

namespace {

bool is_label(std::string_view s) {
  return s.size() == 1 && s[0] >= 'A' && s[0] <= 'Z';
}

std::string require_string(const nlohmann::ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw CorpusError(std::string("missing field '") + key + "'");
  if (!it->is_string())
    throw CorpusError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(Dataset d) {
  switch (d) {
    case Dataset::medqa: return "medqa";
    case Dataset::medmcqa: return "medmcqa";
    case Dataset::jama_cc: return "jama_cc";
    case Dataset::custom: return "custom";
  }
  return "custom";
}

Dataset parse_dataset(std::string_view s) {
  if (s == "medqa") return Dataset::medqa;
  if (s == "medmcqa") return Dataset::medmcqa;
  if (s == "jama_cc") return Dataset::jama_cc;
  if (s == "custom") return Dataset::custom;
  throw CorpusError("unknown dataset tag '" + std::string(s) + "'");
}

const AnswerOption* McqaRecord::find(std::string_view label) const {
  for (const auto& o : options)
    if (o.label == label) return &o;
  return nullptr;
}

const std::string& McqaRecord::text_of(std::string_view label) const {
  if (const auto* o = find(label)) return o->text;
  throw CorpusError("record '" + id + "' has no option '" + std::string(label) +
                    "'");
}

std::vector<std::string> McqaRecord::distractor_labels() const {
  std::vector<std::string> out;
  for (const auto& o : options)
    if (o.label != truth_label) out.push_back(o.label);
  return out;
}

void validate_record(const McqaRecord& r) {
  if (r.id.empty()) throw CorpusError("empty id");
  if (r.question.empty()) throw CorpusError("record '" + r.id + "': empty question");
  std::set<std::string> seen;
  for (const auto& o : r.options) {
    if (!is_label(o.label))
      throw CorpusError("record '" + r.id + "': option label '" + o.label +
                        "' is not a single uppercase letter");
    if (!seen.insert(o.label).second)
      throw CorpusError("record '" + r.id + "': duplicate option label '" +
                        o.label + "'");
    if (o.text.empty())
      throw CorpusError("record '" + r.id + "': option '" + o.label +
                        "' has empty text");
  }
  if (r.truth_label.empty())
    throw CorpusError("record '" + r.id + "': missing truth label");
  if (!r.find(r.truth_label))
    throw CorpusError("record '" + r.id + "': truth label '" + r.truth_label +
                      "' is not among the options");
  const std::size_t distractors = r.options.size() - 1;
  const std::size_t min = r.dataset == Dataset::custom ? 1 : 3;
  if (distractors < min || distractors > 4)
    throw CorpusError("record '" + r.id + "': has " +
                      std::to_string(distractors) + " distractors; " +
                      std::string(to_string(r.dataset)) + " records need " +
                      std::to_string(min) + " to 4");
}

McqaRecord record_from_json(const nlohmann::ordered_json& j,
                            std::optional<Dataset> schema) {
  if (!j.is_object()) throw CorpusError("record is not an object");
  McqaRecord r;
  r.id = require_string(j, "id");
  r.question = require_string(j, "question");
  auto opts = j.find("options");
  if (opts == j.end() || !opts->is_object())
    throw CorpusError("field 'options' must be an object");
  for (const auto& [label, text] : opts->items()) {
    if (!text.is_string())
      throw CorpusError("option '" + label + "' text must be a string");
    r.options.push_back({label, text.get<std::string>()});
  }
  if (!j.contains("answer")) throw CorpusError("record '" + r.id + "': missing truth label");
  r.truth_label = require_string(j, "answer");
  if (auto d = j.find("dataset"); d != j.end()) {
    if (!d->is_string()) throw CorpusError("field 'dataset' must be a string");
    r.dataset = parse_dataset(d->get<std::string>());
    if (schema && *schema != r.dataset)
      throw CorpusError("record '" + r.id + "': dataset '" +
                        std::string(to_string(r.dataset)) +
                        "' does not match expected '" +
                        std::string(to_string(*schema)) + "'");
  } else if (schema) {
    r.dataset = *schema;
  } else {
    throw CorpusError("missing field 'dataset'");
  }
  if (auto m = j.find("meta"); m != j.end()) {
    if (!m->is_object()) throw CorpusError("field 'meta' must be an object");
    r.meta = nlohmann::json::parse(m->dump());
  }
  validate_record(r);
  return r;
}

nlohmann::ordered_json record_to_json(const McqaRecord& r) {
  nlohmann::ordered_json opts = nlohmann::ordered_json::object();
  for (const auto& o : r.options) opts[o.label] = o.text;
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["options"] = opts;
  j["answer"] = r.truth_label;
  j["dataset"] = to_string(r.dataset);
  if (!r.meta.empty()) j["meta"] = nlohmann::ordered_json::parse(r.meta.dump());
  return j;
}

LoadResult load_records(std::istream& in, std::optional<Dataset> schema,
                        OnInvalid policy) {
  LoadResult result;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record =
          record_from_json(nlohmann::ordered_json::parse(line), schema);
      if (!ids.insert(record.id).second)
        throw CorpusError("duplicate id '" + record.id + "'");
      result.records.push_back(std::move(record));
    } catch (const nlohmann::json::exception& e) {
      if (policy == OnInvalid::fail)
        throw CorpusError(std::string("malformed record: ") + e.what(), line_no);
      result.skipped.push_back({line_no, std::string("malformed record: ") + e.what()});
    } catch (const CorpusError& e) {
      if (policy == OnInvalid::fail) throw CorpusError(e.what(), line_no);
      result.skipped.push_back({line_no, e.what()});
    }
  }
  return result;
}

LoadResult load_records(const std::filesystem::path& path,
                        std::optional<Dataset> schema, OnInvalid policy) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open dataset file " + path.string());
  return load_records(in, schema, policy);
}

std::vector<McqaRecord> sample_without_replacement(
    const std::vector<McqaRecord>& records, std::size_t n, std::uint64_t seed) {
  if (n > records.size())
    throw CorpusError("cannot sample " + std::to_string(n) + " records from " +
                      std::to_string(records.size()));
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  SeededRng rng(seed);
  // Partial Fisher-Yates: the first n slots are the sample.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<McqaRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(records[idx[i]]);
  return out;
}

std::uint64_t record_seed(std::uint64_t master_seed, std::string_view record_id) {
  return derive_seed(master_seed, record_id);
}

std::vector<McqaRecord> synthesize_records(std::size_t n,
                                           std::size_t option_count,
                                           std::uint64_t seed) {
  if (option_count < 3 || option_count > 5)
    throw CorpusError("synthetic records need 3 to 5 options");
  std::vector<McqaRecord> out;
  out.reserve(n);
  SeededRng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    McqaRecord r;
    r.id = "syn-" + std::to_string(i);
    r.question = "Synthetic case " + std::to_string(i) +
                 ". Which option is correct?";
    for (std::size_t k = 0; k < option_count; ++k) {
      const std::string label(1, static_cast<char>('A' + k));
      r.options.push_back({label, "Synthetic finding " + std::to_string(i) +
                                      "-" + label});
    }
    r.truth_label = r.options[rng.below(option_count)].label;
    r.dataset = Dataset::custom;
    out.push_back(std::move(r));
  }
  return out;
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::single_shot_full: return "SingleShotFull";
    case Condition::single_shot_binary: return "SingleShotBinary";
    case Condition::positive_conviction: return "PositiveConviction";
    case Condition::negative_conviction: return "NegativeConviction";
    case Condition::flexibility: return "Flexibility";
    case Condition::flex_sensitivity: return "FlexSensitivity";
  }
  return "?";
}

Condition parse_condition(std::string_view s) {
  for (auto c : kAllConditions)
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown condition '" + std::string(s) + "'");
}

std::size_t min_distractors(Condition c) { return is_flexibility(c) ? 2 : 1; }

std::string_view to_string(TargetKind t) {
  return t == TargetKind::truth ? "truth" : "abstain";
}

TargetKind parse_target_kind(std::string_view s) {
  if (s == "truth") return TargetKind::truth;
  if (s == "abstain") return TargetKind::abstain;
  throw std::invalid_argument("unknown target kind '" + std::string(s) + "'");
}

std::size_t PerturbedInstance::max_turns() const {
  if (is_single_shot(condition)) return 1;
  if (is_flexibility(condition)) return 2;
  return distractor_order.size();
}

const std::string& PerturbedInstance::challenger(std::size_t turn) const {
  if (turn == 0 || turn > max_turns())
    throw std::out_of_range("turn " + std::to_string(turn) + " out of range");
  if (is_flexibility(condition) && turn == 2) return *t2_option;
  return distractor_order[turn - 1];
}

PerturbedInstance make_instance(const McqaRecord& record, Condition condition,
                                std::uint64_t seed,
                                std::optional<TargetKind> single_shot_target) {
  auto distractors = record.distractor_labels();
  if (distractors.size() < min_distractors(condition))
    throw CorpusError("record '" + record.id + "' has " +
                      std::to_string(distractors.size()) + " distractors; " +
                      std::string(to_string(condition)) + " needs at least " +
                      std::to_string(min_distractors(condition)));

  TargetKind kind = TargetKind::truth;
  switch (condition) {
    case Condition::single_shot_full:
    case Condition::single_shot_binary:
      kind = single_shot_target.value_or(TargetKind::truth);
      break;
    case Condition::positive_conviction: kind = TargetKind::truth; break;
    default: kind = TargetKind::abstain; break;
  }
  if (single_shot_target && *single_shot_target != kind)
    throw std::invalid_argument(std::string(to_string(condition)) +
                                " has a fixed target");

  PerturbedInstance inst;
  inst.record_id = record.id;
  inst.condition = condition;
  inst.seed = seed;
  inst.target = kind == TargetKind::truth ? record.truth_label
                                          : std::string(kAbstentionLabel);
  SeededRng rng(derive_seed(seed, "distractor-order"));
  rng.shuffle(std::span(distractors));
  inst.distractor_order = std::move(distractors);
  if (condition == Condition::flexibility)
    inst.t2_option = record.truth_label;
  else if (condition == Condition::flex_sensitivity)
    inst.t2_option = inst.distractor_order[1];
  return inst;
}

}  // namespace conviction
