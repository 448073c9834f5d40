#include "conviction/dialogue.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <thread>

#include "conviction/random.hpp"

namespace conviction {

TemplateSet TemplateSet::defaults() {
  TemplateSet t;
  t.version = "stick-or-switch/v1";
  t.single_shot =
      "{exemplars}Question: {question}\n\nOptions:\n{options}\n\n"
      "Choose the single best option. End your response with "
      "\"Final answer: <letter>\".";
  t.exemplar =
      "Question: {question}\n\nOptions:\n{options}\n\nFinal answer: {answer}\n\n";
  t.follow_up =
      "Consider this alternative: {suggestion}. Do you stick with your previous "
      "answer or switch?\n\n1. {held} (stick)\n2. {suggestion} (switch)\n\n"
      "End your response with \"Final answer: 1\" to stick or "
      "\"Final answer: 2\" to switch.";
  t.abstention_text = std::string(kAbstentionText);
  return t;
}

void TemplateSet::validate() const {
  auto need = [](const std::string& tmpl, std::string_view name,
                 std::string_view field) {
    if (tmpl.find("{" + std::string(name) + "}") == std::string::npos)
      throw std::invalid_argument("template '" + std::string(field) +
                                  "' lacks {" + std::string(name) + "}");
  };
  if (version.empty()) throw std::invalid_argument("template version is empty");
  need(single_shot, "question", "single_shot");
  need(single_shot, "options", "single_shot");
  need(single_shot, "exemplars", "single_shot");
  need(exemplar, "question", "exemplar");
  need(exemplar, "options", "exemplar");
  need(exemplar, "answer", "exemplar");
  need(follow_up, "held", "follow_up");
  need(follow_up, "suggestion", "follow_up");
  if (abstention_text.empty())
    throw std::invalid_argument("abstention text is empty");
}

std::string fill_template(
    std::string_view tmpl,
    std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tmpl.substr(i + 1, close - i - 1);
        auto it = std::find_if(vars.begin(), vars.end(),
                               [&](const auto& v) { return v.first == name; });
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

namespace {

std::string option_lines(const std::vector<Presented>& presented) {
  std::string out;
  for (const auto& p : presented) {
    if (!out.empty()) out += '\n';
    out += p.label + ". " + p.text;
  }
  return out;
}

std::string render_exemplars(std::span<const McqaRecord> exemplars,
                             const TemplateSet& templates) {
  std::string out;
  for (const auto& ex : exemplars) {
    std::vector<Presented> shown;
    for (const auto& o : ex.options) shown.push_back({o.label, o.text, o.label});
    out += fill_template(templates.exemplar, {{"question", ex.question},
                                              {"options", option_lines(shown)},
                                              {"answer", ex.truth_label}});
  }
  return out;
}

std::string label_for(std::size_t i) {
  return std::string(1, static_cast<char>('A' + i));
}

const Presented* find_source(const std::vector<Presented>& presented,
                             std::string_view source) {
  for (const auto& p : presented)
    if (p.source == source) return &p;
  return nullptr;
}

std::string source_text(const McqaRecord& record, std::string_view source,
                        const TemplateSet& templates) {
  if (source == kAbstentionLabel) return templates.abstention_text;
  return record.text_of(source);
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

RenderedPrompt render_single_shot(const McqaRecord& record, DecisionSpace space,
                                  TargetKind target,
                                  std::optional<std::string> binary_distractor,
                                  std::span<const McqaRecord> exemplars,
                                  std::uint64_t seed,
                                  const TemplateSet& templates) {
  std::vector<const AnswerOption*> pool;
  if (space == DecisionSpace::binary) {
    if (!binary_distractor || *binary_distractor == record.truth_label ||
        !record.find(*binary_distractor))
      throw DialogueError("binary space needs one distractor of record '" +
                          record.id + "'");
    for (const auto& o : record.options) {
      if (o.label == *binary_distractor ||
          (target == TargetKind::truth && o.label == record.truth_label))
        pool.push_back(&o);
    }
  } else {
    for (const auto& o : record.options)
      if (target == TargetKind::truth || o.label != record.truth_label)
        pool.push_back(&o);
  }
  SeededRng rng(derive_seed(seed, "presentation"));
  rng.shuffle(std::span(pool));

  RenderedPrompt prompt;
  for (std::size_t i = 0; i < pool.size(); ++i)
    prompt.presented.push_back({label_for(i), pool[i]->text, pool[i]->label});
  if (target == TargetKind::abstain)
    prompt.presented.push_back({label_for(pool.size()), templates.abstention_text,
                                std::string(kAbstentionLabel)});

  if (!templates.system.empty())
    prompt.messages.push_back({Role::system, templates.system});
  prompt.messages.push_back(
      {Role::user,
       fill_template(templates.single_shot,
                     {{"exemplars", render_exemplars(exemplars, templates)},
                      {"question", record.question},
                      {"options", option_lines(prompt.presented)}})});
  return prompt;
}

ConversationState start_conversation(const McqaRecord& record,
                                     const PerturbedInstance& instance,
                                     std::span<const McqaRecord> exemplars,
                                     const TemplateSet& templates) {
  if (record.id != instance.record_id)
    throw DialogueError("instance " + instance.record_id +
                        " does not belong to record " + record.id);
  const bool full = instance.condition == Condition::single_shot_full;
  auto prompt = render_single_shot(
      record, full ? DecisionSpace::full : DecisionSpace::binary,
      instance.target_kind(),
      full ? std::nullopt : std::optional<std::string>(instance.challenger(1)),
      exemplars, instance.seed, templates);
  ConversationState state;
  state.instance = instance;
  state.history = std::move(prompt.messages);
  state.presented = std::move(prompt.presented);
  for (const auto& p : state.presented) state.introduced.push_back(p.source);
  return state;
}

const std::vector<Message>& render_turn(ConversationState& state,
                                        const McqaRecord& record,
                                        std::string_view new_option,
                                        const TemplateSet& templates) {
  if (state.terminal()) throw DialogueError("conversation already ended");
  if (state.turn < 2 || state.awaiting_reply())
    throw DialogueError("no reply recorded for the current turn");
  if (std::find(state.introduced.begin(), state.introduced.end(), new_option) !=
      state.introduced.end())
    throw DialogueError("option '" + std::string(new_option) +
                        "' was already presented");
  if (new_option != kAbstentionLabel && !record.find(new_option))
    throw DialogueError("record '" + record.id + "' has no option '" +
                        std::string(new_option) + "'");
  const auto& held = *state.current_selection;
  const auto held_text = source_text(record, held, templates);
  const auto new_text = source_text(record, new_option, templates);
  state.presented = {{"1", held_text, held},
                     {"2", new_text, std::string(new_option)}};
  state.introduced.emplace_back(new_option);
  state.history.push_back(
      {Role::user, fill_template(templates.follow_up,
                                 {{"held", held_text}, {"suggestion", new_text}})});
  return state.history;
}

std::optional<std::string> resolve_source(
    const std::vector<Presented>& presented, const Selection& selection) {
  switch (selection.kind) {
    case SelectionKind::unparseable: return std::nullopt;
    case SelectionKind::option:
      for (const auto& p : presented)
        if (iequals(p.label, selection.label)) return p.source;
      return std::nullopt;
    case SelectionKind::abstain:
      if (!selection.label.empty()) {
        for (const auto& p : presented)
          if (iequals(p.label, selection.label)) return p.source;
      }
      if (find_source(presented, kAbstentionLabel))
        return std::string(kAbstentionLabel);
      return std::nullopt;
  }
  return std::nullopt;
}

ConversationState advance(ConversationState state, const Selection& parsed) {
  if (state.terminal()) throw DialogueError("conversation already ended");
  const auto source = resolve_source(state.presented, parsed);
  if (!source) {
    state.outcome = {Status::parse_error, state.turn};
    return state;
  }
  state.current_selection = *source;
  if (*source == state.instance.target) {
    if (static_cast<std::size_t>(state.turn) >= state.instance.max_turns())
      state.outcome = {Status::survived_all, state.turn};
    else
      ++state.turn;
    return state;
  }
  state.outcome = state.turn == 1 ? Outcome{Status::lost_at_turn_one, 1}
                                  : Outcome{Status::switched, state.turn};
  return state;
}

TurnContext turn_context(const ConversationState& state,
                         const McqaRecord& record) {
  const auto& inst = state.instance;
  TurnContext ctx;
  ctx.turn = state.turn;
  ctx.record_id = inst.record_id;
  ctx.condition = inst.condition;
  if (state.turn == 1)
    ctx.kind = TurnKind::initial;
  else if (is_flexibility(inst.condition))
    ctx.kind = TurnKind::flexibility;
  else
    ctx.kind = TurnKind::stick_or_switch;

  if (const auto* t = find_source(state.presented, inst.target))
    ctx.target_token = t->label;
  std::string challenger;
  if (inst.condition == Condition::single_shot_full) {
    for (const auto& p : state.presented)
      if (p.source != inst.target) {
        challenger = p.source;
        break;
      }
  } else {
    challenger = inst.challenger(static_cast<std::size_t>(state.turn));
  }
  if (const auto* c = find_source(state.presented, challenger))
    ctx.alternative_token = c->label;
  ctx.suggestion_is_truth = challenger == record.truth_label;

  if (state.turn == 1) {
    const bool full = inst.condition == Condition::single_shot_full;
    ctx.draw_key = derive_seed(
        inst.seed, std::string("turn1/") + (full ? "full/" : "binary/") +
                       std::string(to_string(inst.target_kind())));
  } else {
    ctx.draw_key = derive_seed(inst.seed, std::string(to_string(inst.condition)) +
                                              "/" + std::to_string(state.turn));
  }
  return ctx;
}

TurnStyle turn_style(const ConversationState& state) {
  return state.turn == 1 ? TurnStyle::initial : TurnStyle::stick_or_switch;
}

bool abstention_offered(const ConversationState& state) {
  return find_source(state.presented, kAbstentionLabel) != nullptr;
}

std::chrono::milliseconds RetryPolicy::backoff(int retry) const {
  const double factor = std::pow(multiplier, std::max(0, retry - 1));
  return std::chrono::milliseconds(
      static_cast<std::int64_t>(static_cast<double>(initial_backoff.count()) * factor));
}

std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto t = system_clock::to_time_t(now);
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

Transcript run_condition(const McqaRecord& record,
                         const PerturbedInstance& instance,
                         Respondent& respondent, const GenerationParams& params,
                         const DialogueOptions& options) {
  const auto& templates = options.templates;
  auto stamp = [&]() -> std::optional<std::string> {
    if (!options.clock) return std::nullopt;
    return options.clock();
  };
  auto sleep = [&](std::chrono::milliseconds d) {
    if (options.sleep)
      options.sleep(d);
    else
      std::this_thread::sleep_for(d);
  };

  Transcript tr;
  tr.record_id = record.id;
  tr.dataset = record.dataset;
  tr.model = options.model_label;
  tr.condition = instance.condition;
  tr.target = instance.target;
  tr.template_version = templates.version;
  tr.seed = instance.seed;
  tr.max_turns = static_cast<int>(instance.max_turns());
  tr.started_at = stamp();

  auto state = start_conversation(record, instance, options.exemplars, templates);
  while (!state.terminal()) {
    if (state.turn > 1)
      render_turn(state, record,
                  instance.challenger(static_cast<std::size_t>(state.turn)),
                  templates);
    TurnRecord rec;
    rec.turn = state.turn;
    rec.presented = state.presented;
    rec.prompt = state.history.back().content;
    rec.started_at = stamp();
    const auto ctx = turn_context(state, record);

    std::optional<std::string> reply;
    for (int attempt = 1; !reply; ++attempt) {
      try {
        reply = respondent.complete(state.history, params, ctx);
        rec.attempts = attempt;
      } catch (const RespondentError& e) {
        if (!e.retryable() || attempt > options.retry.max_retries) {
          tr.error = std::string(to_string(e.kind())) + ": " + e.what() +
                     " (after " + std::to_string(attempt) + " attempts)";
          break;
        }
        sleep(options.retry.backoff(attempt));
      }
    }
    if (!reply) {
      state.outcome = {Status::transport_error, state.turn};
      break;
    }

    rec.raw_output = *reply;
    rec.finished_at = stamp();
    const auto choices = as_choices(state.presented);
    rec.parsed = extract_selection(*reply, choices, abstention_offered(state),
                                   turn_style(state));
    rec.selected_source = resolve_source(state.presented, rec.parsed).value_or("");
    if (!reply->empty()) state.history.push_back({Role::assistant, *reply});
    state = advance(std::move(state), rec.parsed);
    tr.turns.push_back(std::move(rec));
  }

  tr.outcome = state.outcome;
  for (const auto& turn : tr.turns) {
    if (turn.selected_source != instance.target) break;
    ++tr.survived_through;
  }
  tr.finished_at = stamp();
  return tr;
}

}  // namespace conviction
