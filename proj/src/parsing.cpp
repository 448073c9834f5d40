#include "conviction/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>

#include "conviction/corpus.hpp"
#include "conviction/transcript.hpp"

namespace conviction {

std::string_view to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::option: return "option";
    case SelectionKind::abstain: return "abstain";
    case SelectionKind::unparseable: return "unparseable";
  }
  return "unparseable";
}

std::string_view to_string(MatchedBy m) {
  switch (m) {
    case MatchedBy::none: return "none";
    case MatchedBy::final_answer_pattern: return "final_answer_pattern";
    case MatchedBy::label_match: return "label_match";
    case MatchedBy::option_text_match: return "option_text_match";
    case MatchedBy::abstention_phrase: return "abstention_phrase";
  }
  return "none";
}

SelectionKind parse_selection_kind(std::string_view s) {
  for (auto k : {SelectionKind::option, SelectionKind::abstain,
                 SelectionKind::unparseable})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown selection kind '" + std::string(s) + "'");
}

MatchedBy parse_matched_by(std::string_view s) {
  for (auto m : {MatchedBy::none, MatchedBy::final_answer_pattern,
                 MatchedBy::label_match, MatchedBy::option_text_match,
                 MatchedBy::abstention_phrase})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown matcher '" + std::string(s) + "'");
}

namespace {

constexpr std::string_view kAbstentionPhrases[] = {"none of the above",
                                                   "none of these", "neither"};

bool is_word(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Drops markdown emphasis and collapses horizontal whitespace. Newlines are
// kept because they delimit standalone answers.
std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool space = false;
  for (char c : raw) {
    if (c == '*' || c == '`' || c == '#' || c == '_') c = ' ';
    if (c == '\r' || c == '\t' || c == '\f' || c == '\v') c = ' ';
    if (c == ' ') {
      space = true;
      continue;
    }
    if (space && !out.empty() && out.back() != '\n' && c != '\n') out += ' ';
    if (c == '\n' && !out.empty() && out.back() == ' ') out.pop_back();
    space = false;
    out += c;
  }
  return out;
}

std::string normalize_option(std::string_view text) {
  auto s = lower(normalize(text));
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
  return s;
}

bool contains_word(std::string_view hay, std::string_view word) {
  for (std::size_t pos = hay.find(word); pos != std::string_view::npos;
       pos = hay.find(word, pos + 1)) {
    const bool left = pos == 0 || !is_word(hay[pos - 1]);
    const std::size_t end = pos + word.size();
    const bool right = end >= hay.size() || !is_word(hay[end]);
    if (left && right) return true;
  }
  return false;
}

struct Candidate {
  SelectionKind kind;
  std::string label;
};

class Matcher {
 public:
  Matcher(std::string_view raw, std::span<const Choice> presented,
          bool abstention_offered, TurnStyle style)
      : text_(normalize(raw)),
        lower_(lower(text_)),
        presented_(presented),
        abstention_offered_(abstention_offered),
        style_(style) {
    for (const auto& c : presented_) {
      labels_.push_back(lower(c.label));
      texts_.push_back(normalize_option(c.text));
      na_.push_back(texts_.back() == lower(kAbstentionText));
    }
  }

  Selection run() {
    if (auto s = final_answer()) return *s;
    if (auto s = label_match()) return *s;
    if (auto s = option_text()) return *s;
    if (auto s = abstention()) return *s;
    return {};
  }

 private:
  Candidate for_index(std::size_t i) const {
    if (na_[i]) return {SelectionKind::abstain, presented_[i].label};
    return {SelectionKind::option, presented_[i].label};
  }

  Candidate abstain_candidate() const {
    for (std::size_t i = 0; i < presented_.size(); ++i)
      if (na_[i]) return {SelectionKind::abstain, presented_[i].label};
    return {SelectionKind::abstain, ""};
  }

  std::optional<std::size_t> label_index(std::string_view token) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == token) return i;
    return std::nullopt;
  }

  // A lowercase single letter reads as a label only when no word follows
  // ("answer is b." yes, "answer is a tough call" no).
  bool plausible_label(std::size_t pos, std::size_t len) const {
    if (len != 1 || !std::isalpha(static_cast<unsigned char>(text_[pos]))) return true;
    if (std::isupper(static_cast<unsigned char>(text_[pos]))) return true;
    std::size_t i = pos + len;
    while (i < text_.size() && text_[i] == ' ') ++i;
    return i >= text_.size() || !std::isalpha(static_cast<unsigned char>(text_[i]));
  }

  std::optional<Candidate> alias(std::string_view word) const {
    if (style_ != TurnStyle::stick_or_switch) return std::nullopt;
    std::optional<std::size_t> i;
    if (word == "stick" || word == "sticking") i = label_index("1");
    if (word == "switch" || word == "switching") i = label_index("2");
    if (!i) return std::nullopt;
    return for_index(*i);
  }

  // Resolves whatever follows a final-answer cue.
  std::optional<Candidate> resolve_after_cue(std::size_t pos) const {
    std::string_view rest(lower_);
    rest.remove_prefix(pos);
    auto skip = [&rest](std::string_view chars) {
      while (!rest.empty() && chars.find(rest.front()) != std::string_view::npos)
        rest.remove_prefix(1);
    };
    skip(" :-\"'");
    for (std::string_view lead : {"option ", "choice ", "label "}) {
      if (rest.starts_with(lead)) {
        rest.remove_prefix(lead.size());
        break;
      }
    }
    skip(" ([\"'");
    std::size_t n = 0;
    while (n < rest.size() && is_word(rest[n])) ++n;
    const auto token = rest.substr(0, n);
    const auto token_pos = static_cast<std::size_t>(rest.data() - lower_.data());
    if (auto i = label_index(token); i && plausible_label(token_pos, n))
      return for_index(*i);
    if (auto a = alias(token)) return a;
    if (abstention_offered_) {
      for (auto phrase : kAbstentionPhrases)
        if (rest.starts_with(phrase)) return abstain_candidate();
    }
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      if (!texts_[i].empty() && rest.starts_with(texts_[i]) &&
          (!best || texts_[i].size() > texts_[*best].size()))
        best = i;
    }
    if (best) return for_index(*best);
    return std::nullopt;
  }

  std::optional<Selection> final_answer() const {
    static const std::regex cue(
        R"((final\s+answer(\s+is)?|(correct|best|my)\s+answer\s+is|answer\s+is|answer\s*:))",
        std::regex::icase | std::regex::optimize);
    std::optional<Selection> last;
    for (auto it = std::sregex_iterator(lower_.begin(), lower_.end(), cue);
         it != std::sregex_iterator(); ++it) {
      const auto end = static_cast<std::size_t>(it->position() + it->length());
      if (auto c = resolve_after_cue(end)) {
        const auto start = static_cast<std::size_t>(it->position());
        const auto stop = std::min(text_.find('\n', end), text_.size());
        last = Selection{c->kind, c->label, MatchedBy::final_answer_pattern,
                         text_.substr(start, stop - start)};
      }
    }
    return last;
  }

  // Splits into lines, then sentences ending in . ! or ? followed by space.
  std::vector<std::pair<std::size_t, std::size_t>> segments() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= lower_.size(); ++i) {
      const bool end = i == lower_.size();
      const bool cut =
          end || lower_[i] == '\n' ||
          ((lower_[i] == '.' || lower_[i] == '!' || lower_[i] == '?') &&
           i + 1 < lower_.size() && lower_[i + 1] == ' ');
      if (!cut) continue;
      const std::size_t stop = end || lower_[i] == '\n' ? i : i + 1;
      if (stop > start) out.emplace_back(start, stop);
      start = i + 1;
    }
    return out;
  }

  std::optional<Candidate> standalone(std::string_view seg) const {
    auto trim = [&seg](std::string_view chars) {
      while (!seg.empty() && chars.find(seg.front()) != std::string_view::npos)
        seg.remove_prefix(1);
      while (!seg.empty() && chars.find(seg.back()) != std::string_view::npos)
        seg.remove_suffix(1);
    };
    trim(" .!:;,\"'");
    for (std::string_view lead : {"option ", "choice "}) {
      if (seg.starts_with(lead)) {
        seg.remove_prefix(lead.size());
        break;
      }
    }
    trim(" ()[].");
    if (auto i = label_index(seg)) return for_index(*i);
    if (auto a = alias(seg)) return a;
    // "Diagnosis: B" closing a sentence.
    if (const auto colon = seg.rfind(':'); colon != std::string_view::npos) {
      auto tail = seg.substr(colon + 1);
      while (!tail.empty() && (tail.front() == ' ' || tail.front() == '(')) tail.remove_prefix(1);
      while (!tail.empty() && (tail.back() == ')' || tail.back() == ' ')) tail.remove_suffix(1);
      if (auto i = label_index(tail)) return for_index(*i);
    }
    // "B. <text of B>" on its own line.
    std::size_t n = 0;
    while (n < seg.size() && is_word(seg[n])) ++n;
    if (auto i = label_index(seg.substr(0, n))) {
      auto rest = seg.substr(n);
      if (!rest.empty() && (rest.front() == '.' || rest.front() == ')' ||
                            rest.front() == ':')) {
        rest.remove_prefix(1);
        while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
        if (!rest.empty() && rest == texts_[*i]) return for_index(*i);
      }
    }
    return std::nullopt;
  }

  // True when one of the last few words of the clause before a match negates
  // it ("don't want to stick") or, for bare stick/switch verbs, offers it as
  // one side of an alternative ("whether to switch").
  static bool negated(std::string_view before, bool bare_alias) {
    if (const auto cut = before.find_last_of(",;:("); cut != std::string_view::npos)
      before.remove_prefix(cut + 1);
    static const std::set<std::string_view> kNeg = {
        "not", "never", "won't", "don't", "wouldn't", "shouldn't",
        "can't", "cannot", "nor"};
    static const std::set<std::string_view> kAlternative = {"or", "whether"};
    for (int words = 0; words < 4 && !before.empty(); ++words) {
      while (!before.empty() && !is_word(before.back()) && before.back() != '\'')
        before.remove_suffix(1);
      std::size_t n = before.size();
      while (n > 0 && (is_word(before[n - 1]) || before[n - 1] == '\'')) --n;
      const auto word = before.substr(n);
      if (kNeg.count(word) || (bare_alias && kAlternative.count(word))) return true;
      before.remove_suffix(before.size() - n);
    }
    return false;
  }

  std::optional<Selection> label_match() const {
    static const std::regex verb(
        R"(\b(choose|chose|select|selected|pick|picked|go with|going with|stick with|sticking with|switch to|switching to|opt for|select option)\s+(option\s+|choice\s+)?[(\[]?([a-z0-9]+)[)\]]?)",
        std::regex::optimize);
    static const std::regex alias_word(R"(\b(stick|sticking|switch|switching)\b)",
                                       std::regex::optimize);
    std::vector<std::pair<Candidate, std::string>> found;
    for (auto [b, e] : segments()) {
      const std::string_view seg(lower_.data() + b, e - b);
      if (auto c = standalone(seg)) {
        found.emplace_back(*c, text_.substr(b, e - b));
        continue;
      }
      const bool question = !seg.empty() && seg.back() == '?';
      const std::string s(seg);
      for (auto it = std::sregex_iterator(s.begin(), s.end(), verb);
           it != std::sregex_iterator(); ++it) {
        if (question ||
            negated(std::string_view(s).substr(0, it->position()), false))
          continue;
        const auto token = (*it)[3].str();
        const auto token_pos = b + static_cast<std::size_t>(it->position(3));
        if (auto i = label_index(token); i && plausible_label(token_pos, token.size())) {
          found.emplace_back(for_index(*i),
                             text_.substr(b + it->position(), it->length()));
        }
      }
      if (style_ == TurnStyle::stick_or_switch && !question) {
        for (auto it = std::sregex_iterator(s.begin(), s.end(), alias_word);
             it != std::sregex_iterator(); ++it) {
          if (negated(std::string_view(s).substr(0, it->position()), true))
            continue;
          if (auto c = alias((*it)[1].str()))
            found.emplace_back(*c, text_.substr(b + it->position(), it->length()));
        }
      }
    }
    return decide(found, MatchedBy::label_match);
  }

  std::optional<Selection> option_text() const {
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      if (texts_[i].empty()) continue;
      const auto pos = lower_.find(texts_[i]);
      if (pos == std::string::npos) continue;
      if (na_[i] && !abstention_offered_ && style_ == TurnStyle::initial) continue;
      hits.push_back(i);
    }
    // An option whose text is contained in another hit is not a separate hit.
    std::vector<std::pair<Candidate, std::string>> found;
    for (auto i : hits) {
      const bool shadowed = std::any_of(hits.begin(), hits.end(), [&](auto j) {
        return j != i && texts_[j].size() > texts_[i].size() &&
               texts_[j].find(texts_[i]) != std::string::npos;
      });
      if (shadowed) continue;
      const auto pos = lower_.find(texts_[i]);
      found.emplace_back(for_index(i), text_.substr(pos, texts_[i].size()));
    }
    return decide(found, MatchedBy::option_text_match);
  }

  std::optional<Selection> abstention() const {
    if (!abstention_offered_) return std::nullopt;
    for (auto phrase : kAbstentionPhrases) {
      const auto pos = lower_.find(phrase);
      if (pos != std::string::npos && contains_word(lower_, phrase)) {
        auto c = abstain_candidate();
        return Selection{c.kind, c.label, MatchedBy::abstention_phrase,
                         text_.substr(pos, phrase.size())};
      }
    }
    return std::nullopt;
  }

  static std::optional<Selection> decide(
      const std::vector<std::pair<Candidate, std::string>>& found,
      MatchedBy by) {
    if (found.empty()) return std::nullopt;
    const auto& first = found.front().first;
    for (const auto& [c, span] : found) {
      if (c.kind != first.kind || c.label != first.label)
        return Selection{SelectionKind::unparseable, "", by, ""};
    }
    return Selection{first.kind, first.label, by, found.back().second};
  }

  std::string text_;
  std::string lower_;
  std::span<const Choice> presented_;
  bool abstention_offered_;
  TurnStyle style_;
  std::vector<std::string> labels_;
  std::vector<std::string> texts_;
  std::vector<bool> na_;
};

}  // namespace

Selection extract_selection(std::string_view raw,
                            std::span<const Choice> presented,
                            bool abstention_offered, TurnStyle style) {
  if (presented.empty())
    throw std::invalid_argument("extract_selection: no presented choices");
  std::set<std::string> labels;
  for (const auto& c : presented)
    if (!labels.insert(lower(c.label)).second)
      throw std::invalid_argument("extract_selection: duplicate label " + c.label);
  return Matcher(raw, presented, abstention_offered, style).run();
}

ParseAudit audit_parse_rate(std::span<const Transcript> transcripts) {
  ParseAudit audit;
  for (const auto& t : transcripts) {
    for (const auto& turn : t.turns) {
      ++audit.total_turns;
      if (turn.parsed.kind == SelectionKind::unparseable) ++audit.unparseable;
    }
  }
  audit.rate = audit.total_turns
                   ? static_cast<double>(audit.unparseable) /
                         static_cast<double>(audit.total_turns)
                   : 0.0;
  return audit;
}

}  // namespace conviction
