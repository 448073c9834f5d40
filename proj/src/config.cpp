#include "conviction/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

namespace conviction {

namespace {

using Section = std::map<std::string, std::string>;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    if (auto item = trim(text.substr(start, end - start)); !item.empty())
      out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char c = s[++i];
      if (c == 'n') out += '\n';
      else if (c == 't') out += '\t';
      else out += c;
    } else {
      out += s[i];
    }
  }
  return out;
}

class Reader {
 public:
  Reader(std::string name, Section values)
      : name_(std::move(name)), values_(std::move(values)) {}

  const std::string* find(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  template <class T>
  void number(const std::string& key, T& out) {
    const auto* v = find(key);
    if (!v) return;
    try {
      std::size_t pos = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out = static_cast<T>(std::stod(*v, &pos));
      } else if constexpr (std::is_signed_v<T>) {
        out = static_cast<T>(std::stoll(*v, &pos));
      } else {
        if (!v->empty() && v->front() == '-') throw std::invalid_argument("negative");
        out = static_cast<T>(std::stoull(*v, &pos));
      }
      if (pos != v->size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected a number, got '" + *v + "'");
    }
  }

  void boolean(const std::string& key, bool& out) {
    const auto* v = find(key);
    if (!v) return;
    if (*v == "true" || *v == "yes" || *v == "1") out = true;
    else if (*v == "false" || *v == "no" || *v == "0") out = false;
    else throw ConfigError(where(key) + ": expected true or false, got '" + *v + "'");
  }

  void text(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) out = unescape(*v);
  }

  /// Keys starting with `prefix`, consumed.
  std::vector<std::pair<std::string, std::string>> with_prefix(const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) {
        used_.insert(k);
        out.emplace_back(k.substr(prefix.size()), v);
      }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown key '" + name_ + "." + k + "'");
  }

  std::string where(const std::string& key) const { return name_ + "." + key; }

 private:
  std::string name_;
  Section values_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

std::string_view to_string(RespondentKind k) {
  return k == RespondentKind::remote ? "remote" : "bernoulli";
}

std::vector<Condition> parse_condition_list(std::string_view text) {
  std::vector<Condition> out;
  for (const auto& item : split_list(text)) {
    if (item == "all") {
      for (auto c : kAllConditions)
        if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
      continue;
    }
    const auto c = parse_condition(item);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }

  std::map<std::string, Section> sections;
  for (const auto& [name, node] : tree) {
    if (node.empty())
      throw ConfigError("key '" + name + "' appears outside any section");
    auto& section = sections[name];
    for (const auto& [key, value] : node) section[key] = value.data();
  }
  static const std::set<std::string> known = {"run", "corpus", "respondent",
                                              "agent", "templates", "simulate"};
  for (const auto& [name, s] : sections)
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");

  RunConfig c;
  {
    Reader r("run", sections["run"]);
    r.number("seed", c.seed);
    r.number("n", c.n);
    if (const auto* v = r.find("conditions")) {
      try {
        c.conditions = parse_condition_list(*v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("run.conditions: " + std::string(e.what()));
      }
    }
    r.number("concurrency", c.concurrency);
    if (const auto* v = r.find("output_dir")) c.output_dir = resolve(base_dir, *v);
    r.boolean("plots", c.plots);
    r.number("bootstrap_resamples", c.bootstrap_resamples);
    r.number("ci_level", c.ci_level);
    r.finish();
  }
  {
    Reader r("corpus", sections["corpus"]);
    if (const auto* v = r.find("datasets")) {
      for (const auto& item : split_list(*v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
          throw ConfigError("corpus.datasets: expected tag:path, got '" + item + "'");
        DatasetSource src;
        try {
          src.tag = parse_dataset(trim(item.substr(0, colon)));
        } catch (const std::invalid_argument& e) {
          throw ConfigError("corpus.datasets: " + std::string(e.what()));
        }
        src.path = resolve(base_dir, trim(item.substr(colon + 1)));
        c.datasets.push_back(std::move(src));
      }
    }
    if (const auto* v = r.find("exemplars"); v && !v->empty())
      c.exemplars = resolve(base_dir, *v);
    r.number("k", c.k);
    r.finish();
  }
  {
    Reader r("respondent", sections["respondent"]);
    if (const auto* v = r.find("kind")) {
      if (*v == "remote") c.respondent = RespondentKind::remote;
      else if (*v == "bernoulli") c.respondent = RespondentKind::bernoulli;
      else throw ConfigError("respondent.kind: expected remote or bernoulli, got '" + *v + "'");
    }
    r.text("base_url", c.remote.base_url);
    r.text("model", c.generation.model_name);
    r.number("temperature", c.generation.temperature);
    r.number("max_tokens", c.generation.max_output_tokens);
    long long timeout_ms = c.remote.timeout.count();
    r.number("timeout_ms", timeout_ms);
    c.remote.timeout = std::chrono::milliseconds(timeout_ms);
    r.number("max_in_flight", c.remote.max_in_flight);
    r.number("max_retries", c.retry.max_retries);
    long long backoff_ms = c.retry.initial_backoff.count();
    r.number("initial_backoff_ms", backoff_ms);
    c.retry.initial_backoff = std::chrono::milliseconds(backoff_ms);
    r.number("backoff_multiplier", c.retry.multiplier);
    for (const auto& [key, value] : r.with_prefix("extra.")) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      c.generation.extra[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
    }
    r.finish();
  }
  {
    Reader r("agent", sections["agent"]);
    if (const auto* v = r.find("preset")) {
      if (*v == "ideal" || *v == "always_stick") c.agent = BernoulliAgentSpec::ideal();
      else if (*v == "blind_switcher") c.agent = BernoulliAgentSpec::blind_switcher();
      else if (*v == "always_switch") c.agent = BernoulliAgentSpec::always_switch();
      else
        throw ConfigError("agent.preset: expected ideal, always_stick, "
                          "blind_switcher or always_switch, got '" + *v + "'");
    }
    r.number("q_init", c.agent.q_init);
    r.number("p_stick", c.agent.p_stick);
    r.number("q_flex_correct", c.agent.q_flex_correct);
    r.number("q_flex_incorrect", c.agent.q_flex_incorrect);
    r.number("seed", c.agent.seed);
    r.finish();
  }
  {
    Reader r("templates", sections["templates"]);
    r.text("version", c.templates.version);
    r.text("system", c.templates.system);
    r.text("single_shot", c.templates.single_shot);
    r.text("exemplar", c.templates.exemplar);
    r.text("follow_up", c.templates.follow_up);
    r.text("abstention_text", c.templates.abstention_text);
    r.finish();
  }
  {
    Reader r("simulate", sections["simulate"]);
    r.number("options", c.synthetic_options);
    r.finish();
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config(in, path.parent_path());
}

void RunConfig::validate() const {
  if (n < 1) throw ConfigError("run.n must be at least 1");
  if (conditions.empty()) throw ConfigError("run.conditions must name at least one condition");
  if (concurrency < 1) throw ConfigError("run.concurrency must be at least 1");
  if (bootstrap_resamples < 1000)
    throw ConfigError("run.bootstrap_resamples must be at least 1000");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("run.ci_level must lie in (0, 1)");
  if (retry.max_retries < 0) throw ConfigError("respondent.max_retries must be >= 0");
  if (retry.initial_backoff.count() < 0 || !(retry.multiplier >= 1.0))
    throw ConfigError("respondent backoff must be non-negative with multiplier >= 1");
  try {
    generation.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("respondent: ") + e.what());
  }
  if (respondent == RespondentKind::remote) {
    if (remote.base_url.empty()) throw ConfigError("respondent.base_url is required for kind = remote");
    if (generation.model_name.empty()) throw ConfigError("respondent.model is required for kind = remote");
    if (remote.timeout.count() <= 0) throw ConfigError("respondent.timeout_ms must be positive");
    if (remote.max_in_flight < 1) throw ConfigError("respondent.max_in_flight must be at least 1");
  } else {
    try {
      agent.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("agent: ") + e.what());
    }
  }
  try {
    templates.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("templates: ") + e.what());
  }
  if (synthetic_options < 3 || synthetic_options > 5)
    throw ConfigError("simulate.options must lie in 3..5");
}

nlohmann::ordered_json RunConfig::canonical() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["n"] = n;
  auto conds = nlohmann::ordered_json::array();
  for (auto cond : conditions) conds.push_back(to_string(cond));
  j["conditions"] = conds;
  j["bootstrap_resamples"] = bootstrap_resamples;
  j["ci_level"] = ci_level;
  auto ds = nlohmann::ordered_json::array();
  for (const auto& d : datasets)
    ds.push_back({{"tag", to_string(d.tag)}, {"path", d.path.filename().string()}});
  j["datasets"] = ds;
  j["exemplars"] = exemplars ? nlohmann::ordered_json(exemplars->filename().string())
                             : nlohmann::ordered_json(nullptr);
  j["k"] = k;
  j["respondent"] = to_string(respondent);
  j["generation"] = {{"model", generation.model_name},
                     {"temperature", generation.temperature},
                     {"max_tokens", generation.max_output_tokens},
                     {"extra", nlohmann::ordered_json::parse(generation.extra.dump())}};
  if (respondent == RespondentKind::remote) {
    j["remote"] = {{"base_url", remote.base_url}};
  } else {
    j["agent"] = {{"q_init", agent.q_init},
                  {"p_stick", agent.p_stick},
                  {"q_flex_correct", agent.q_flex_correct},
                  {"q_flex_incorrect", agent.q_flex_incorrect},
                  {"seed", agent.seed}};
  }
  j["templates"] = {{"version", templates.version},
                    {"system", templates.system},
                    {"single_shot", templates.single_shot},
                    {"exemplar", templates.exemplar},
                    {"follow_up", templates.follow_up},
                    {"abstention_text", templates.abstention_text}};
  j["synthetic_options"] = synthetic_options;
  return j;
}

std::string RunConfig::hash() const { return sha256_hex(canonical().dump()); }

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace conviction
