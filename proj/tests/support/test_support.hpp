#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "conviction/corpus.hpp"
#include "conviction/dialogue.hpp"
#include "conviction/parsing.hpp"
#include "conviction/respondent.hpp"
#include "conviction/transcript.hpp"

namespace testing_support {

struct ParserCase {
  std::string id;
  std::string raw;
  std::vector<conviction::Choice> presented;
  bool abstention_offered = false;
  conviction::TurnStyle style = conviction::TurnStyle::initial;
  conviction::SelectionKind expected_kind = conviction::SelectionKind::unparseable;
  std::string expected_label;
};

std::vector<ParserCase> load_parser_corpus();

/// Record with `options` options labeled A.., truth at `truth_index`.
conviction::McqaRecord make_record(const std::string& id, std::size_t options = 4,
                                   std::size_t truth_index = 0);

/// Runs every condition for every record with a Bernoulli agent.
std::vector<conviction::Transcript> simulate(
    const std::vector<conviction::McqaRecord>& records,
    const std::vector<conviction::Condition>& conditions,
    const conviction::BernoulliAgentSpec& spec, std::uint64_t seed,
    int concurrency = 4);

std::vector<conviction::Transcript> run_with(
    const std::vector<conviction::McqaRecord>& records,
    const std::vector<conviction::Condition>& conditions,
    conviction::Respondent& respondent, std::uint64_t seed, int concurrency = 4,
    conviction::DialogueOptions options = {});

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

CliResult run_cli(const std::string& args);

/// JSONL for `records`.
std::string to_jsonl(const std::vector<conviction::McqaRecord>& records);

}  // namespace testing_support
