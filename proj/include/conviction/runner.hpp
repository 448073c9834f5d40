#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/config.hpp"
#include "conviction/dialogue.hpp"
#include "conviction/report.hpp"
#include "conviction/respondent.hpp"
#include "conviction/transcript.hpp"

namespace conviction {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kHarnessVersion = CONVICTION_VERSION;

/// One conversation to drive.
struct Job {
  const McqaRecord* record = nullptr;
  PerturbedInstance instance;
};

/// Every (record, condition) pair, single-shot conditions once per target
/// kind. Records with too few distractors for a condition are skipped and
/// reported through `skipped`.
std::vector<Job> plan_jobs(const std::vector<McqaRecord>& records,
                           const std::vector<Condition>& conditions,
                           std::uint64_t master_seed,
                           std::vector<std::string>* skipped = nullptr);

TranscriptKey job_key(const Job& job, const std::string& model);

/// Runs the jobs on `concurrency` worker threads. `sink` is called once per
/// finished transcript, serialized under a single lock. Returns the
/// transcripts in job order.
std::vector<Transcript> execute_jobs(
    const std::vector<Job>& jobs, Respondent& respondent,
    const GenerationParams& params, const DialogueOptions& options,
    int concurrency,
    const std::function<void(const Transcript&)>& sink = nullptr);

/// Append-only transcripts.jsonl with a manifest header line. Each append
/// is flushed so a crash loses at most the line being written.
class TranscriptLog {
 public:
  struct Existing {
    nlohmann::ordered_json manifest;
    std::vector<Transcript> transcripts;
    std::size_t dropped_partial = 0;  // trailing lines that failed to parse
  };

  /// Reads a log, tolerating a truncated last line.
  static Existing read(const std::filesystem::path& path);

  /// Starts a fresh log (truncating) or reopens one for resumption after
  /// cutting off any partial trailing line.
  TranscriptLog(const std::filesystem::path& path,
                const nlohmann::ordered_json& manifest, bool resume);
  ~TranscriptLog();
  TranscriptLog(const TranscriptLog&) = delete;
  TranscriptLog& operator=(const TranscriptLog&) = delete;

  void append(const Transcript& t);

  /// Replaces the file with the manifest plus `transcripts` in canonical
  /// order (written to a temporary and renamed).
  static void rewrite(const std::filesystem::path& path,
                      const nlohmann::ordered_json& manifest,
                      std::vector<Transcript> transcripts);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::FILE* file_ = nullptr;
};

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> concurrency;
  bool resume = false;
  bool allow_mixed = false;                  // report only
  std::vector<std::filesystem::path> inputs;  // report only
  bool quiet = false;
};

/// Manifest stamped into every output file.
nlohmann::ordered_json make_manifest(const RunConfig& config,
                                     const Respondent& respondent,
                                     const std::string& model_label);

/// Report settings recovered from a manifest, so re-reporting matches the
/// run exactly.
ReportOptions report_options_from(const nlohmann::ordered_json& manifest);

int cmd_validate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_run(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace conviction
