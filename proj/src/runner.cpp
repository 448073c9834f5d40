#include "conviction/runner.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "conviction/metrics.hpp"
#include "conviction/random.hpp"

namespace conviction {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::vector<Job> plan_jobs(const std::vector<McqaRecord>& records,
                           const std::vector<Condition>& conditions,
                           std::uint64_t master_seed,
                           std::vector<std::string>* skipped) {
  std::vector<Job> jobs;
  for (const auto& record : records) {
    const auto seed = record_seed(master_seed, record.id);
    for (auto c : conditions) {
      if (record.distractor_count() < min_distractors(c)) {
        if (skipped)
          skipped->push_back(record.id + ": " + std::string(to_string(c)) + " needs " +
                             std::to_string(min_distractors(c)) + " distractors");
        continue;
      }
      if (is_single_shot(c)) {
        for (auto target : {TargetKind::truth, TargetKind::abstain})
          jobs.push_back({&record, make_instance(record, c, seed, target)});
      } else {
        jobs.push_back({&record, make_instance(record, c, seed)});
      }
    }
  }
  return jobs;
}

TranscriptKey job_key(const Job& job, const std::string& model) {
  return {model, job.record->dataset, job.record->id, job.instance.condition,
          job.instance.target_kind()};
}

std::vector<Transcript> execute_jobs(
    const std::vector<Job>& jobs, Respondent& respondent,
    const GenerationParams& params, const DialogueOptions& options,
    int concurrency, const std::function<void(const Transcript&)>& sink) {
  std::vector<Transcript> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex sink_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    while (!stop.load()) {
      const auto i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        auto t = run_condition(*jobs[i].record, jobs[i].instance, respondent,
                               params, options);
        std::lock_guard lock(sink_mutex);
        if (sink) sink(t);
        results[i] = std::move(t);
      } catch (...) {
        std::lock_guard lock(sink_mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::max(1, concurrency));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < std::min(threads, jobs.size()); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

// --- transcript log -------------------------------------------------------

TranscriptLog::Existing TranscriptLog::read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Existing out;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (const auto& l : lines) {
    ++lineno;
    if (l.empty()) continue;
    ojson j = ojson::parse(l, nullptr, false);
    if (j.is_discarded()) {
      if (lineno == lines.size()) {
        ++out.dropped_partial;
        continue;
      }
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) +
                               " is not valid JSON");
    }
    if (lineno == 1 && j.contains("manifest")) {
      out.manifest = j.at("manifest");
      continue;
    }
    try {
      out.transcripts.push_back(transcript_from_json(nlohmann::json::parse(l)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  if (out.manifest.is_null())
    throw std::runtime_error(path.string() + ": missing manifest header line");
  return out;
}

namespace {

std::string manifest_line(const ojson& manifest) {
  return ojson{{"manifest", manifest}}.dump() + "\n";
}

// Cuts the file after its last newline.
void drop_partial_tail(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto nl = content.rfind('\n');
  const auto keep = nl == std::string::npos ? 0 : nl + 1;
  if (keep != content.size()) fs::resize_file(path, keep);
}

}  // namespace

TranscriptLog::TranscriptLog(const fs::path& path, const ojson& manifest,
                             bool resume)
    : path_(path) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const bool append = resume && fs::exists(path);
  if (append) drop_partial_tail(path);
  file_ = std::fopen(path.string().c_str(), append ? "ab" : "wb");
  if (!file_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (!append) {
    const auto header = manifest_line(manifest);
    std::fwrite(header.data(), 1, header.size(), file_);
    std::fflush(file_);
  }
}

TranscriptLog::~TranscriptLog() {
  if (file_) std::fclose(file_);
}

void TranscriptLog::append(const Transcript& t) {
  const auto line = to_json(t).dump() + "\n";
  std::lock_guard lock(mutex_);
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() ||
      std::fflush(file_) != 0)
    throw std::runtime_error("write to " + path_.string() + " failed");
}

void TranscriptLog::rewrite(const fs::path& path, const ojson& manifest,
                            std::vector<Transcript> transcripts) {
  sort_canonical(transcripts);
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << manifest_line(manifest);
    for (const auto& t : transcripts) out << to_json(t).dump() << "\n";
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

// --- manifests ------------------------------------------------------------

nlohmann::ordered_json make_manifest(const RunConfig& config,
                                     const Respondent& respondent,
                                     const std::string& model_label) {
  ojson m;
  m["harness_version"] = kHarnessVersion;
  m["config_hash"] = config.hash();
  m["master_seed"] = config.seed;
  m["template_version"] = config.templates.version;
  m["respondent"] = respondent.describe();
  m["model"] = model_label;
  m["deterministic"] = respondent.deterministic();
  m["bootstrap_resamples"] = config.bootstrap_resamples;
  m["ci_level"] = config.ci_level;
  return m;
}

ReportOptions report_options_from(const nlohmann::ordered_json& manifest) {
  ReportOptions o;
  o.manifest = manifest;
  auto source = manifest.contains("merged") ? manifest.at("merged").at(0) : manifest;
  o.bootstrap_resamples = source.value("bootstrap_resamples", std::size_t{2000});
  o.ci_level = source.value("ci_level", 0.95);
  o.bootstrap_seed = derive_seed(source.value("master_seed", std::uint64_t{0}), "bootstrap");
  return o;
}

// --- commands -------------------------------------------------------------

namespace {

struct Check {
  std::string name;
  std::string message;
  std::string remedy;
};

struct Prepared {
  RunConfig config;
  std::deque<std::vector<McqaRecord>> corpora;  // stable addresses for jobs
  std::vector<McqaRecord> exemplars;
  std::vector<std::string> notes;
};

std::string model_label(const RunConfig& config, bool simulate) {
  if (!config.generation.model_name.empty()) return config.generation.model_name;
  return simulate || config.respondent == RespondentKind::bernoulli ? "bernoulli-agent"
                                                                   : "remote";
}

RunConfig load_with_overrides(const CommandOptions& opts) {
  auto config = load_config(opts.config);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.concurrency) config.concurrency = *opts.concurrency;
  if (opts.out) config.output_dir = *opts.out;
  return config;
}

// Runs every check and loads the inputs. `simulate` swaps the respondent
// for the configured agent and allows a synthetic corpus.
std::vector<Check> prepare(const CommandOptions& opts, bool simulate, bool ping,
                           Prepared& p) {
  std::vector<Check> failures;
  try {
    p.config = load_with_overrides(opts);
    if (simulate) p.config.respondent = RespondentKind::bernoulli;
    p.config.validate();
  } catch (const std::exception& e) {
    failures.push_back({"config", e.what(), "fix the named key in " + opts.config.string()});
    return failures;
  }
  const auto& c = p.config;

  if (c.datasets.empty()) {
    if (simulate) {
      p.corpora.push_back(synthesize_records(c.n, c.synthetic_options,
                                             derive_seed(c.seed, "synthetic")));
      p.notes.push_back("no datasets configured; simulating on " +
                        std::to_string(c.n) + " synthetic records");
    } else {
      failures.push_back({"datasets", "no datasets configured",
                          "set corpus.datasets = tag:path[, tag:path ...]"});
    }
  }
  std::set<std::string> seen_tags;
  std::map<std::string, std::string> dataset_ids;  // id -> file
  for (const auto& src : c.datasets) {
    const std::string tag(to_string(src.tag));
    if (!seen_tags.insert(tag).second) {
      failures.push_back({"datasets", "dataset tag '" + tag + "' listed twice",
                          "list each dataset once"});
      continue;
    }
    try {
      auto loaded = load_records(src.path, src.tag, OnInvalid::fail);
      for (const auto& r : loaded.records) dataset_ids.emplace(r.id, src.path.string());
      if (loaded.records.size() < c.n) {
        failures.push_back({"datasets", src.path.string() + " has " +
                                            std::to_string(loaded.records.size()) +
                                            " records but n = " + std::to_string(c.n),
                            "lower run.n or supply more records"});
        continue;
      }
      p.corpora.push_back(sample_without_replacement(loaded.records, c.n,
                                                     derive_seed(c.seed, "sample/" + tag)));
    } catch (const std::exception& e) {
      failures.push_back({"dataset schema", src.path.string() + ": " + e.what(),
                          "each line needs id, question, options {label: text} and "
                          "answer; remove or repair the line"});
    }
  }

  if (c.exemplars && c.k > 0) {
    try {
      auto loaded = load_records(*c.exemplars, std::nullopt, OnInvalid::fail);
      if (loaded.records.size() < c.k) {
        failures.push_back({"exemplars", c.exemplars->string() + " has " +
                                             std::to_string(loaded.records.size()) +
                                             " records but k = " + std::to_string(c.k),
                            "lower corpus.k or add exemplars"});
      } else {
        p.exemplars.assign(loaded.records.begin(),
                           loaded.records.begin() + static_cast<std::ptrdiff_t>(c.k));
        for (const auto& e : loaded.records)
          if (auto it = dataset_ids.find(e.id); it != dataset_ids.end())
            failures.push_back({"exemplars", "exemplar id '" + e.id + "' also appears in " +
                                                 it->second,
                                "exemplars must come from a split disjoint from "
                                "the evaluated data"});
      }
    } catch (const std::exception& e) {
      failures.push_back({"exemplars", e.what(), "point corpus.exemplars at a valid JSONL file"});
    }
  } else if (!c.exemplars && c.k > 0) {
    p.notes.push_back("corpus.exemplars not set; prompts are zero-shot");
  }

  for (const auto& records : p.corpora) {
    for (auto cond : c.conditions) {
      std::size_t infeasible = 0;
      std::string example;
      for (const auto& r : records)
        if (r.distractor_count() < min_distractors(cond)) {
          if (!infeasible) example = r.id;
          ++infeasible;
        }
      if (infeasible)
        failures.push_back(
            {"feasibility",
             std::string(to_string(cond)) + " needs at least " +
                 std::to_string(min_distractors(cond)) + " distractors; " +
                 std::to_string(infeasible) + " sampled record(s) have fewer (e.g. '" +
                 example + "')",
             "drop the condition or use records with more options"});
    }
  }

  if (ping && !simulate && c.respondent == RespondentKind::remote) {
    RemoteOptions ro = c.remote;
    ro.api_key = api_key_from_env();
    try {
      RemoteRespondent(ro).ping();
    } catch (const std::exception& e) {
      failures.push_back({"connectivity", c.remote.base_url + ": " + e.what(),
                          "check respondent.base_url, that the server is up, and "
                          "CONVICTION_API_KEY"});
    }
  }
  return failures;
}

void print_failures(const std::vector<Check>& failures, std::ostream& err) {
  for (const auto& f : failures)
    err << "FAIL [" << f.name << "] " << f.message << "\n  remediation: " << f.remedy << "\n";
}

int execute_run(const CommandOptions& opts, bool simulate, std::ostream& out,
                std::ostream& err) {
  Prepared p;
  const auto failures = prepare(opts, simulate, true, p);
  if (!failures.empty()) {
    print_failures(failures, err);
    return kExitValidation;
  }
  const auto& c = p.config;
  for (const auto& note : p.notes) err << "note: " << note << "\n";

  std::unique_ptr<Respondent> respondent;
  if (c.respondent == RespondentKind::remote) {
    RemoteOptions ro = c.remote;
    ro.api_key = api_key_from_env();
    respondent = std::make_unique<RemoteRespondent>(ro);
  } else {
    respondent = std::make_unique<BernoulliRespondent>(c.agent);
  }
  const auto model = model_label(c, simulate);
  const auto manifest = make_manifest(c, *respondent, model);
  const auto log_path = c.output_dir / "transcripts.jsonl";

  std::vector<Transcript> previous;
  if (opts.resume && fs::exists(log_path)) {
    try {
      auto existing = TranscriptLog::read(log_path);
      if (existing.manifest.value("config_hash", "") != manifest.at("config_hash")) {
        err << "FAIL [resume] " << log_path.string()
            << " was written with a different configuration\n"
               "  remediation: rerun without --resume or restore the original config\n";
        return kExitValidation;
      }
      previous = std::move(existing.transcripts);
      if (existing.dropped_partial)
        err << "note: dropped " << existing.dropped_partial << " partial trailing line\n";
    } catch (const std::exception& e) {
      err << "FAIL [resume] " << e.what() << "\n";
      return kExitValidation;
    }
  }

  std::vector<Job> jobs;
  std::vector<std::string> skipped;
  for (const auto& records : p.corpora) {
    auto more = plan_jobs(records, c.conditions, c.seed, &skipped);
    jobs.insert(jobs.end(), more.begin(), more.end());
  }
  std::set<TranscriptKey> done;
  for (const auto& t : previous) done.insert(key_of(t));
  std::erase_if(jobs, [&](const Job& j) { return done.count(job_key(j, model)) > 0; });

  DialogueOptions dopts;
  dopts.templates = c.templates;
  dopts.exemplars = p.exemplars;
  dopts.retry = c.retry;
  dopts.model_label = model;
  dopts.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!respondent->deterministic()) dopts.clock = utc_timestamp;

  if (!opts.quiet)
    err << "running " << jobs.size() << " conversations"
        << (previous.empty() ? "" : " (" + std::to_string(previous.size()) + " resumed)")
        << " with concurrency " << c.concurrency << "\n";

  std::vector<Transcript> fresh;
  try {
    TranscriptLog log(log_path, manifest, opts.resume);
    fresh = execute_jobs(jobs, *respondent, c.generation, dopts, c.concurrency,
                         [&](const Transcript& t) { log.append(t); });
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n  completed transcripts are preserved in "
        << log_path.string() << "; rerun with --resume\n";
    return kExitRuntime;
  }

  std::vector<Transcript> all = std::move(previous);
  all.insert(all.end(), std::make_move_iterator(fresh.begin()),
             std::make_move_iterator(fresh.end()));
  try {
    TranscriptLog::rewrite(log_path, manifest, all);
    auto options = report_options_from(manifest);
    const auto report = build_report(std::move(all), options);
    write_report_files(report, c.output_dir, c.plots);
    if (!opts.quiet) out << console_summary(report);
    out << "outputs written to " << c.output_dir.string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int cmd_validate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  Prepared p;
  const auto failures = prepare(opts, false, true, p);
  for (const auto& note : p.notes) out << "note: " << note << "\n";
  if (!failures.empty()) {
    print_failures(failures, err);
    err << failures.size() << " check(s) failed\n";
    return kExitValidation;
  }
  out << "all checks passed\n";
  return kExitOk;
}

int cmd_run(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return execute_run(opts, false, out, err);
}

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return execute_run(opts, true, out, err);
}

int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> inputs = opts.inputs;
  fs::path out_dir;
  bool plots = true;
  if (!opts.config.empty()) {
    try {
      auto c = load_with_overrides(opts);
      if (inputs.empty()) inputs.push_back(c.output_dir / "transcripts.jsonl");
      out_dir = c.output_dir;
      plots = c.plots;
    } catch (const std::exception& e) {
      err << "FAIL [config] " << e.what() << "\n";
      return kExitValidation;
    }
  }
  if (opts.out) out_dir = *opts.out;
  if (inputs.empty()) {
    err << "FAIL [report] no transcript files given\n"
           "  remediation: pass transcript files or --config\n";
    return kExitValidation;
  }
  if (out_dir.empty()) out_dir = inputs.front().parent_path();

  std::vector<Transcript> all;
  std::vector<ojson> manifests;
  std::vector<std::string> warnings;
  for (const auto& path : inputs) {
    try {
      auto existing = TranscriptLog::read(path);
      if (existing.dropped_partial)
        warnings.push_back(path.string() + ": ignored a partial trailing line");
      manifests.push_back(existing.manifest);
      all.insert(all.end(), std::make_move_iterator(existing.transcripts.begin()),
                 std::make_move_iterator(existing.transcripts.end()));
    } catch (const std::exception& e) {
      err << "FAIL [report] " << e.what() << "\n";
      return kExitValidation;
    }
  }

  ojson manifest = manifests.front();
  bool mixed = false;
  for (const auto& m : manifests)
    if (m.value("config_hash", "") != manifest.value("config_hash", "")) mixed = true;
  if (mixed) {
    if (!opts.allow_mixed) {
      err << "FAIL [manifest] transcript files come from different configurations\n"
             "  remediation: pass --allow-mixed to combine them anyway\n";
      return kExitValidation;
    }
    manifest = {{"merged", manifests}};
    warnings.push_back("transcripts combined from " + std::to_string(manifests.size()) +
                       " different run manifests");
  }

  try {
    auto options = report_options_from(manifest);
    options.warnings = warnings;
    const auto report = build_report(std::move(all), options);
    write_report_files(report, out_dir, plots);
    if (!opts.quiet) out << console_summary(report);
    out << "outputs written to " << out_dir.string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace conviction
