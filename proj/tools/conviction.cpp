#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "conviction/runner.hpp"

int main(int argc, char** argv) {
  using namespace conviction;
  CLI::App app{"Stick-or-switch evaluation harness"};
  app.set_version_flag("--version", std::string(kHarnessVersion));
  app.require_subcommand(1);

  CommandOptions opts;
  std::uint64_t seed = 0;
  int concurrency = 0;
  std::string out;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* cfg = sub->add_option("--config", opts.config, "Run config (INI)");
    if (config_required) cfg->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides run.output_dir)");
    sub->add_option("--seed", seed, "Master seed (overrides run.seed)");
    sub->add_option("--concurrency", concurrency, "Worker count (overrides run.concurrency)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", opts.quiet, "Skip the console summary");
  };

  auto* validate = app.add_subcommand("validate", "Check data, exemplars, endpoint and feasibility");
  common(validate, true);
  auto* run = app.add_subcommand("run", "Run every configured condition");
  common(run, true);
  run->add_flag("--resume", opts.resume, "Skip conversations already in the output log");
  auto* simulate = app.add_subcommand("simulate", "Run against the configured Bernoulli agent");
  common(simulate, true);
  simulate->add_flag("--resume", opts.resume, "Skip conversations already in the output log");
  auto* report = app.add_subcommand("report", "Recompute metrics from transcript files");
  common(report, false);
  report->add_option("transcripts", opts.inputs, "transcripts.jsonl files")
      ->check(CLI::ExistingFile);
  report->add_flag("--allow-mixed", opts.allow_mixed,
                   "Combine transcripts written under different configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--concurrency")) opts.concurrency = concurrency;
  if (sub->count("--out")) opts.out = out;

  try {
    if (sub == validate) return cmd_validate(opts, std::cout, std::cerr);
    if (sub == run) return cmd_run(opts, std::cout, std::cerr);
    if (sub == simulate) return cmd_simulate(opts, std::cout, std::cerr);
    return cmd_report(opts, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
