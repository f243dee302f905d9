/*
 Copyright 2026 The dgnopt Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dgnopt/acceptance.hpp"
#include "dgnopt/error.hpp"
#include "dgnopt/harness.hpp"

namespace dgnopt {
namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config, "experiment config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", flags.seed, "first seed (overrides optimizer.seed)");
  sub->add_option("--out", flags.out, "output directory (overrides output.directory)");
  sub->add_option("--workers", flags.workers, "concurrent runs")->check(CLI::PositiveNumber);
  sub->add_option("--override", flags.overrides, "section.key=value, repeatable")->take_all();
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig config = flags.config.empty() ? ExperimentConfig{} : load_config(flags.config);
  for (const std::string& o : flags.overrides) apply_override(config, o);
  if (flags.seed) config.optimizer.seed = *flags.seed;
  if (!flags.out.empty()) config.output.directory = flags.out;
  return config;
}

int input_dim(const DataSpec& data) {
  if (data.name == "mnist") return (28 / data.pool) * (28 / data.pool);
  return 2;
}

int classes(const DataSpec& data) { return data.name == "mnist" ? 10 : 2; }

/// Runs the jobs, writes a summary, and reports failures. Returns the exit code.
int finish(const std::vector<RunJob>& jobs, int workers, const fs::path& root) {
  const std::vector<RunResult> results = run_jobs(jobs, workers);
  int failed = 0;
  for (const RunResult& r : results) {
    if (!r.error.empty()) {
      ++failed;
      std::cerr << "run " << r.label << " seed " << r.seed << " failed: " << r.error << "\n";
    } else if (r.report.diverged) {
      std::cerr << "run " << r.label << " seed " << r.seed << " diverged at iteration " << r.report.iterations << "\n";
    }
  }
  const std::vector<SummaryRow> rows = summarize(results);
  const std::string table = format_summary(rows);
  std::cout << table;
  fs::create_directories(root);
  std::ofstream summary(root / "summary.csv", std::ios::binary);
  summary << "label,runs,failed,mean_test_acc,std_test_acc\n";
  for (const SummaryRow& r : rows)
    summary << r.label << ',' << r.runs << ',' << r.failed << ',' << r.mean << ',' << r.stddev << '\n';
  return failed == 0 ? 0 : 1;
}

std::string run_label(const OptimizerConfig& o) {
  return std::string(to_string(o.mode)) + "-" + to_string(o.precondition.kind);
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Train small networks as multi-player dynamic games."};
  app.require_subcommand(1);

  CommonFlags train_flags, ablate_flags, bandit_flags, align_flags;
  CLI::App* train = app.add_subcommand("train", "train one configuration over its seeds");
  add_common(train, train_flags);

  CLI::App* ablate = app.add_subcommand("ablate", "each preconditioner under open-loop, feedback and cooperative updates");
  add_common(ablate, ablate_flags);
  std::vector<std::string> baselines = {"sgd", "rmsprop", "adam", "kfac"};
  ablate->add_option("--baselines", baselines, "preconditioners to compare")->delimiter(',');

  CLI::App* bandit = app.add_subcommand("bandit-compare", "fixed, random and adaptive alignment strategies");
  add_common(bandit, bandit_flags);

  CLI::App* align = app.add_subcommand("enumerate-alignments", "list the stage alignments of the configured network");
  add_common(align, align_flags);

  CLI::App* verify = app.add_subcommand("verify", "run the acceptance suite");
  std::vector<int> criteria;
  verify->add_option("--criteria", criteria, "subset of criterion ids")->delimiter(',');
  app.add_subcommand("keys", "list accepted config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (app.got_subcommand("keys")) {
      for (const std::string& k : config_keys()) std::cout << k << "\n";
      return 0;
    }
    if (*verify) {
      acceptance::Options options;
      options.only = criteria;
      options.progress = [](const acceptance::Result& r) { std::cout << acceptance::format(r) << std::endl; };
      const auto results = acceptance::run_all(options);
      int passed = 0;
      for (const auto& r : results) passed += r.passed;
      std::cout << passed << "/" << results.size() << " criteria passed\n";
      return passed == static_cast<int>(results.size()) ? 0 : 1;
    }
    if (*align) {
      const ExperimentConfig config = resolve_config(align_flags);
      const NetworkGraph graph = build_network(config.network, input_dim(config.data), classes(config.data));
      const std::vector<Alignment> all = enumerate_alignments(graph);
      std::cout << all.size() << " alignments\n";
      for (std::size_t i = 0; i < all.size(); ++i) std::cout << "alignment " << i << "\n" << describe(graph, all[i]);
      return 0;
    }
    if (*train) {
      const ExperimentConfig config = resolve_config(train_flags);
      const fs::path root = config.output.directory;
      return finish(seed_jobs(config, run_label(config.optimizer), root), train_flags.workers, root);
    }
    if (*ablate) {
      const ExperimentConfig config = resolve_config(ablate_flags);
      const fs::path root = config.output.directory;
      std::vector<RunJob> jobs;
      for (const std::string& name : baselines) {
        for (TrainMode mode : {TrainMode::olne, TrainMode::fne, TrainMode::gr}) {
          ExperimentConfig variant = config;
          variant.optimizer.precondition.kind = parse_precondition(name);
          variant.optimizer.mode = mode;
          for (RunJob& job : seed_jobs(variant, run_label(variant.optimizer), root)) jobs.push_back(std::move(job));
        }
      }
      return finish(jobs, ablate_flags.workers, root);
    }
    if (*bandit) {
      const ExperimentConfig config = resolve_config(bandit_flags);
      const fs::path root = config.output.directory;
      std::vector<RunJob> jobs;
      for (AlignmentStrategy s : {AlignmentStrategy::fixed, AlignmentStrategy::random, AlignmentStrategy::adaptive}) {
        ExperimentConfig variant = config;
        variant.optimizer.strategy = s;
        for (RunJob& job : seed_jobs(variant, to_string(s), root)) jobs.push_back(std::move(job));
      }
      return finish(jobs, bandit_flags.workers, root);
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dgnopt
