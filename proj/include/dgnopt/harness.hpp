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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgnopt/data.hpp"
#include "dgnopt/netgraph.hpp"
#include "dgnopt/trainer.hpp"

namespace dgnopt {

struct NetworkSpec {
  std::string preset = "residual-micro";  // chain | residual-micro | inception-micro | two-path
  int width = 64;
  int blocks = 3;
  std::vector<int> layers = {64, 64};  // hidden widths of the chain preset
  Shortcut shortcut = Shortcut::identity;
  bool operator==(const NetworkSpec&) const = default;
};

struct DataSpec {
  std::string name = "blobs";  // blobs | moons | mnist
  std::string path;            // IDX directory; relative paths also resolve under DGNOPT_DATA_DIR
  int subset = 10000;
  int samples = 1000;  // synthetic sets
  double noise = 0.5;
  std::uint64_t split_seed = 0;
  int val = 512;
  double test_fraction = 0.2;
  Standardization standardization = Standardization::per_feature;
  int pool = 1;
  bool operator==(const DataSpec&) const = default;
};

struct OutputSpec {
  std::string directory = "runs";
  int log_period = 10;
  bool operator==(const OutputSpec&) const = default;
};

struct ExperimentConfig {
  NetworkSpec network;
  OptimizerConfig optimizer;
  DataSpec data;
  OutputSpec output;
  int seed_count = 1;  // seeds optimizer.seed, optimizer.seed + 1, ...
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses sectioned `key = value` text. Unknown sections or keys throw a config error naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies `section.key=value`.
void apply_override(ExperimentConfig& config, const std::string& assignment);
/// Every field, defaults included, in the format parse_config reads.
std::string echo_config(const ExperimentConfig& config);
/// Names of all accepted keys as `section.key`.
std::vector<std::string> config_keys();

/// Resolves an IDX directory: as given, then under DGNOPT_DATA_DIR, then under the bundled data root.
std::filesystem::path resolve_data_path(const std::string& path);
Dataset load_dataset(const DataSpec& spec);
NetworkGraph build_network(const NetworkSpec& spec, int input_dim, int classes);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
void write_timing_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
void write_report_json(const std::filesystem::path& path, const RunReport& report, std::uint64_t seed);

struct RunResult {
  std::string label;
  std::uint64_t seed = 0;
  std::filesystem::path directory;
  RunReport report;
  std::string error;  // non-empty when the run threw
};

/// One job of a sweep: a full configuration plus the run directory it owns.
struct RunJob {
  std::string label;
  ExperimentConfig config;
  std::filesystem::path directory;
};

/// Runs every job, at most `workers` at a time. Each job writes its config echo, metrics,
/// timing and report into its own directory.
std::vector<RunResult> run_jobs(const std::vector<RunJob>& jobs, int workers);

/// One job per seed of the configuration, under `root/label/seed-N`.
std::vector<RunJob> seed_jobs(const ExperimentConfig& config, const std::string& label,
                              const std::filesystem::path& root);

struct SummaryRow {
  std::string label;
  int runs = 0;
  int failed = 0;
  double mean = 0.0;
  double stddev = 0.0;
};
/// Mean ± std of the final test accuracy per label, in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<RunResult>& results);
std::string format_summary(const std::vector<SummaryRow>& rows);

/// Command line entry point; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace dgnopt
