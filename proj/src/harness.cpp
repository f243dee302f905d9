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

#include "dgnopt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dgnopt/error.hpp"

#ifndef DGNOPT_BUNDLED_DATA_DIR
#define DGNOPT_BUNDLED_DATA_DIR ""
#endif

namespace dgnopt {
namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& value, const char* expected) {
  throw Error(ErrorKind::config, "expected " + std::string(expected) + ", got '" + value + "'");
}

// Text conversion of config values. Doubles use the shortest form that reads back exactly.

std::string format_value(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <class T>
void parse_number(const std::string& s, T& out, const char* expected) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(s, expected);
}
void parse_value(const std::string& s, double& out) { parse_number(s, out, "a number"); }
void parse_value(const std::string& s, int& out) { parse_number(s, out, "an integer"); }
void parse_value(const std::string& s, std::uint64_t& out) { parse_number(s, out, "a non-negative integer"); }
void parse_value(const std::string& s, std::string& out) { out = s; }
void parse_value(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") out = true;
  else if (s == "false" || s == "0" || s == "no") out = false;
  else bad_value(s, "true or false");
}
void parse_value(const std::string& s, std::vector<int>& out) {
  out.clear();
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    int v = 0;
    parse_value(trim(item), v);
    out.push_back(v);
  }
}

template <class E>
using NameTable = std::vector<std::pair<E, const char*>>;

const NameTable<StateCurvatureMode> kStateCurvature = {
    {StateCurvatureMode::full, "full"},
    {StateCurvatureMode::gauss_newton, "gauss-newton"},
    {StateCurvatureMode::top_eigen, "top-eigen"}};
const NameTable<Coupling> kCoupling = {{Coupling::exact, "exact"}, {Coupling::none, "none"}};
const NameTable<GroupTerminal> kGroup = {{GroupTerminal::shared_once, "shared-once"},
                                         {GroupTerminal::per_player_sum, "per-player-sum"}};
const NameTable<Standardization> kStandardization = {{Standardization::per_feature, "per-feature"},
                                                     {Standardization::per_channel, "per-channel"}};
const NameTable<Shortcut> kShortcut = {{Shortcut::identity, "identity"}, {Shortcut::dense, "dense"}};

template <class E>
std::string table_name(const NameTable<E>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "?";
}
template <class E>
void table_parse(const NameTable<E>& table, const std::string& s, E& out) {
  std::string names;
  for (const auto& [e, name] : table) {
    if (s == name) {
      out = e;
      return;
    }
    names += (names.empty() ? "" : " | ") + std::string(name);
  }
  bad_value(s, names.c_str());
}

std::string format_value(StateCurvatureMode v) { return table_name(kStateCurvature, v); }
std::string format_value(Coupling v) { return table_name(kCoupling, v); }
std::string format_value(GroupTerminal v) { return table_name(kGroup, v); }
std::string format_value(Standardization v) { return table_name(kStandardization, v); }
std::string format_value(Shortcut v) { return table_name(kShortcut, v); }
std::string format_value(TrainMode v) { return to_string(v); }
std::string format_value(AlignmentStrategy v) { return to_string(v); }
std::string format_value(PreconditionKind v) { return to_string(v); }
void parse_value(const std::string& s, StateCurvatureMode& out) { table_parse(kStateCurvature, s, out); }
void parse_value(const std::string& s, Coupling& out) { table_parse(kCoupling, s, out); }
void parse_value(const std::string& s, GroupTerminal& out) { table_parse(kGroup, s, out); }
void parse_value(const std::string& s, Standardization& out) { table_parse(kStandardization, s, out); }
void parse_value(const std::string& s, Shortcut& out) { table_parse(kShortcut, s, out); }
void parse_value(const std::string& s, TrainMode& out) { out = parse_mode(s); }
void parse_value(const std::string& s, AlignmentStrategy& out) { out = parse_strategy(s); }
void parse_value(const std::string& s, PreconditionKind& out) { out = parse_precondition(s); }

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Access>
Field field(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return format_value(access(c)); },
          [access](ExperimentConfig& c, const std::string& v) { parse_value(v, access(c)); }};
}

#define DGNOPT_FIELD(section, key, member) field(section, key, [](auto& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      DGNOPT_FIELD("network", "preset", network.preset),
      DGNOPT_FIELD("network", "width", network.width),
      DGNOPT_FIELD("network", "blocks", network.blocks),
      DGNOPT_FIELD("network", "layers", network.layers),
      DGNOPT_FIELD("network", "shortcut", network.shortcut),

      DGNOPT_FIELD("optimizer", "mode", optimizer.mode),
      DGNOPT_FIELD("optimizer", "precondition", optimizer.precondition.kind),
      DGNOPT_FIELD("optimizer", "curvature_damping", optimizer.precondition.damping),
      DGNOPT_FIELD("optimizer", "ema_decay", optimizer.precondition.ema_decay),
      DGNOPT_FIELD("optimizer", "update_period", optimizer.precondition.update_period),
      DGNOPT_FIELD("optimizer", "beta1", optimizer.precondition.beta1),
      DGNOPT_FIELD("optimizer", "beta2", optimizer.precondition.beta2),
      DGNOPT_FIELD("optimizer", "max_condition", optimizer.precondition.max_condition),
      DGNOPT_FIELD("optimizer", "lr", optimizer.lr.base),
      DGNOPT_FIELD("optimizer", "milestones", optimizer.lr.milestones),
      DGNOPT_FIELD("optimizer", "lr_factor", optimizer.lr.factor),
      DGNOPT_FIELD("optimizer", "players_split", optimizer.players_split),
      DGNOPT_FIELD("optimizer", "alignment_strategy", optimizer.strategy),
      DGNOPT_FIELD("optimizer", "alignment", optimizer.alignment),
      DGNOPT_FIELD("optimizer", "seed", optimizer.seed),
      DGNOPT_FIELD("optimizer", "seed_count", seed_count),
      DGNOPT_FIELD("optimizer", "batch_size", optimizer.batch_size),
      DGNOPT_FIELD("optimizer", "max_iterations", optimizer.max_iterations),
      DGNOPT_FIELD("optimizer", "weight_decay", optimizer.weight_decay),
      DGNOPT_FIELD("optimizer", "system_damping", optimizer.damping),
      DGNOPT_FIELD("optimizer", "zero_feedback", optimizer.zero_feedback),
      DGNOPT_FIELD("optimizer", "coupling", optimizer.coupling),
      DGNOPT_FIELD("optimizer", "first_stage_feedback", optimizer.first_stage_feedback),
      DGNOPT_FIELD("optimizer", "state_curvature", optimizer.state_curvature.mode),
      DGNOPT_FIELD("optimizer", "state_rank", optimizer.state_curvature.rank),
      DGNOPT_FIELD("optimizer", "group_terminal", optimizer.group),
      DGNOPT_FIELD("optimizer", "guard_halvings", optimizer.guard_halvings),
      DGNOPT_FIELD("optimizer", "apply_feedback", optimizer.apply_feedback),

      DGNOPT_FIELD("data", "name", data.name),
      DGNOPT_FIELD("data", "path", data.path),
      DGNOPT_FIELD("data", "subset", data.subset),
      DGNOPT_FIELD("data", "samples", data.samples),
      DGNOPT_FIELD("data", "noise", data.noise),
      DGNOPT_FIELD("data", "split_seed", data.split_seed),
      DGNOPT_FIELD("data", "val", data.val),
      DGNOPT_FIELD("data", "test_fraction", data.test_fraction),
      DGNOPT_FIELD("data", "standardization", data.standardization),
      DGNOPT_FIELD("data", "pool", data.pool),

      DGNOPT_FIELD("output", "directory", output.directory),
      DGNOPT_FIELD("output", "log_period", output.log_period),
  };
  return all;
}

#undef DGNOPT_FIELD

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (f.section == section && f.key == key) return f;
  throw Error(ErrorKind::config, "unknown key '" + section + "." + key + "'");
}

void assign(ExperimentConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  const Field& f = find_field(section, key);
  try {
    f.set(config, value);
  } catch (const Error& e) {
    throw Error(ErrorKind::config, "key '" + section + "." + key + "': " + e.what());
  }
}

void check_ranges(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw Error(ErrorKind::config, std::string("key '") + key + "': " + what);
  };
  require(c.optimizer.batch_size > 0, "optimizer.batch_size", "must be positive");
  require(c.optimizer.max_iterations >= 0, "optimizer.max_iterations", "must be non-negative");
  require(c.optimizer.players_split > 0, "optimizer.players_split", "must be positive");
  require(c.optimizer.lr.base > 0, "optimizer.lr", "must be positive");
  require(c.optimizer.precondition.update_period > 0, "optimizer.update_period", "must be positive");
  require(c.optimizer.guard_halvings >= 0, "optimizer.guard_halvings", "must be non-negative");
  require(c.optimizer.state_curvature.rank > 0, "optimizer.state_rank", "must be positive");
  require(c.seed_count > 0, "optimizer.seed_count", "must be positive");
  require(c.network.width > 0, "network.width", "must be positive");
  require(c.network.blocks > 0, "network.blocks", "must be positive");
  require(c.data.test_fraction > 0 && c.data.test_fraction < 1, "data.test_fraction", "must lie in (0, 1)");
  require(c.data.val >= 0, "data.val", "must be non-negative");
  require(c.data.pool > 0, "data.pool", "must be positive");
  require(c.data.samples > 0, "data.samples", "must be positive");
  require(c.data.subset > 0, "data.subset", "must be positive");
  require(c.output.log_period > 0, "output.log_period", "must be positive");
  static const std::set<std::string> presets = {"chain", "residual-micro", "inception-micro", "two-path"};
  require(presets.count(c.network.preset) > 0, "network.preset",
          "expected chain | residual-micro | inception-micro | two-path");
  static const std::set<std::string> datasets = {"blobs", "moons", "mnist"};
  require(datasets.count(c.data.name) > 0, "data.name", "expected blobs | moons | mnist");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto comment = line.find_first_of("#;");
    line = trim(comment == std::string::npos ? line : line.substr(0, comment));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::config, where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> sections = {"network", "optimizer", "data", "output"};
      if (!sections.count(section)) throw Error(ErrorKind::config, where + "unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, where + "expected key = value");
    if (section.empty()) throw Error(ErrorKind::config, where + "key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(section + "." + key).second)
      throw Error(ErrorKind::config, where + "duplicate key '" + section + "." + key + "'");
    try {
      assign(config, section, key, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::config, where + e.what());
    }
  }
  check_ranges(config);
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw Error(ErrorKind::config, "override '" + assignment + "' is not section.key=value");
  assign(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
         trim(assignment.substr(eq + 1)));
  check_ranges(config);
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out += (out.empty() ? "" : "\n") + ("[" + section + "]\n");
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

fs::path resolve_data_path(const std::string& path) {
  const fs::path given(path);
  if (!path.empty() && (given.is_absolute() || fs::exists(given))) return given;
  if (const char* root = std::getenv("DGNOPT_DATA_DIR"); root && *root) {
    const fs::path candidate = fs::path(root) / given;
    if (fs::exists(candidate)) return candidate;
  }
  const fs::path bundled = fs::path(DGNOPT_BUNDLED_DATA_DIR) / given;
  if (fs::exists(bundled)) return bundled;
  throw Error(ErrorKind::io, "dataset directory '" + path + "' not found (checked DGNOPT_DATA_DIR and " +
                                 std::string(DGNOPT_BUNDLED_DATA_DIR) + ")");
}

namespace {

fs::path find_idx(const fs::path& dir, const std::string& stem) {
  for (const char* suffix : {".gz", ""}) {
    const fs::path p = dir / (stem + suffix);
    if (fs::exists(p)) return p;
  }
  throw Error(ErrorKind::io, "missing " + stem + " in '" + dir.string() + "'");
}

}  // namespace

Dataset load_dataset(const DataSpec& spec) {
  const SplitSpec split{spec.val, spec.test_fraction, spec.split_seed, spec.standardization};
  if (spec.name == "blobs") return split_dataset("blobs", make_blobs(spec.samples, spec.noise, spec.split_seed), 2, split);
  if (spec.name == "moons") return split_dataset("moons", make_moons(spec.samples, spec.noise, spec.split_seed), 2, split);
  if (spec.name == "mnist") {
    const fs::path dir = resolve_data_path(spec.path.empty() ? "mnist10k" : spec.path);
    IdxData raw = read_idx(find_idx(dir, "images-idx3-ubyte").string(), find_idx(dir, "labels-idx1-ubyte").string());
    Split all{pool_images(raw.images / 255.0, spec.pool), std::move(raw.labels)};
    if (spec.subset < all.size()) {
      std::vector<int> index(all.size());
      for (int i = 0; i < all.size(); ++i) index[i] = i;
      std::mt19937_64 rng(spec.split_seed);
      std::shuffle(index.begin(), index.end(), rng);
      index.resize(spec.subset);
      std::sort(index.begin(), index.end());
      all = all.subset(index);
    }
    return split_dataset("mnist", all, 10, split);
  }
  throw Error(ErrorKind::config, "key 'data.name': unknown dataset '" + spec.name + "'");
}

NetworkGraph build_network(const NetworkSpec& spec, int input_dim, int classes) {
  if (spec.preset == "chain") {
    std::vector<int> widths = spec.layers;
    widths.push_back(classes);
    return make_chain(input_dim, widths);
  }
  if (spec.preset == "residual-micro") return make_residual_micro(input_dim, spec.width, spec.blocks, classes, spec.shortcut);
  if (spec.preset == "inception-micro") return make_inception_micro(input_dim, spec.width, classes);
  if (spec.preset == "two-path") return make_two_path_block(input_dim, spec.width, classes);
  throw Error(ErrorKind::config, "key 'network.preset': unknown preset '" + spec.preset + "'");
}

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out = open_output(path);
  out << "iteration,train_loss,train_acc,val_acc,step_size,mean_abs_k,mean_frob_K,guard_count,alignment\n";
  for (const MetricRecord& r : records)
    out << r.iteration << ',' << format_value(r.train_loss) << ',' << format_value(r.train_acc) << ','
        << format_value(r.val_acc) << ',' << format_value(r.step_size) << ',' << format_value(r.mean_open) << ','
        << format_value(r.mean_feedback) << ',' << r.guard_count << ',' << r.alignment << '\n';
}

void write_timing_csv(const fs::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out = open_output(path);
  out << "iteration,wall_ms\n";
  for (const MetricRecord& r : records) out << r.iteration << ',' << format_value(r.wall_ms) << '\n';
}

void write_report_json(const fs::path& path, const RunReport& report, std::uint64_t seed) {
  auto finite = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json j = {
      {"seed", seed},
      {"strategy", report.strategy},
      {"iterations", report.iterations},
      {"initial_val_acc", finite(report.initial_val_acc)},
      {"final_train_acc", finite(report.final_train_acc)},
      {"final_val_acc", finite(report.final_val_acc)},
      {"final_test_acc", finite(report.final_test_acc)},
      {"final_train_loss", finite(report.final_train_loss)},
      {"wall_ms", report.wall_ms},
      {"guard_count", report.guard_count},
      {"skipped_steps", report.skipped},
      {"singular_events", report.singular},
      {"fallback_events", report.fallbacks},
      {"diverged", report.diverged},
      {"alignment_pulls", report.pulls},
  };
  std::ofstream out = open_output(path);
  out << j.dump(2) << '\n';
}

std::vector<RunJob> seed_jobs(const ExperimentConfig& config, const std::string& label, const fs::path& root) {
  std::vector<RunJob> jobs;
  for (int i = 0; i < config.seed_count; ++i) {
    RunJob job{label, config, {}};
    job.config.optimizer.seed = config.optimizer.seed + static_cast<std::uint64_t>(i);
    job.config.seed_count = 1;
    job.directory = root / label / ("seed-" + std::to_string(job.config.optimizer.seed));
    job.config.output.directory = job.directory.string();
    jobs.push_back(std::move(job));
  }
  return jobs;
}

namespace {

RunResult execute(const RunJob& job) {
  RunResult result{job.label, job.config.optimizer.seed, job.directory, {}, {}};
  try {
    fs::create_directories(job.directory);
    {
      std::ofstream echo = open_output(job.directory / "config.ini");
      echo << echo_config(job.config);
    }
    const Dataset data = load_dataset(job.config.data);
    const NetworkGraph graph = build_network(job.config.network, data.features(), data.classes);
    RunOptions options;
    options.log_period = job.config.output.log_period;
    result.report = run_experiment(graph, job.config.optimizer, data, options);
    write_metrics_csv(job.directory / "metrics.csv", result.report.records);
    write_timing_csv(job.directory / "timing.csv", result.report.records);
    write_report_json(job.directory / "report.json", result.report, result.seed);
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

}  // namespace

std::vector<RunResult> run_jobs(const std::vector<RunJob>& jobs, int workers) {
  std::vector<RunResult> results(jobs.size());
  const int threads = std::clamp(workers, 1, std::max(1, static_cast<int>(jobs.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = execute(jobs[i]);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) results[i] = execute(jobs[i]);
    });
  pool.clear();
  return results;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& results) {
  std::vector<SummaryRow> rows;
  std::map<std::string, std::vector<double>> acc;
  for (const RunResult& r : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) { return s.label == r.label; });
    if (it == rows.end()) {
      rows.push_back({r.label});
      it = rows.end() - 1;
    }
    ++it->runs;
    if (!r.error.empty()) ++it->failed;
    else acc[r.label].push_back(r.report.final_test_acc);
  }
  for (SummaryRow& row : rows) {
    const auto& v = acc[row.label];
    if (v.empty()) continue;
    double sum = 0.0;
    for (double a : v) sum += a;
    row.mean = sum / v.size();
    double sq = 0.0;
    for (double a : v) sq += (a - row.mean) * (a - row.mean);
    row.stddev = v.size() > 1 ? std::sqrt(sq / (v.size() - 1)) : 0.0;
  }
  return rows;
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::size_t width = 5;
  for (const SummaryRow& r : rows) width = std::max(width, r.label.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "label" << "  runs  failed  test acc (mean ± std)\n";
  for (const SummaryRow& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.label << "  " << std::setw(4) << r.runs << "  "
        << std::setw(6) << r.failed << "  " << std::fixed << std::setprecision(2) << 100 * r.mean << " ± "
        << 100 * r.stddev << "\n";
    out.unsetf(std::ios::floatfield);
  }
  return out.str();
}

}  // namespace dgnopt
