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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <unistd.h>

#include "dgnopt/error.hpp"
#include "dgnopt/harness.hpp"

using namespace dgnopt;
namespace fs = std::filesystem;

namespace {

/// Scratch directory removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("dgnopt-test-" + name + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::invalid_argument;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dgnopt");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config text round trips through its echo") {
  const ExperimentConfig config = parse_config(R"(
# comment
[network]
preset = chain
layers = 16, 8
[optimizer]
mode = fne
precondition = ekfac
lr = 0.3
milestones = 100, 200
players_split = 2
state_curvature = gauss-newton
apply_feedback = false
[data]
name = moons
noise = 0.25
[output]
log_period = 3
)");
  CHECK(config.network.layers == std::vector<int>{16, 8});
  CHECK(config.optimizer.mode == TrainMode::fne);
  CHECK(config.optimizer.precondition.kind == PreconditionKind::ekfac);
  CHECK(config.optimizer.lr.milestones == std::vector<int>{100, 200});
  CHECK(config.optimizer.state_curvature.mode == StateCurvatureMode::gauss_newton);
  CHECK_FALSE(config.optimizer.apply_feedback);
  CHECK(config.data.noise == 0.25);
  CHECK(parse_config(echo_config(config)) == config);
  CHECK(parse_config(echo_config(ExperimentConfig{})) == ExperimentConfig{});
}

TEST_CASE("config errors name what is wrong") {
  CHECK(kind_of([] { parse_config("[optimizer]\nlearning_rate = 1\n"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_config("[solver]\n"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_config("lr = 1\n"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_config("[optimizer]\nlr = 1\nlr = 2\n"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_config("[optimizer]\nlr = fast\n"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_config("[optimizer]\nmode = sgd\n"); }) == ErrorKind::config);
  try {
    parse_config("[optimizer]\nlearning_rate = 1\n");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("overrides address section and key") {
  ExperimentConfig config;
  apply_override(config, "optimizer.lr=0.7");
  apply_override(config, "data.name = mnist");
  CHECK(config.optimizer.lr.base == 0.7);
  CHECK(config.data.name == "mnist");
  CHECK_THROWS_AS(apply_override(config, "lr=0.7"), Error);
  CHECK_THROWS_AS(apply_override(config, "optimizer.nope=1"), Error);
  const std::vector<std::string> keys = config_keys();
  CHECK(std::find(keys.begin(), keys.end(), "optimizer.apply_feedback") != keys.end());
}

TEST_CASE("metrics files") {
  TempDir dir("metrics");
  MetricRecord r;
  r.iteration = 10;
  r.train_loss = 0.5;
  r.alignment = 2;
  r.wall_ms = 12.5;
  write_metrics_csv(dir.path / "metrics.csv", {r});
  write_timing_csv(dir.path / "timing.csv", {r});
  const std::string csv = slurp(dir.path / "metrics.csv");
  CHECK(csv.rfind("iteration,train_loss,train_acc,val_acc,step_size,mean_abs_k,mean_frob_K,guard_count,alignment\n", 0) == 0);
  CHECK(csv.find("wall") == std::string::npos);
  CHECK(slurp(dir.path / "timing.csv").find("12.5") != std::string::npos);
}

TEST_CASE("IDX files round trip and reject corruption") {
  TempDir dir("idx");
  IdxData data;
  data.images = Matrix::Zero(6, 3);
  data.images << 0, 1, 2, 3, 4, 5, 255, 128, 7, 0, 0, 9, 10, 11, 12, 13, 14, 15;
  data.labels = {2, 0, 1};
  const std::string images = (dir.path / "img").string(), labels = (dir.path / "lab").string();
  write_idx(images, labels, data, {2, 3});
  const IdxData back = read_idx(images, labels, 3);
  CHECK(back.images == data.images);
  CHECK(back.labels == data.labels);
  CHECK(kind_of([&] { read_idx(images, labels, 2); }) == ErrorKind::label_range);

  const std::string raw = slurp(images);
  std::ofstream(dir.path / "short", std::ios::binary) << raw.substr(0, raw.size() - 4);
  CHECK(kind_of([&] { read_idx((dir.path / "short").string(), labels, 3); }) == ErrorKind::truncated_file);
  std::string bad = raw;
  bad[2] = 0x0b;
  std::ofstream(dir.path / "bad", std::ios::binary) << bad;
  CHECK(kind_of([&] { read_idx((dir.path / "bad").string(), labels, 3); }) == ErrorKind::bad_magic);
  CHECK(kind_of([&] { read_idx((dir.path / "missing").string(), labels, 3); }) == ErrorKind::io);
}

TEST_CASE("mean pooling") {
  Matrix img(16, 1);
  for (int i = 0; i < 16; ++i) img(i) = i;
  const Matrix pooled = pool_images(img, 2);
  REQUIRE(pooled.rows() == 4);
  CHECK(pooled(0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(pooled(3) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
}

TEST_CASE("synthetic sets are deterministic and splits stratified") {
  const Split a = make_blobs(300, 0.4, 7), b = make_blobs(300, 0.4, 7);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(make_moons(300, 0.4, 7).x != make_moons(300, 0.4, 8).x);
  SplitSpec spec;
  spec.val = 100;
  const Dataset d = split_dataset("blobs", a, 2, spec);
  CHECK(d.train.size() + d.val.size() + d.test.size() == 300);
  for (const Split* s : {&d.train, &d.val, &d.test}) {
    const std::vector<int> h = class_histogram(s->y, 2);
    CHECK(std::abs(h[0] - h[1]) <= 0.2 * s->size() / 2.0);
  }
  CHECK(d.train.x.rowwise().mean().norm() < 1e-12);
}

TEST_CASE("bundled digits load with balanced classes") {
  DataSpec spec;
  spec.name = "mnist";
  spec.path = "mnist10k";
  spec.pool = 2;
  const Dataset d = load_dataset(spec);
  CHECK(d.classes == 10);
  CHECK(d.features() == 196);
  CHECK(d.train.size() + d.val.size() + d.test.size() == 10000);
  const std::vector<int> h = class_histogram(d.train.y, 10);
  const double expected = d.train.size() / 10.0;
  for (int c : h) CHECK(std::abs(c - expected) <= 0.2 * expected);
}

TEST_CASE("seeded jobs write identical metrics") {
  TempDir dir("jobs");
  ExperimentConfig config = parse_config("[network]\npreset = chain\nlayers = 6\n[data]\nname = blobs\nsamples = 300\nval = 50\n"
                                         "[optimizer]\nmax_iterations = 12\nbatch_size = 16\nlr = 0.05\n[output]\nlog_period = 4\n");
  config.seed_count = 2;
  const auto first = run_jobs(seed_jobs(config, "a", dir.path / "1"), 1);
  const auto second = run_jobs(seed_jobs(config, "a", dir.path / "2"), 1);
  REQUIRE(first.size() == 2);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].error.empty());
    CHECK(slurp(first[i].directory / "metrics.csv") == slurp(second[i].directory / "metrics.csv"));
    CHECK(fs::exists(first[i].directory / "report.json"));
  }
  CHECK(first[0].seed != first[1].seed);
  const auto rows = summarize(first);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].runs == 2);
}

TEST_CASE("command line exit codes") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"keys"}) == 0);
  CHECK(run_cli({"enumerate-alignments", "--override", "network.preset=chain"}) == 0);
  CHECK(run_cli({"enumerate-alignments", "--override", "optimizer.bogus=1"}) == 1);
}
