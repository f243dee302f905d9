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

#include <benchmark/benchmark.h>

#include "dgnopt/kernels.hpp"
#include "dgnopt/oracle.hpp"

using namespace dgnopt;
using oracle::random_matrix;

namespace {

constexpr int kIn = 196, kOut = 64;

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const Matrix theta = random_matrix(kOut, kIn + 1, 1);
  const Matrix z = random_matrix(kIn, batch, 2);
  Matrix pre;
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::dense_forward(theta.data(), kIn, kOut, z, pre);
    else
      kernels::serial::dense_forward(theta.data(), kIn, kOut, z, pre);
    benchmark::DoNotOptimize(pre.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Parallel>
void BM_ParamStateRows(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const Matrix inputs = random_matrix(kOut + 1, batch, 3);
  const Matrix out_scale = random_matrix(kOut, batch, 4);
  const Matrix stage_scale = random_matrix(kOut, batch, 5);
  const Matrix weights = random_matrix(kOut, kOut, 6);
  const Matrix state_map = random_matrix(kOut, kOut, 7);
  for (auto _ : state) {
    Matrix r = Parallel ? kernels::param_state_rows(inputs, out_scale, stage_scale, weights, state_map)
                        : kernels::serial::param_state_rows(inputs, out_scale, stage_scale, weights, state_map);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Parallel>
void BM_ColumnArgmax(benchmark::State& state) {
  const Matrix scores = random_matrix(10, static_cast<int>(state.range(0)), 8);
  for (auto _ : state) {
    Eigen::VectorXi idx = Parallel ? kernels::column_argmax(scores) : kernels::serial::column_argmax(scores);
    benchmark::DoNotOptimize(idx.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/omp")->Arg(128)->Arg(1024);
BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial")->Arg(128)->Arg(1024);
BENCHMARK(BM_ParamStateRows<true>)->Name("param_state_rows/omp")->Arg(32)->Arg(128);
BENCHMARK(BM_ParamStateRows<false>)->Name("param_state_rows/serial")->Arg(32)->Arg(128);
BENCHMARK(BM_ColumnArgmax<true>)->Name("column_argmax/omp")->Arg(2000)->Arg(20000);
BENCHMARK(BM_ColumnArgmax<false>)->Name("column_argmax/serial")->Arg(2000)->Arg(20000);

BENCHMARK_MAIN();
