// tests/test_distrib.cc

// Copyright 2026  The seqopt authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>

#include "doctest.h"
#include "seqopt/data.h"
#include "seqopt/distrib.h"
#include "seqopt/loss.h"
#include "seqopt/optim.h"
#include "test_util.hpp"

using namespace seqopt;
using namespace seqopt::test;

TEST_CASE("map_reduce with one worker equals a plain sequential fold") {
  auto map_fn = [](int i) { return 0.1 * (i + 1); };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out = MapReduce<double>(17, map_fn, combine, 1);
  double want = 0;
  for (int i = 0; i < 17; i++) want += 0.1 * (i + 1);
  CHECK(out.items_done == 17);
  CHECK(*out.total == want);
}

TEST_CASE("map_reduce totals are bit-identical for any worker count") {
  // sums of values chosen to make f64 addition order visible
  auto map_fn = [](int i) {
    double x = 1.0;
    for (int k = 0; k < i % 7; k++) x /= 3.0;
    return x * ((i % 2) ? 1.0 : -1.0) * 1e10 + 1e-7 * i;
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto ref = MapReduce<double>(101, map_fn, combine, 1);
  for (int workers : {2, 3, 4, 8}) {
    auto out = MapReduce<double>(101, map_fn, combine, workers);
    CHECK(out.items_done == 101);
    CHECK(*out.total == *ref.total);  // exact equality
  }
}

TEST_CASE("map_reduce records failures and skips those items") {
  auto map_fn = [](int i) {
    if (i % 5 == 3) throw Error("boom " + std::to_string(i));
    return 1.0;
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out = MapReduce<double>(20, map_fn, combine, 4);
  CHECK(out.items_done == 16);
  CHECK(*out.total == 16.0);
  REQUIRE(out.failures.size() == 4);
  CHECK(out.failures[0].index == 3);
  CHECK(out.failures[0].message == "boom 3");
  CHECK(out.failures[3].index == 18);
}

TEST_CASE("every item failing leaves an empty total") {
  auto map_fn = [](int) -> double { throw Error("nope"); };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto out = MapReduce<double>(3, map_fn, combine, 2);
  CHECK_FALSE(out.total.has_value());
  CHECK(out.items_done == 0);
  CHECK(out.failures.size() == 3);
}

TEST_CASE("deterministic_reduce folds in key order regardless of arrival order") {
  std::vector<std::pair<int, double>> parts = {{2, 1e-16}, {0, 1.0}, {1, 1e-16}};
  auto combine = [](double *acc, double &&x) { *acc += x; };
  const double a = DeterministicReduce(parts, combine);
  std::vector<std::pair<int, double>> shuffled = {{1, 1e-16}, {2, 1e-16}, {0, 1.0}};
  const double b = DeterministicReduce(shuffled, combine);
  CHECK(a == b);
  CHECK(a == ((1.0 + 1e-16) + 1e-16));  // matches the naive sequential sum
  std::vector<std::pair<int, double>> single = {{5, 42.0}};
  CHECK(DeterministicReduce(single, combine) == 42.0);
}

TEST_CASE("accumulated gradients are bit-identical across worker counts") {
  SyntheticTaskConfig task;
  task.seed = 13;
  task.num_train = 12;
  task.num_valid = 0;
  task.num_states = 8;
  task.feat_dim = 5;
  SyntheticTask data = GenerateSyntheticTask(task);
  std::vector<const Utterance *> batch;
  for (const auto &u : data.train.utts) batch.push_back(&u);
  Network net(ModelSpec::Parse("fc:10:sigmoid fc:8:identity", 5));
  ParamVector params = net.RandomInit(3, 0.4);
  LossConfig loss;
  loss.kind = LossKind::kMpe;

  GradientResult ref = AccumulateGradient(net, params, batch, loss, true, 1);
  for (int workers : {2, 4}) {
    GradientResult got = AccumulateGradient(net, params, batch, loss, true, workers);
    CHECK(got.mean_loss == ref.mean_loss);
    CHECK(got.grad.data == ref.grad.data);
  }
}

TEST_CASE("worker pool speedup on balanced items" * doctest::skip(false)) {
  // spin-work items; the threshold is soft and only reported
  auto busy = [](int) {
    volatile double x = 1.0;
    for (int k = 0; k < 4000000; k++) x = x * 1.0000001 + 1e-9;
    return static_cast<double>(x);
  };
  auto combine = [](double *acc, double &&x) { *acc += x; };
  auto time_run = [&](int workers) {
    const auto t0 = std::chrono::steady_clock::now();
    MapReduce<double>(4, busy, combine, workers);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double t1 = time_run(1);
  const double t4 = time_run(4);
  const double speedup = t1 / t4;
  MESSAGE("4-worker speedup over 1 worker on 4 items: ", speedup,
          " (soft target 2.5 on a 4-core host)");
  CHECK(speedup > 1.0);
}
