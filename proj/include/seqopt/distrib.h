// seqopt/distrib.h

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

#ifndef SEQOPT_DISTRIB_H_
#define SEQOPT_DISTRIB_H_

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "seqopt/common.h"

namespace seqopt {

struct WorkItemFailure {
  int index = -1;
  std::string message;
};

// Per-item map over a worker pool followed by a reduction in item order.
// Results are combined by index, never by completion order, so the total is
// bit-identical for any worker count at fixed precision.  Items whose worker
// throws are skipped and reported in the failure list.
template <typename Result>
struct MapReduceOutcome {
  std::optional<Result> total;  // empty if every item failed or n == 0
  int items_done = 0;
  std::vector<WorkItemFailure> failures;
};

template <typename Result, typename MapFn, typename CombineFn>
MapReduceOutcome<Result> MapReduce(int num_items, MapFn &&map_fn, CombineFn &&combine,
                                   int num_workers) {
  SEQOPT_CHECK(num_workers >= 1, "map_reduce: num_workers must be >= 1");
  MapReduceOutcome<Result> out;
  if (num_items == 0) return out;

  std::vector<std::optional<Result>> slots(num_items);
  std::mutex fail_mutex;
  std::atomic<int> next{0};
  auto run = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= num_items) return;
      try {
        slots[i] = map_fn(i);
      } catch (const std::exception &e) {
        std::lock_guard<std::mutex> lock(fail_mutex);
        out.failures.push_back({i, e.what()});
      }
    }
  };

  if (num_workers == 1) {
    run();
  } else {
    std::vector<std::thread> threads;
    const int n_threads = std::min(num_workers, num_items);
    threads.reserve(n_threads);
    for (int w = 0; w < n_threads; w++) threads.emplace_back(run);
    for (auto &t : threads) t.join();
  }

  // Left fold in item order (f64 accumulation happens inside combine).
  for (int i = 0; i < num_items; i++) {
    if (!slots[i]) continue;
    out.items_done++;
    if (!out.total)
      out.total = std::move(*slots[i]);
    else
      combine(&*out.total, std::move(*slots[i]));
  }
  std::sort(out.failures.begin(), out.failures.end(),
            [](const WorkItemFailure &a, const WorkItemFailure &b) { return a.index < b.index; });
  return out;
}

// Left fold of keyed partials in key order.
template <typename Key, typename T, typename CombineFn>
T DeterministicReduce(std::vector<std::pair<Key, T>> partials, CombineFn &&combine) {
  SEQOPT_CHECK(!partials.empty(), "deterministic_reduce: no partials");
  std::sort(partials.begin(), partials.end(),
            [](const auto &a, const auto &b) { return a.first < b.first; });
  T total = std::move(partials.front().second);
  for (size_t i = 1; i < partials.size(); i++) combine(&total, std::move(partials[i].second));
  return total;
}

}  // namespace seqopt

#endif  // SEQOPT_DISTRIB_H_
