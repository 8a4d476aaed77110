// seqopt/data.h

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

#ifndef SEQOPT_DATA_H_
#define SEQOPT_DATA_H_

#include <string>
#include <vector>

#include "seqopt/common.h"
#include "seqopt/lattice.h"

namespace seqopt {

struct Utterance {
  std::string utt_id;
  Matrix<double> features;            // T x feat_dim
  std::vector<int> frame_labels;      // per-frame state ids
  std::vector<TimedPhone> reference;  // timed phone sequence
  NumDenPair lattices;
  int NumFrames() const { return features.rows; }
};

struct Dataset {
  std::vector<Utterance> utts;
  int feat_dim = 0;
  int num_states = 0;
  int Size() const { return static_cast<int>(utts.size()); }
};

// Synthetic task: per-state Gaussian emitters, segment-structured utterances,
// numerator lattice = reference path, denominator = reference plus confusable
// competitor labels per segment.
struct SyntheticTaskConfig {
  uint64_t seed = 1;
  int num_train = 200;
  int num_valid = 40;
  int num_states = 24;
  int feat_dim = 8;
  int min_segments = 6, max_segments = 10;
  int min_segment_len = 3, max_segment_len = 6;
  double confusability = 0.7;  // 0 = denominator equals the reference path
  double emitter_sep = 2.0;
  double noise_std = 1.0;

  void Validate() const;
};

struct SyntheticTask {
  Dataset train;
  Dataset valid;
};

SyntheticTask GenerateSyntheticTask(const SyntheticTaskConfig &cfg);

// Dataset directory layout: <dir>/manifest.txt plus one subdirectory per
// split holding feats.txt, refs.txt, num.lat and den.lat.
void SaveDataset(const std::string &dir, const Dataset &data);
Dataset LoadDataset(const std::string &dir);

void SaveSyntheticTask(const std::string &dir, const SyntheticTask &task,
                       const SyntheticTaskConfig &cfg);

}  // namespace seqopt

#endif  // SEQOPT_DATA_H_
