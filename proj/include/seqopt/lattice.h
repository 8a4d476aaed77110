// seqopt/lattice.h

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

#ifndef SEQOPT_LATTICE_H_
#define SEQOPT_LATTICE_H_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqopt/common.h"

namespace seqopt {

struct LatticeNode {
  int id = 0;
  int time = 0;  // frame index of this node
};

struct Arc {
  int start_node = 0;
  int end_node = 0;
  std::string phone_label;
  double lm_logprob = 0.0;
  std::vector<int> alignment;           // one state id per frame spanned
  std::optional<double> correctness;    // raw phone accuracy, if the file provides it
};

// DAG of competing hypotheses.  Node times strictly increase along arcs, which
// also guarantees acyclicity.
struct Lattice {
  std::string utt_id;
  std::vector<LatticeNode> nodes;  // sorted by id after Validate()
  std::vector<Arc> arcs;

  int NumNodes() const { return static_cast<int>(nodes.size()); }
  int NumArcs() const { return static_cast<int>(arcs.size()); }

  // Index into nodes for a node id; fails on unknown ids.
  int NodeIndex(int id) const;
  int StartNode() const { return start_index_; }  // unique source
  int EndNode() const { return end_index_; }      // unique sink
  int StartTime() const { return nodes[start_index_].time; }
  int EndTime() const { return nodes[end_index_].time; }
  int ArcStartTime(int a) const { return nodes[NodeIndex(arcs[a].start_node)].time; }
  int ArcEndTime(int a) const { return nodes[NodeIndex(arcs[a].end_node)].time; }

  // Checks the structural invariants (unique ids, increasing times, alignment
  // lengths, unique source/sink, reachability) and builds the internal index.
  void Validate();
  // State ids in alignments must be < num_states.
  void ValidateStateIds(int num_states) const;

 private:
  int start_index_ = -1, end_index_ = -1;
  std::vector<int> sorted_ids_;  // node ids sorted, parallel to nodes
};

// Numerator (reference-constrained) and denominator (competitor set) lattices
// for one utterance.
struct NumDenPair {
  Lattice num;
  Lattice den;
  void Validate();
};

struct TimedPhone {
  std::string label;
  int start = 0;  // frame span [start, end)
  int end = 0;
};

// kappa * sum_t (log softmax(logits_t)[s_t] - log_prior[s_t]) over the arc span.
double ArcAcousticScore(const Lattice &lat, int arc_index,
                        const Matrix<double> &logits,
                        const std::vector<double> &log_priors, double kappa);

// Scores every arc: acoustic score plus the arc's LM log probability.
std::vector<double> ScoreArcs(const Lattice &lat, const Matrix<double> &logits,
                              const std::vector<double> &log_priors, double kappa);

struct ForwardBackwardResult {
  std::vector<double> alpha, beta;  // per node, log domain
  std::vector<double> gamma;        // per arc posterior occupancy
  double log_z = kLogZero;
};

// Log-domain forward-backward over the DAG; fails if any node is unreachable
// or the total probability vanishes.
ForwardBackwardResult ForwardBackward(const Lattice &lat,
                                      const std::vector<double> &arc_scores);

struct MpeArcStats {
  std::vector<double> gamma_q;  // per arc occupancy
  std::vector<double> c_q;      // average correctness of paths through each arc
  double c_avg = 0.0;           // lattice-level expected path correctness
  double log_z = kLogZero;
};

// Second forward-backward pass propagating expected partial correctness.
MpeArcStats ComputeMpeStats(const Lattice &lat, const ForwardBackwardResult &fb,
                            const std::vector<double> &arc_scores,
                            const std::vector<double> &correctness);

// Overlap-based phone accuracy of one arc against the timed reference:
// max over reference phones z of (-1 + 2 e) for matching labels and (-1 + e)
// otherwise, with e the fraction of z covered by the arc.
double ApproxPhoneAccuracy(const Lattice &lat, int arc_index,
                           const std::vector<TimedPhone> &reference);

// Per-arc correctness: file-provided values win, otherwise computed from the
// reference.
std::vector<double> ArcCorrectness(const Lattice &lat,
                                   const std::vector<TimedPhone> &reference);

// gamma accumulated per frame and state: occ(t, k) = sum of gamma over arcs
// aligning frame t to state k.
Matrix<double> FrameStateOccupancy(const Lattice &lat, const std::vector<double> &gamma,
                                   int num_frames, int num_states);

// Text format, one record per utterance:
//   LATTICE <utt-id> <num-nodes> <num-arcs>
//   N <id> <frame-time>
//   A <start> <end> <phone> <lm-logprob> <comma-separated alignment> [<correctness>]
// '#' starts a comment.  Serialisation order is deterministic: nodes by id,
// arcs by (start, end, phone).
Lattice ParseLattice(std::istream &is, int *line_no);
std::vector<Lattice> ParseLatticeFile(const std::string &path);
void SerializeLattice(std::ostream &os, const Lattice &lat);
void WriteLatticeFile(const std::string &path, const std::vector<Lattice> &lats);

}  // namespace seqopt

#endif  // SEQOPT_LATTICE_H_
