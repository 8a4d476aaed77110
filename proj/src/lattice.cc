// seqopt/lattice.cc

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

#include "seqopt/lattice.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace seqopt {

int Lattice::NodeIndex(int id) const {
  auto it = std::lower_bound(sorted_ids_.begin(), sorted_ids_.end(), id);
  SEQOPT_CHECK(it != sorted_ids_.end() && *it == id, "lattice %s: unknown node id %d",
               utt_id.c_str(), id);
  return static_cast<int>(it - sorted_ids_.begin());
}

void Lattice::Validate() {
  SEQOPT_CHECK(!nodes.empty(), "lattice %s: no nodes", utt_id.c_str());
  std::sort(nodes.begin(), nodes.end(),
            [](const LatticeNode &a, const LatticeNode &b) { return a.id < b.id; });
  // Canonical arc order, so downstream log-sum accumulation does not depend
  // on the order arcs appeared in the file.
  std::sort(arcs.begin(), arcs.end(), [](const Arc &a, const Arc &b) {
    if (a.start_node != b.start_node) return a.start_node < b.start_node;
    if (a.end_node != b.end_node) return a.end_node < b.end_node;
    if (a.phone_label != b.phone_label) return a.phone_label < b.phone_label;
    return a.lm_logprob < b.lm_logprob;
  });
  sorted_ids_.resize(nodes.size());
  for (size_t i = 0; i < nodes.size(); i++) {
    sorted_ids_[i] = nodes[i].id;
    if (i > 0)
      SEQOPT_CHECK(nodes[i].id != nodes[i - 1].id, "lattice %s: duplicate node id %d",
                   utt_id.c_str(), nodes[i].id);
  }

  std::vector<int> in_deg(nodes.size(), 0), out_deg(nodes.size(), 0);
  for (const Arc &arc : arcs) {
    const int u = NodeIndex(arc.start_node), v = NodeIndex(arc.end_node);
    const int span = nodes[v].time - nodes[u].time;
    SEQOPT_CHECK(span > 0, "lattice %s: arc %d->%d does not advance in time",
                 utt_id.c_str(), arc.start_node, arc.end_node);
    SEQOPT_CHECK(static_cast<int>(arc.alignment.size()) == span,
                 "lattice %s: arc %d->%d alignment length %zu != time span %d",
                 utt_id.c_str(), arc.start_node, arc.end_node, arc.alignment.size(), span);
    SEQOPT_CHECK(!arc.alignment.empty(), "lattice %s: empty alignment", utt_id.c_str());
    out_deg[u]++;
    in_deg[v]++;
  }

  start_index_ = end_index_ = -1;
  for (size_t i = 0; i < nodes.size(); i++) {
    if (in_deg[i] == 0) {
      SEQOPT_CHECK(start_index_ < 0, "lattice %s: multiple source nodes (%d and %d)",
                   utt_id.c_str(), nodes[start_index_].id, nodes[i].id);
      start_index_ = static_cast<int>(i);
    }
    if (out_deg[i] == 0) {
      SEQOPT_CHECK(end_index_ < 0, "lattice %s: multiple sink nodes (%d and %d)",
                   utt_id.c_str(), nodes[end_index_].id, nodes[i].id);
      end_index_ = static_cast<int>(i);
    }
  }
  SEQOPT_CHECK(start_index_ >= 0 && end_index_ >= 0 && start_index_ != end_index_,
               "lattice %s: missing source or sink node", utt_id.c_str());

  // Reachability from the source and co-reachability from the sink.  Times
  // strictly increase along arcs, so a pass over arcs in topological order
  // (by start-node time) settles both.
  std::vector<int> order(arcs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return ArcStartTime(a) < ArcStartTime(b);
  });
  std::vector<char> fwd(nodes.size(), 0), bwd(nodes.size(), 0);
  fwd[start_index_] = 1;
  for (int a : order)
    if (fwd[NodeIndex(arcs[a].start_node)]) fwd[NodeIndex(arcs[a].end_node)] = 1;
  bwd[end_index_] = 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (bwd[NodeIndex(arcs[*it].end_node)]) bwd[NodeIndex(arcs[*it].start_node)] = 1;
  for (size_t i = 0; i < nodes.size(); i++) {
    SEQOPT_CHECK(fwd[i], "lattice %s: node %d unreachable from source", utt_id.c_str(),
                 nodes[i].id);
    SEQOPT_CHECK(bwd[i], "lattice %s: node %d cannot reach sink", utt_id.c_str(),
                 nodes[i].id);
  }
}

void Lattice::ValidateStateIds(int num_states) const {
  for (const Arc &arc : arcs)
    for (int s : arc.alignment)
      SEQOPT_CHECK(s >= 0 && s < num_states,
                   "lattice %s: state id %d out of range (K=%d)", utt_id.c_str(), s,
                   num_states);
}

void NumDenPair::Validate() {
  num.Validate();
  den.Validate();
  SEQOPT_CHECK(num.utt_id == den.utt_id, "lattice pair: utterance ids differ (%s vs %s)",
               num.utt_id.c_str(), den.utt_id.c_str());
  SEQOPT_CHECK(num.StartTime() == den.StartTime() && num.EndTime() == den.EndTime(),
               "lattice pair %s: frame ranges differ", num.utt_id.c_str());
}

namespace {

// log softmax of one logits row.
void LogSoftmaxRow(const double *a, int k_dim, double *out) {
  double mx = a[0];
  for (int k = 1; k < k_dim; k++) mx = std::max(mx, a[k]);
  double sum = 0.0;
  for (int k = 0; k < k_dim; k++) sum += std::exp(a[k] - mx);
  const double lse = mx + std::log(sum);
  for (int k = 0; k < k_dim; k++) out[k] = a[k] - lse;
}

}  // namespace

double ArcAcousticScore(const Lattice &lat, int arc_index, const Matrix<double> &logits,
                        const std::vector<double> &log_priors, double kappa) {
  const Arc &arc = lat.arcs[arc_index];
  const int t0 = lat.ArcStartTime(arc_index);
  const int t1 = lat.ArcEndTime(arc_index);
  SEQOPT_CHECK(t0 >= 0 && t1 <= logits.rows, "arc span [%d,%d) outside logits (%d frames)",
               t0, t1, logits.rows);
  SEQOPT_CHECK(static_cast<int>(log_priors.size()) == logits.cols,
               "log_priors size %zu != K %d", log_priors.size(), logits.cols);
  std::vector<double> ls(logits.cols);
  double score = 0.0;
  for (int t = t0; t < t1; t++) {
    const int s = arc.alignment[t - t0];
    SEQOPT_CHECK(s >= 0 && s < logits.cols, "arc state id %d out of range (K=%d)", s,
                 logits.cols);
    LogSoftmaxRow(logits.Row(t), logits.cols, ls.data());
    score += ls[s] - log_priors[s];
  }
  return kappa * score;
}

std::vector<double> ScoreArcs(const Lattice &lat, const Matrix<double> &logits,
                              const std::vector<double> &log_priors, double kappa) {
  SEQOPT_CHECK(static_cast<int>(log_priors.size()) == logits.cols,
               "log_priors size %zu != K %d", log_priors.size(), logits.cols);
  Matrix<double> frame_ll(logits.rows, logits.cols);
  std::vector<double> ls(logits.cols);
  for (int t = 0; t < logits.rows; t++) {
    LogSoftmaxRow(logits.Row(t), logits.cols, ls.data());
    for (int k = 0; k < logits.cols; k++) frame_ll(t, k) = ls[k] - log_priors[k];
  }
  std::vector<double> scores(lat.NumArcs());
  for (int a = 0; a < lat.NumArcs(); a++) {
    const Arc &arc = lat.arcs[a];
    const int t0 = lat.ArcStartTime(a);
    SEQOPT_CHECK(t0 >= 0 && lat.ArcEndTime(a) <= logits.rows,
                 "lattice %s: arc span outside utterance", lat.utt_id.c_str());
    double acc = 0.0;
    for (size_t i = 0; i < arc.alignment.size(); i++) {
      const int s = arc.alignment[i];
      SEQOPT_CHECK(s >= 0 && s < logits.cols, "lattice %s: state id %d out of range (K=%d)",
                   lat.utt_id.c_str(), s, logits.cols);
      acc += frame_ll(t0 + static_cast<int>(i), s);
    }
    scores[a] = kappa * acc + arc.lm_logprob;
  }
  return scores;
}

ForwardBackwardResult ForwardBackward(const Lattice &lat,
                                      const std::vector<double> &arc_scores) {
  SEQOPT_CHECK(arc_scores.size() == static_cast<size_t>(lat.NumArcs()),
               "forward-backward: %zu scores for %d arcs", arc_scores.size(), lat.NumArcs());
  const int n_nodes = lat.NumNodes();
  std::vector<int> order(lat.NumArcs());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return lat.ArcStartTime(a) < lat.ArcStartTime(b);
  });

  ForwardBackwardResult res;
  res.alpha.assign(n_nodes, kLogZero);
  res.beta.assign(n_nodes, kLogZero);
  res.alpha[lat.StartNode()] = 0.0;
  for (int a : order) {
    const int u = lat.NodeIndex(lat.arcs[a].start_node);
    const int v = lat.NodeIndex(lat.arcs[a].end_node);
    res.alpha[v] = LogAdd(res.alpha[v], res.alpha[u] + arc_scores[a]);
  }
  res.beta[lat.EndNode()] = 0.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int u = lat.NodeIndex(lat.arcs[*it].start_node);
    const int v = lat.NodeIndex(lat.arcs[*it].end_node);
    res.beta[u] = LogAdd(res.beta[u], arc_scores[*it] + res.beta[v]);
  }
  res.log_z = res.alpha[lat.EndNode()];
  SEQOPT_CHECK(std::isfinite(res.log_z), "lattice %s: empty lattice (logZ = -inf)",
               lat.utt_id.c_str());
  for (int i = 0; i < n_nodes; i++)
    SEQOPT_CHECK(std::isfinite(res.alpha[i]) && std::isfinite(res.beta[i]),
                 "lattice %s: node %d unreachable in forward-backward", lat.utt_id.c_str(),
                 lat.nodes[i].id);

  res.gamma.resize(lat.NumArcs());
  for (int a = 0; a < lat.NumArcs(); a++) {
    const int u = lat.NodeIndex(lat.arcs[a].start_node);
    const int v = lat.NodeIndex(lat.arcs[a].end_node);
    res.gamma[a] = std::exp(res.alpha[u] + arc_scores[a] + res.beta[v] - res.log_z);
  }
  return res;
}

MpeArcStats ComputeMpeStats(const Lattice &lat, const ForwardBackwardResult &fb,
                            const std::vector<double> &arc_scores,
                            const std::vector<double> &correctness) {
  SEQOPT_CHECK(correctness.size() == static_cast<size_t>(lat.NumArcs()),
               "mpe stats: %zu correctness values for %d arcs", correctness.size(),
               lat.NumArcs());
  std::vector<int> order(lat.NumArcs());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return lat.ArcStartTime(a) < lat.ArcStartTime(b);
  });

  // prefix[n]: expected correctness accumulated by paths arriving at n, under
  // the posterior restricted to those paths; suffix[n] likewise leaving n.
  std::vector<double> prefix(lat.NumNodes(), 0.0), suffix(lat.NumNodes(), 0.0);
  for (int a : order) {
    const int u = lat.NodeIndex(lat.arcs[a].start_node);
    const int v = lat.NodeIndex(lat.arcs[a].end_node);
    const double w = std::exp(fb.alpha[u] + arc_scores[a] - fb.alpha[v]);
    prefix[v] += w * (prefix[u] + correctness[a]);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int u = lat.NodeIndex(lat.arcs[*it].start_node);
    const int v = lat.NodeIndex(lat.arcs[*it].end_node);
    const double w = std::exp(arc_scores[*it] + fb.beta[v] - fb.beta[u]);
    suffix[u] += w * (correctness[*it] + suffix[v]);
  }

  MpeArcStats stats;
  stats.gamma_q = fb.gamma;
  stats.log_z = fb.log_z;
  stats.c_avg = prefix[lat.EndNode()];
  stats.c_q.resize(lat.NumArcs());
  for (int a = 0; a < lat.NumArcs(); a++) {
    const int u = lat.NodeIndex(lat.arcs[a].start_node);
    const int v = lat.NodeIndex(lat.arcs[a].end_node);
    stats.c_q[a] = prefix[u] + correctness[a] + suffix[v];
  }
  return stats;
}

double ApproxPhoneAccuracy(const Lattice &lat, int arc_index,
                           const std::vector<TimedPhone> &reference) {
  SEQOPT_CHECK(!reference.empty(), "phone accuracy: empty reference");
  const Arc &arc = lat.arcs[arc_index];
  const int t0 = lat.ArcStartTime(arc_index);
  const int t1 = lat.ArcEndTime(arc_index);
  double best = -std::numeric_limits<double>::infinity();
  for (const TimedPhone &z : reference) {
    SEQOPT_CHECK(z.end > z.start, "phone accuracy: empty reference phone '%s'",
                 z.label.c_str());
    const int ov = std::min(t1, z.end) - std::max(t0, z.start);
    const double e = ov > 0 ? static_cast<double>(ov) / (z.end - z.start) : 0.0;
    const double acc = z.label == arc.phone_label ? -1.0 + 2.0 * e : -1.0 + e;
    best = std::max(best, acc);
  }
  return best;
}

std::vector<double> ArcCorrectness(const Lattice &lat,
                                   const std::vector<TimedPhone> &reference) {
  std::vector<double> corr(lat.NumArcs());
  for (int a = 0; a < lat.NumArcs(); a++)
    corr[a] = lat.arcs[a].correctness ? *lat.arcs[a].correctness
                                      : ApproxPhoneAccuracy(lat, a, reference);
  return corr;
}

Matrix<double> FrameStateOccupancy(const Lattice &lat, const std::vector<double> &gamma,
                                   int num_frames, int num_states) {
  Matrix<double> occ(num_frames, num_states);
  for (int a = 0; a < lat.NumArcs(); a++) {
    const Arc &arc = lat.arcs[a];
    const int t0 = lat.ArcStartTime(a);
    for (size_t i = 0; i < arc.alignment.size(); i++) {
      const int t = t0 + static_cast<int>(i);
      SEQOPT_CHECK(t >= 0 && t < num_frames, "lattice %s: frame %d outside utterance",
                   lat.utt_id.c_str(), t);
      occ(t, arc.alignment[i]) += gamma[a];
    }
  }
  return occ;
}

// ---------------------------------------------------------------------------
// Text I/O
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void ParseFail(int line_no, const char *fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  Fail("lattice parse error at line %d: %s", line_no, buf);
}

bool NextContentLine(std::istream &is, int *line_no, std::string *line) {
  while (std::getline(is, *line)) {
    (*line_no)++;
    size_t pos = line->find('#');
    if (pos != std::string::npos) line->erase(pos);
    bool blank = true;
    for (char c : *line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (!blank) return true;
  }
  return false;
}

}  // namespace

Lattice ParseLattice(std::istream &is, int *line_no) {
  std::string line;
  SEQOPT_CHECK(NextContentLine(is, line_no, &line), "lattice parse: unexpected end of input");
  std::istringstream hs(line);
  std::string tag;
  Lattice lat;
  int n_nodes = 0, n_arcs = 0;
  hs >> tag >> lat.utt_id >> n_nodes >> n_arcs;
  if (tag != "LATTICE" || lat.utt_id.empty() || n_nodes <= 0 || n_arcs < 0 || hs.fail())
    ParseFail(*line_no, "expected 'LATTICE <utt-id> <num-nodes> <num-arcs>', got '%s'",
              line.c_str());
  for (int i = 0; i < n_nodes; i++) {
    if (!NextContentLine(is, line_no, &line)) ParseFail(*line_no, "truncated node list");
    std::istringstream ls(line);
    LatticeNode node;
    ls >> tag >> node.id >> node.time;
    if (tag != "N" || ls.fail()) ParseFail(*line_no, "bad node line '%s'", line.c_str());
    lat.nodes.push_back(node);
  }
  for (int i = 0; i < n_arcs; i++) {
    if (!NextContentLine(is, line_no, &line)) ParseFail(*line_no, "truncated arc list");
    std::istringstream ls(line);
    Arc arc;
    std::string align;
    ls >> tag >> arc.start_node >> arc.end_node >> arc.phone_label >> arc.lm_logprob >>
        align;
    if (tag != "A" || ls.fail()) ParseFail(*line_no, "bad arc line '%s'", line.c_str());
    double corr;
    if (ls >> corr) arc.correctness = corr;
    std::istringstream as(align);
    std::string tok;
    while (std::getline(as, tok, ',')) {
      if (tok.empty()) ParseFail(*line_no, "empty alignment entry in '%s'", align.c_str());
      arc.alignment.push_back(std::atoi(tok.c_str()));
    }
    if (arc.alignment.empty()) ParseFail(*line_no, "arc with empty alignment");
    lat.arcs.push_back(std::move(arc));
  }
  try {
    lat.Validate();
  } catch (const Error &e) {
    ParseFail(*line_no, "%s", e.what());
  }
  return lat;
}

std::vector<Lattice> ParseLatticeFile(const std::string &path) {
  std::ifstream is(path);
  SEQOPT_CHECK(is.good(), "cannot open lattice file '%s'", path.c_str());
  std::vector<Lattice> lats;
  int line_no = 0;
  while (true) {
    // Peek for another record.
    std::streampos pos = is.tellg();
    std::string line;
    int probe_line = line_no;
    if (!NextContentLine(is, &probe_line, &line)) break;
    is.seekg(pos);
    lats.push_back(ParseLattice(is, &line_no));
  }
  return lats;
}

void SerializeLattice(std::ostream &os, const Lattice &lat) {
  std::vector<LatticeNode> nodes = lat.nodes;
  std::sort(nodes.begin(), nodes.end(),
            [](const LatticeNode &a, const LatticeNode &b) { return a.id < b.id; });
  std::vector<const Arc *> arcs;
  for (const Arc &a : lat.arcs) arcs.push_back(&a);
  std::sort(arcs.begin(), arcs.end(), [](const Arc *a, const Arc *b) {
    if (a->start_node != b->start_node) return a->start_node < b->start_node;
    if (a->end_node != b->end_node) return a->end_node < b->end_node;
    if (a->phone_label != b->phone_label) return a->phone_label < b->phone_label;
    return a->lm_logprob < b->lm_logprob;
  });
  os << "LATTICE " << lat.utt_id << ' ' << nodes.size() << ' ' << arcs.size() << '\n';
  for (const LatticeNode &n : nodes) os << "N " << n.id << ' ' << n.time << '\n';
  char buf[32];
  for (const Arc *a : arcs) {
    std::snprintf(buf, sizeof(buf), "%.17g", a->lm_logprob);
    os << "A " << a->start_node << ' ' << a->end_node << ' ' << a->phone_label << ' ' << buf
       << ' ';
    for (size_t i = 0; i < a->alignment.size(); i++) {
      if (i) os << ',';
      os << a->alignment[i];
    }
    if (a->correctness) {
      std::snprintf(buf, sizeof(buf), "%.17g", *a->correctness);
      os << ' ' << buf;
    }
    os << '\n';
  }
}

void WriteLatticeFile(const std::string &path, const std::vector<Lattice> &lats) {
  std::ofstream os(path);
  SEQOPT_CHECK(os.good(), "cannot write lattice file '%s'", path.c_str());
  for (const Lattice &lat : lats) SerializeLattice(os, lat);
  SEQOPT_CHECK(os.good(), "write failed for lattice file '%s'", path.c_str());
}

}  // namespace seqopt
