// tests/test_util.hpp

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

// Shared oracles: dense linear algebra, finite differences, lattice path
// enumeration.  Everything here is independent of the library's solver and
// propagation paths so it can serve as ground truth.

#ifndef SEQOPT_TESTS_TEST_UTIL_HPP_
#define SEQOPT_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "seqopt/common.h"
#include "seqopt/lattice.h"
#include "seqopt/model.h"

namespace seqopt::test {

using Dense = std::vector<std::vector<double>>;

inline Dense ZeroDense(int r, int c) { return Dense(r, std::vector<double>(c, 0.0)); }

inline std::vector<double> DenseMatVec(const Dense &a, const std::vector<double> &x) {
  std::vector<double> y(a.size(), 0.0);
  for (size_t i = 0; i < a.size(); i++)
    for (size_t j = 0; j < x.size(); j++) y[i] += a[i][j] * x[j];
  return y;
}

// Gaussian elimination with partial pivoting.
inline std::vector<double> DenseSolve(Dense a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; col++) {
    int piv = col;
    for (int r = col + 1; r < n; r++)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < n; r++) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < n; c++) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; r--) {
    double acc = b[r];
    for (int c = r + 1; c < n; c++) acc -= a[r][c] * x[c];
    x[r] = acc / a[r][r];
  }
  return x;
}

// SPD matrix with the given eigenvalue multiset (Q Lambda Q^T, Q seeded).
inline Dense SpdWithSpectrum(const std::vector<double> &eigs, uint64_t seed) {
  const int n = static_cast<int>(eigs.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dense q = ZeroDense(n, n);
  for (int i = 0; i < n; i++) {
    for (int j = 0; j < n; j++) q[i][j] = gauss(rng);
    for (int k = 0; k < i; k++) {
      double dot = 0;
      for (int j = 0; j < n; j++) dot += q[i][j] * q[k][j];
      for (int j = 0; j < n; j++) q[i][j] -= dot * q[k][j];
    }
    double norm = 0;
    for (int j = 0; j < n; j++) norm += q[i][j] * q[i][j];
    norm = std::sqrt(norm);
    for (int j = 0; j < n; j++) q[i][j] /= norm;
  }
  Dense a = ZeroDense(n, n);
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++)
      for (int k = 0; k < n; k++) a[i][j] += q[k][i] * eigs[k] * q[k][j];
  return a;
}

inline ParamVector RandomVector(size_t dim, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ParamVector v(dim);
  for (size_t i = 0; i < dim; i++) v.data[i] = scale * gauss(rng);
  return v;
}

inline Matrix<double> RandomFrames(int rows, int cols, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (double &x : m.data) x = scale * gauss(rng);
  return m;
}

inline double RelErr(double got, double want) {
  return std::fabs(got - want) / std::max(1e-300, std::fabs(want));
}

inline double RelL2(const std::vector<double> &got, const std::vector<double> &want) {
  double num = 0, den = 0;
  for (size_t i = 0; i < got.size(); i++) {
    const double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(1e-300, std::sqrt(den));
}

// Central finite differences of a scalar function of the parameters.
inline ParamVector FiniteDiffGradient(const std::function<double(const ParamVector &)> &f,
                                      const ParamVector &theta, double eps) {
  ParamVector grad(theta.Dim());
  ParamVector point = theta;
  for (size_t i = 0; i < theta.Dim(); i++) {
    point.data[i] = theta.data[i] + eps;
    const double hi = f(point);
    point.data[i] = theta.data[i] - eps;
    const double lo = f(point);
    point.data[i] = theta.data[i];
    grad.data[i] = (hi - lo) / (2 * eps);
  }
  return grad;
}

// Central differences of the logits along direction v: (a(theta + eps v) -
// a(theta - eps v)) / (2 eps); the ground truth for R-forward.
inline Matrix<double> DirectionalLogitsDiff(const Network &net, const ParamVector &theta,
                                            const ParamVector &v,
                                            const Matrix<double> &feats, double eps) {
  ParamVector hi = theta, lo = theta;
  Axpy(eps, v, &hi);
  Axpy(-eps, v, &lo);
  const Matrix<double> ahi = net.Forward<double>(hi, feats).Logits();
  const Matrix<double> alo = net.Forward<double>(lo, feats).Logits();
  Matrix<double> out(ahi.rows, ahi.cols);
  for (size_t i = 0; i < out.data.size(); i++)
    out.data[i] = (ahi.data[i] - alo.data[i]) / (2 * eps);
  return out;
}

// Exhaustive path enumeration over a lattice: posteriors, correctness
// averages and logZ, independently of the forward-backward recursions.
struct EnumeratedPaths {
  double log_z = kLogZero;
  double c_avg = 0.0;
  std::vector<double> gamma;  // per arc
  std::vector<double> c_q;    // per arc
  int num_paths = 0;
};

inline EnumeratedPaths EnumeratePaths(const Lattice &lat,
                                      const std::vector<double> &arc_scores,
                                      const std::vector<double> &correctness) {
  struct Path {
    std::vector<int> arcs;
    double score = 0.0;
    double corr = 0.0;
  };
  std::vector<Path> paths;
  std::vector<std::vector<int>> out_arcs(lat.NumNodes());
  for (int a = 0; a < lat.NumArcs(); a++)
    out_arcs[lat.NodeIndex(lat.arcs[a].start_node)].push_back(a);
  std::function<void(int, Path &)> dfs = [&](int node, Path &cur) {
    if (node == lat.EndNode()) {
      paths.push_back(cur);
      return;
    }
    for (int a : out_arcs[node]) {
      cur.arcs.push_back(a);
      cur.score += arc_scores[a];
      cur.corr += correctness.empty() ? 0.0 : correctness[a];
      dfs(lat.NodeIndex(lat.arcs[a].end_node), cur);
      cur.arcs.pop_back();
      cur.score -= arc_scores[a];
      cur.corr -= correctness.empty() ? 0.0 : correctness[a];
    }
  };
  Path cur;
  dfs(lat.StartNode(), cur);

  EnumeratedPaths out;
  out.num_paths = static_cast<int>(paths.size());
  for (const Path &p : paths) out.log_z = LogAdd(out.log_z, p.score);
  out.gamma.assign(lat.NumArcs(), 0.0);
  out.c_q.assign(lat.NumArcs(), 0.0);
  for (const Path &p : paths) {
    const double w = std::exp(p.score - out.log_z);
    out.c_avg += w * p.corr;
    for (int a : p.arcs) {
      out.gamma[a] += w;
      out.c_q[a] += w * p.corr;
    }
  }
  for (int a = 0; a < lat.NumArcs(); a++)
    if (out.gamma[a] > 0) out.c_q[a] /= out.gamma[a];
  return out;
}

// Hand-built lattice helpers for loss/lattice tests.
struct LatticeBuilder {
  Lattice lat;
  explicit LatticeBuilder(const std::string &id) { lat.utt_id = id; }
  LatticeBuilder &Node(int id, int time) {
    lat.nodes.push_back({id, time});
    return *this;
  }
  LatticeBuilder &ArcTo(int from, int to, const std::string &phone,
                        std::vector<int> alignment, double lm = 0.0) {
    Arc arc;
    arc.start_node = from;
    arc.end_node = to;
    arc.phone_label = phone;
    arc.lm_logprob = lm;
    arc.alignment = std::move(alignment);
    lat.arcs.push_back(std::move(arc));
    return *this;
  }
  Lattice Build() {
    lat.Validate();
    return lat;
  }
};

}  // namespace seqopt::test

#endif  // SEQOPT_TESTS_TEST_UTIL_HPP_
