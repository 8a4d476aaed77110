// seqopt/common.h

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

#ifndef SEQOPT_COMMON_H_
#define SEQOPT_COMMON_H_

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqopt {

// All thrown errors derive from this so the CLI can report them uniformly.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void Fail(const char *fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  throw Error(buf);
}

#define SEQOPT_CHECK(cond, ...)        \
  do {                                 \
    if (!(cond)) ::seqopt::Fail(__VA_ARGS__); \
  } while (0)

enum class Precision { kFloat32, kFloat64 };

inline const char *PrecisionName(Precision p) {
  return p == Precision::kFloat32 ? "f32" : "f64";
}

inline Precision PrecisionFromName(const std::string &s) {
  if (s == "f32") return Precision::kFloat32;
  if (s == "f64") return Precision::kFloat64;
  Fail("unknown precision '%s' (expected f32 or f64)", s.c_str());
}

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without leaving the log domain.
inline double LogAdd(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// T x cols matrix of activations, row per frame.
template <typename Real>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<Real> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, Real(0)) {}

  Real *Row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const Real *Row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  Real &operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  Real operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  void SetZero() { std::fill(data.begin(), data.end(), Real(0)); }

  bool AllFinite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// Flat view of all model parameters (and vectors shaped like them: gradients,
// CG directions, updates).  Values are stored in double; the precision tag
// says which arithmetic the model kernels should run in.
struct ParamVector {
  std::vector<double> data;
  Precision prec = Precision::kFloat64;

  ParamVector() = default;
  explicit ParamVector(size_t d, Precision p = Precision::kFloat64)
      : data(d, 0.0), prec(p) {}

  size_t Dim() const { return data.size(); }
  double &operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  bool AllFinite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double Dot(const ParamVector &a, const ParamVector &b) {
  SEQOPT_CHECK(a.Dim() == b.Dim(), "Dot: dim mismatch %zu vs %zu", a.Dim(), b.Dim());
  double sum = 0.0;
  for (size_t i = 0; i < a.Dim(); i++) sum += a.data[i] * b.data[i];
  return sum;
}

inline double Norm2(const ParamVector &a) { return std::sqrt(Dot(a, a)); }

// y += alpha * x
inline void Axpy(double alpha, const ParamVector &x, ParamVector *y) {
  SEQOPT_CHECK(x.Dim() == y->Dim(), "Axpy: dim mismatch");
  for (size_t i = 0; i < x.Dim(); i++) y->data[i] += alpha * x.data[i];
}

inline void Scale(double alpha, ParamVector *x) {
  for (double &v : x->data) v *= alpha;
}

// Deterministic seed mixing for derived RNG streams (seed, stream tag, index).
inline uint64_t MixSeed(uint64_t seed, uint64_t tag, uint64_t index = 0) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1) + 0xbf58476d1ce4e5b9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace seqopt

#endif  // SEQOPT_COMMON_H_
