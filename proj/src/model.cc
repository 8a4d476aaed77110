// seqopt/model.cc

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

#include "seqopt/model.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace seqopt {

namespace {

const char *KindName(LayerKind k) {
  switch (k) {
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kTdnnSplice: return "tdnn";
    case LayerKind::kRecurrent: return "rnn";
    case LayerKind::kLstm: return "lstm";
  }
  return "?";
}

const char *ActName(Activation a) {
  switch (a) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation ActFromName(const std::string &s) {
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  Fail("unknown activation '%s'", s.c_str());
}

std::vector<std::string> SplitChar(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename Real>
inline Real ApplyAct(Activation act, Real a) {
  switch (act) {
    case Activation::kSigmoid: return Real(1) / (Real(1) + std::exp(-a));
    case Activation::kTanh: return std::tanh(a);
    case Activation::kRelu: return a > Real(0) ? a : Real(0);
    case Activation::kIdentity: return a;
  }
  return a;
}

// Derivative h'(a) recovered from the pre/post activation pair on the tape.
// ReLU at exactly zero uses the zero subgradient.
template <typename Real>
inline Real ActDeriv(Activation act, Real a, Real x) {
  switch (act) {
    case Activation::kSigmoid: return x * (Real(1) - x);
    case Activation::kTanh: return Real(1) - x * x;
    case Activation::kRelu: return a > Real(0) ? Real(1) : Real(0);
    case Activation::kIdentity: return Real(1);
  }
  return Real(1);
}

template <typename Real>
std::vector<Real> CastSlice(const ParamVector &p, size_t off, size_t len) {
  std::vector<Real> out(len);
  for (size_t i = 0; i < len; i++) out[i] = static_cast<Real>(p.data[off + i]);
  return out;
}

inline int ClampFrame(int t, int num_frames) {
  return std::min(std::max(t, 0), num_frames - 1);
}

}  // namespace

LayerSpec LayerSpec::Parse(const std::string &text) {
  auto fields = SplitChar(text, ':');
  SEQOPT_CHECK(fields.size() >= 3, "layer spec '%s': expected kind:dim:activation[:...]",
               text.c_str());
  LayerSpec spec;
  const std::string &kind = fields[0];
  spec.dim = std::atoi(fields[1].c_str());
  SEQOPT_CHECK(spec.dim > 0, "layer spec '%s': bad dim", text.c_str());
  spec.activation = ActFromName(fields[2]);
  if (kind == "fc") {
    spec.kind = LayerKind::kFullyConnected;
    SEQOPT_CHECK(fields.size() == 3, "layer spec '%s': fc takes no extra field", text.c_str());
  } else if (kind == "tdnn") {
    spec.kind = LayerKind::kTdnnSplice;
    SEQOPT_CHECK(fields.size() == 4, "layer spec '%s': tdnn needs offsets", text.c_str());
    for (const auto &o : SplitChar(fields[3], ','))
      spec.splice_offsets.push_back(std::atoi(o.c_str()));
  } else if (kind == "rnn" || kind == "lstm") {
    spec.kind = kind == "rnn" ? LayerKind::kRecurrent : LayerKind::kLstm;
    SEQOPT_CHECK(fields.size() == 4, "layer spec '%s': %s needs unfold steps", text.c_str(),
                 kind.c_str());
    spec.unfold_steps = std::atoi(fields[3].c_str());
  } else {
    Fail("layer spec '%s': unknown kind '%s'", text.c_str(), kind.c_str());
  }
  return spec;
}

std::string LayerSpec::ToString() const {
  std::ostringstream os;
  os << KindName(kind) << ':' << dim << ':' << ActName(activation);
  if (kind == LayerKind::kTdnnSplice) {
    os << ':';
    for (size_t i = 0; i < splice_offsets.size(); i++) {
      if (i) os << ',';
      os << splice_offsets[i];
    }
  } else if (kind == LayerKind::kRecurrent || kind == LayerKind::kLstm) {
    os << ':' << unfold_steps;
  }
  return os.str();
}

void ModelSpec::Validate() const {
  SEQOPT_CHECK(input_dim > 0, "model: input_dim must be positive");
  SEQOPT_CHECK(!layers.empty(), "model: needs at least one layer");
  for (size_t l = 0; l < layers.size(); l++) {
    const LayerSpec &s = layers[l];
    SEQOPT_CHECK(s.dim > 0, "model: layer %zu has non-positive dim", l);
    if (s.kind == LayerKind::kTdnnSplice) {
      SEQOPT_CHECK(!s.splice_offsets.empty(), "model: layer %zu splice offsets empty", l);
      for (size_t i = 1; i < s.splice_offsets.size(); i++)
        SEQOPT_CHECK(s.splice_offsets[i - 1] < s.splice_offsets[i],
                     "model: layer %zu splice offsets must be strictly increasing", l);
    }
    if (s.kind == LayerKind::kRecurrent || s.kind == LayerKind::kLstm)
      SEQOPT_CHECK(s.unfold_steps >= 1, "model: layer %zu unfold_steps must be >= 1", l);
    if (s.kind == LayerKind::kLstm)
      SEQOPT_CHECK(s.activation == Activation::kTanh,
                   "model: layer %zu lstm cell activation must be tanh", l);
  }
  SEQOPT_CHECK(layers.back().activation == Activation::kIdentity,
               "model: output layer must have identity activation (logits)");
  SEQOPT_CHECK(output_dim == layers.back().dim,
               "model: output_dim %d != last layer dim %d", output_dim, layers.back().dim);
}

ModelSpec ModelSpec::Parse(const std::string &text, int input_dim) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) spec.layers.push_back(LayerSpec::Parse(tok));
  SEQOPT_CHECK(!spec.layers.empty(), "model description '%s' has no layers", text.c_str());
  spec.output_dim = spec.layers.back().dim;
  spec.Validate();
  return spec;
}

std::string ModelSpec::ToString() const {
  std::ostringstream os;
  for (size_t l = 0; l < layers.size(); l++) {
    if (l) os << ' ';
    os << layers[l].ToString();
  }
  return os.str();
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.Validate();
  const int L = NumLayers();
  offsets_.resize(L);
  sizes_.resize(L);
  in_dims_.resize(L);
  size_t off = 0;
  int prev_dim = spec_.input_dim;
  for (int l = 0; l < L; l++) {
    const LayerSpec &s = spec_.layers[l];
    in_dims_[l] = prev_dim;
    size_t sz = 0;
    switch (s.kind) {
      case LayerKind::kFullyConnected:
        sz = static_cast<size_t>(s.dim) * prev_dim + s.dim;
        break;
      case LayerKind::kTdnnSplice:
        sz = static_cast<size_t>(s.dim) * (s.splice_offsets.size() * prev_dim) + s.dim;
        break;
      case LayerKind::kRecurrent:
        sz = static_cast<size_t>(s.dim) * (prev_dim + s.dim) + s.dim;
        break;
      case LayerKind::kLstm:
        sz = 4 * (static_cast<size_t>(s.dim) * (prev_dim + s.dim) + s.dim);
        break;
    }
    offsets_[l] = off;
    sizes_[l] = sz;
    off += sz;
    prev_dim = s.dim;
  }
  num_params_ = off;

  // Share count: a layer's own unfolding factor times the reuse its output
  // sees from every layer above it (splice fan-in or unfolded consumption).
  share_counts_.counts.assign(num_params_, 1);
  for (int l = 0; l < L; l++) {
    const LayerSpec &s = spec_.layers[l];
    long count = 1;
    if (s.kind == LayerKind::kRecurrent || s.kind == LayerKind::kLstm)
      count = s.unfold_steps;
    for (int m = l + 1; m < L; m++) {
      const LayerSpec &above = spec_.layers[m];
      if (above.kind == LayerKind::kTdnnSplice)
        count *= static_cast<long>(above.splice_offsets.size());
      else if (above.kind == LayerKind::kRecurrent || above.kind == LayerKind::kLstm)
        count *= above.unfold_steps;
    }
    for (size_t i = offsets_[l]; i < offsets_[l] + sizes_[l]; i++)
      share_counts_.counts[i] = static_cast<int>(count);
  }
}

ParamVector Network::RandomInit(uint64_t seed, double scale, Precision prec) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  ParamVector p(num_params_, prec);
  for (size_t i = 0; i < num_params_; i++) p.data[i] = scale * dist(rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

// a = W z + b with W (dim x zdim) row-major at w, bias at w + dim*zdim.
template <typename Real>
inline void AffineInto(const Real *w, int dim, int zdim, const Real *z, Real *a) {
  const Real *bias = w + static_cast<size_t>(dim) * zdim;
  for (int k = 0; k < dim; k++) {
    Real acc = bias[k];
    const Real *row = w + static_cast<size_t>(k) * zdim;
    for (int j = 0; j < zdim; j++) acc += row[j] * z[j];
    a[k] = acc;
  }
}

}  // namespace

template <typename Real>
ActivationTape<Real> Network::Forward(const ParamVector &params,
                                      const Matrix<double> &features) const {
  SEQOPT_CHECK(features.cols == spec_.input_dim, "forward: feature dim %d != input_dim %d",
               features.cols, spec_.input_dim);
  SEQOPT_CHECK(features.rows > 0, "forward: empty utterance");
  SEQOPT_CHECK(params.Dim() == num_params_, "forward: param dim %zu != %zu", params.Dim(),
               num_params_);
  const int T = features.rows;
  const int L = NumLayers();

  ActivationTape<Real> tape;
  tape.num_frames = T;
  tape.input = CastMatrix<Real>(features);
  tape.outs.resize(L);
  tape.layers.resize(L);

  const Matrix<Real> *in = &tape.input;
  for (int l = 0; l < L; l++) {
    const LayerSpec &s = spec_.layers[l];
    const int dim = s.dim, idim = in_dims_[l];
    auto w = CastSlice<Real>(params, offsets_[l], sizes_[l]);
    Matrix<Real> &out = tape.outs[l];
    out = Matrix<Real>(T, dim);
    LayerTape<Real> &lt = tape.layers[l];

    switch (s.kind) {
      case LayerKind::kFullyConnected: {
        lt.pre = Matrix<Real>(T, dim);
        for (int t = 0; t < T; t++) {
          AffineInto(w.data(), dim, idim, in->Row(t), lt.pre.Row(t));
          for (int k = 0; k < dim; k++) out(t, k) = ApplyAct(s.activation, lt.pre(t, k));
        }
        break;
      }
      case LayerKind::kTdnnSplice: {
        lt.pre = Matrix<Real>(T, dim);
        const int m = static_cast<int>(s.splice_offsets.size());
        std::vector<Real> z(static_cast<size_t>(m) * idim);
        for (int t = 0; t < T; t++) {
          for (int i = 0; i < m; i++) {
            const Real *src = in->Row(ClampFrame(t + s.splice_offsets[i], T));
            std::copy(src, src + idim, z.data() + static_cast<size_t>(i) * idim);
          }
          AffineInto(w.data(), dim, m * idim, z.data(), lt.pre.Row(t));
          for (int k = 0; k < dim; k++) out(t, k) = ApplyAct(s.activation, lt.pre(t, k));
        }
        break;
      }
      case LayerKind::kRecurrent: {
        lt.frame_steps.resize(T);
        const int zdim = idim + dim;
        std::vector<Real> z(zdim), h(dim), a(dim);
        for (int t = 0; t < T; t++) {
          const int n = std::min(s.unfold_steps, t + 1);
          lt.frame_steps[t] = Matrix<Real>(n, 2 * dim);
          std::fill(h.begin(), h.end(), Real(0));
          for (int step = 0; step < n; step++) {
            const int tau = t - n + 1 + step;
            std::copy(in->Row(tau), in->Row(tau) + idim, z.data());
            std::copy(h.begin(), h.end(), z.data() + idim);
            AffineInto(w.data(), dim, zdim, z.data(), a.data());
            for (int k = 0; k < dim; k++) {
              h[k] = ApplyAct(s.activation, a[k]);
              lt.frame_steps[t](step, k) = a[k];
              lt.frame_steps[t](step, dim + k) = h[k];
            }
          }
          std::copy(h.begin(), h.end(), out.Row(t));
        }
        break;
      }
      case LayerKind::kLstm: {
        lt.frame_steps.resize(T);
        const int zdim = idim + dim;
        const size_t gsz = static_cast<size_t>(dim) * zdim + dim;
        const Real *wi = w.data(), *wf = w.data() + gsz, *wg = w.data() + 2 * gsz,
                   *wo = w.data() + 3 * gsz;
        std::vector<Real> z(zdim), h(dim), c(dim), ai(dim), af(dim), ag(dim), ao(dim);
        for (int t = 0; t < T; t++) {
          const int n = std::min(s.unfold_steps, t + 1);
          lt.frame_steps[t] = Matrix<Real>(n, 7 * dim);
          std::fill(h.begin(), h.end(), Real(0));
          std::fill(c.begin(), c.end(), Real(0));
          for (int step = 0; step < n; step++) {
            const int tau = t - n + 1 + step;
            std::copy(in->Row(tau), in->Row(tau) + idim, z.data());
            std::copy(h.begin(), h.end(), z.data() + idim);
            AffineInto(wi, dim, zdim, z.data(), ai.data());
            AffineInto(wf, dim, zdim, z.data(), af.data());
            AffineInto(wg, dim, zdim, z.data(), ag.data());
            AffineInto(wo, dim, zdim, z.data(), ao.data());
            Real *row = lt.frame_steps[t].Row(step);
            for (int k = 0; k < dim; k++) {
              const Real iv = ApplyAct(Activation::kSigmoid, ai[k]);
              const Real fv = ApplyAct(Activation::kSigmoid, af[k]);
              const Real gv = std::tanh(ag[k]);
              const Real ov = ApplyAct(Activation::kSigmoid, ao[k]);
              const Real cv = fv * c[k] + iv * gv;
              const Real tc = std::tanh(cv);
              const Real hv = ov * tc;
              row[k] = iv;
              row[dim + k] = fv;
              row[2 * dim + k] = gv;
              row[3 * dim + k] = ov;
              row[4 * dim + k] = cv;
              row[5 * dim + k] = tc;
              row[6 * dim + k] = hv;
              c[k] = cv;
              h[k] = hv;
            }
          }
          std::copy(h.begin(), h.end(), out.Row(t));
        }
        break;
      }
    }
    if (!out.AllFinite())
      Fail("forward: non-finite activation at layer %d (%s)", l, s.ToString().c_str());
    in = &tape.outs[l];
  }
  return tape;
}

// ---------------------------------------------------------------------------
// Backprop
// ---------------------------------------------------------------------------

template <typename Real>
ParamVector Network::Backprop(const ParamVector &params, const ActivationTape<Real> &tape,
                              const Matrix<Real> &output_grads,
                              bool normalize_by_share) const {
  const int T = tape.num_frames;
  const int L = NumLayers();
  SEQOPT_CHECK(params.Dim() == num_params_, "backprop: param dim mismatch");
  SEQOPT_CHECK(static_cast<int>(tape.outs.size()) == L, "backprop: tape/model mismatch");
  SEQOPT_CHECK(output_grads.rows == T && output_grads.cols == OutputDim(),
               "backprop: output_grads shape (%d,%d) != (%d,%d)", output_grads.rows,
               output_grads.cols, T, OutputDim());

  ParamVector grad(num_params_, params.prec);
  Matrix<Real> dout = output_grads;

  for (int l = L - 1; l >= 0; l--) {
    const LayerSpec &s = spec_.layers[l];
    const int dim = s.dim, idim = in_dims_[l];
    const Matrix<Real> &in = l == 0 ? tape.input : tape.outs[l - 1];
    const Matrix<Real> &out = tape.outs[l];
    const LayerTape<Real> &lt = tape.layers[l];
    auto w = CastSlice<Real>(params, offsets_[l], sizes_[l]);
    double *gw = grad.data.data() + offsets_[l];
    Matrix<Real> din(T, idim);

    switch (s.kind) {
      case LayerKind::kFullyConnected: {
        double *gb = gw + static_cast<size_t>(dim) * idim;
        for (int t = 0; t < T; t++) {
          const Real *x = in.Row(t);
          for (int k = 0; k < dim; k++) {
            const Real delta = dout(t, k) * ActDeriv(s.activation, lt.pre(t, k), out(t, k));
            gb[k] += static_cast<double>(delta);
            const Real *row = w.data() + static_cast<size_t>(k) * idim;
            double *grow = gw + static_cast<size_t>(k) * idim;
            for (int j = 0; j < idim; j++) {
              grow[j] += static_cast<double>(delta) * static_cast<double>(x[j]);
              din(t, j) += row[j] * delta;
            }
          }
        }
        break;
      }
      case LayerKind::kTdnnSplice: {
        const int m = static_cast<int>(s.splice_offsets.size());
        const int zdim = m * idim;
        double *gb = gw + static_cast<size_t>(dim) * zdim;
        for (int t = 0; t < T; t++) {
          for (int k = 0; k < dim; k++) {
            const Real delta = dout(t, k) * ActDeriv(s.activation, lt.pre(t, k), out(t, k));
            gb[k] += static_cast<double>(delta);
            const Real *row = w.data() + static_cast<size_t>(k) * zdim;
            double *grow = gw + static_cast<size_t>(k) * zdim;
            for (int i = 0; i < m; i++) {
              const int src = ClampFrame(t + s.splice_offsets[i], T);
              const Real *x = in.Row(src);
              for (int j = 0; j < idim; j++) {
                grow[i * idim + j] += static_cast<double>(delta) * static_cast<double>(x[j]);
                din(src, j) += row[i * idim + j] * delta;
              }
            }
          }
        }
        break;
      }
      case LayerKind::kRecurrent: {
        const int zdim = idim + dim;
        double *gb = gw + static_cast<size_t>(dim) * zdim;
        std::vector<Real> dh(dim), delta(dim), dz(zdim);
        for (int t = 0; t < T; t++) {
          const int n = lt.frame_steps[t].rows;
          std::copy(dout.Row(t), dout.Row(t) + dim, dh.data());
          for (int step = n - 1; step >= 0; step--) {
            const int tau = t - n + 1 + step;
            const Real *st = lt.frame_steps[t].Row(step);
            for (int k = 0; k < dim; k++)
              delta[k] = dh[k] * ActDeriv(s.activation, st[k], st[dim + k]);
            const Real *hprev =
                step > 0 ? lt.frame_steps[t].Row(step - 1) + dim : nullptr;
            std::fill(dz.begin(), dz.end(), Real(0));
            for (int k = 0; k < dim; k++) {
              gb[k] += static_cast<double>(delta[k]);
              const Real *row = w.data() + static_cast<size_t>(k) * zdim;
              double *grow = gw + static_cast<size_t>(k) * zdim;
              const Real *x = in.Row(tau);
              for (int j = 0; j < idim; j++) {
                grow[j] += static_cast<double>(delta[k]) * static_cast<double>(x[j]);
                dz[j] += row[j] * delta[k];
              }
              for (int j = 0; j < dim; j++) {
                const Real hj = hprev ? hprev[j] : Real(0);
                grow[idim + j] += static_cast<double>(delta[k]) * static_cast<double>(hj);
                dz[idim + j] += row[idim + j] * delta[k];
              }
            }
            for (int j = 0; j < idim; j++) din(tau, j) += dz[j];
            std::copy(dz.begin() + idim, dz.end(), dh.data());
          }
        }
        break;
      }
      case LayerKind::kLstm: {
        const int zdim = idim + dim;
        const size_t gsz = static_cast<size_t>(dim) * zdim + dim;
        const Real *wptr[4] = {w.data(), w.data() + gsz, w.data() + 2 * gsz,
                               w.data() + 3 * gsz};
        double *gptr[4] = {gw, gw + gsz, gw + 2 * gsz, gw + 3 * gsz};
        std::vector<Real> dh(dim), dc(dim), dz(zdim);
        std::vector<Real> deltas(static_cast<size_t>(4) * dim);
        for (int t = 0; t < T; t++) {
          const int n = lt.frame_steps[t].rows;
          std::copy(dout.Row(t), dout.Row(t) + dim, dh.data());
          std::fill(dc.begin(), dc.end(), Real(0));
          for (int step = n - 1; step >= 0; step--) {
            const int tau = t - n + 1 + step;
            const Real *st = lt.frame_steps[t].Row(step);
            const Real *prev = step > 0 ? lt.frame_steps[t].Row(step - 1) : nullptr;
            for (int k = 0; k < dim; k++) {
              const Real iv = st[k], fv = st[dim + k], gv = st[2 * dim + k],
                         ov = st[3 * dim + k], tc = st[5 * dim + k];
              const Real cprev = prev ? prev[4 * dim + k] : Real(0);
              const Real dov = dh[k] * tc;
              const Real dcv = dc[k] + dh[k] * ov * (Real(1) - tc * tc);
              const Real dfv = dcv * cprev;
              const Real div = dcv * gv;
              const Real dgv = dcv * iv;
              deltas[k] = div * iv * (Real(1) - iv);
              deltas[dim + k] = dfv * fv * (Real(1) - fv);
              deltas[2 * dim + k] = dgv * (Real(1) - gv * gv);
              deltas[3 * dim + k] = dov * ov * (Real(1) - ov);
              dc[k] = dcv * fv;
            }
            std::fill(dz.begin(), dz.end(), Real(0));
            const Real *x = in.Row(tau);
            const Real *hprev = prev ? prev + 6 * dim : nullptr;
            for (int g = 0; g < 4; g++) {
              double *gb = gptr[g] + static_cast<size_t>(dim) * zdim;
              for (int k = 0; k < dim; k++) {
                const Real delta = deltas[g * dim + k];
                gb[k] += static_cast<double>(delta);
                const Real *row = wptr[g] + static_cast<size_t>(k) * zdim;
                double *grow = gptr[g] + static_cast<size_t>(k) * zdim;
                for (int j = 0; j < idim; j++) {
                  grow[j] += static_cast<double>(delta) * static_cast<double>(x[j]);
                  dz[j] += row[j] * delta;
                }
                for (int j = 0; j < dim; j++) {
                  const Real hj = hprev ? hprev[j] : Real(0);
                  grow[idim + j] += static_cast<double>(delta) * static_cast<double>(hj);
                  dz[idim + j] += row[idim + j] * delta;
                }
              }
            }
            for (int j = 0; j < idim; j++) din(tau, j) += dz[j];
            std::copy(dz.begin() + idim, dz.end(), dh.data());
          }
        }
        break;
      }
    }
    dout = std::move(din);
  }

  if (normalize_by_share) {
    const auto &c = share_counts_.counts;
    for (size_t i = 0; i < num_params_; i++) grad.data[i] /= c[i];
  }
  return grad;
}

// ---------------------------------------------------------------------------
// R-forward (directional derivative J v via the modified forward pass)
// ---------------------------------------------------------------------------

template <typename Real>
Matrix<Real> Network::RForward(const ParamVector &params, const ActivationTape<Real> &tape,
                               const ParamVector &v) const {
  const int T = tape.num_frames;
  const int L = NumLayers();
  SEQOPT_CHECK(params.Dim() == num_params_ && v.Dim() == num_params_,
               "r_forward: dim mismatch (params %zu, v %zu, D %zu)", params.Dim(), v.Dim(),
               num_params_);
  SEQOPT_CHECK(static_cast<int>(tape.outs.size()) == L, "r_forward: tape/model mismatch");

  // R of the network input is zero; propagate R through each layer.
  Matrix<Real> rin(T, spec_.input_dim);

  for (int l = 0; l < L; l++) {
    const LayerSpec &s = spec_.layers[l];
    const int dim = s.dim, idim = in_dims_[l];
    const Matrix<Real> &in = l == 0 ? tape.input : tape.outs[l - 1];
    const Matrix<Real> &out = tape.outs[l];
    const LayerTape<Real> &lt = tape.layers[l];
    auto w = CastSlice<Real>(params, offsets_[l], sizes_[l]);
    auto vw = CastSlice<Real>(v, offsets_[l], sizes_[l]);
    Matrix<Real> rout(T, dim);

    switch (s.kind) {
      case LayerKind::kFullyConnected: {
        std::vector<Real> ra(dim), rb(dim);
        for (int t = 0; t < T; t++) {
          AffineInto(vw.data(), dim, idim, in.Row(t), ra.data());
          for (int k = 0; k < dim; k++) {
            const Real *row = w.data() + static_cast<size_t>(k) * idim;
            Real acc = ra[k];
            for (int j = 0; j < idim; j++) acc += row[j] * rin(t, j);
            rout(t, k) = ActDeriv(s.activation, lt.pre(t, k), out(t, k)) * acc;
          }
        }
        break;
      }
      case LayerKind::kTdnnSplice: {
        const int m = static_cast<int>(s.splice_offsets.size());
        const int zdim = m * idim;
        std::vector<Real> z(zdim), rz(zdim), ra(dim);
        for (int t = 0; t < T; t++) {
          for (int i = 0; i < m; i++) {
            const int src = ClampFrame(t + s.splice_offsets[i], T);
            std::copy(in.Row(src), in.Row(src) + idim, z.data() + static_cast<size_t>(i) * idim);
            std::copy(rin.Row(src), rin.Row(src) + idim,
                      rz.data() + static_cast<size_t>(i) * idim);
          }
          AffineInto(vw.data(), dim, zdim, z.data(), ra.data());
          for (int k = 0; k < dim; k++) {
            const Real *row = w.data() + static_cast<size_t>(k) * zdim;
            Real acc = ra[k];
            for (int j = 0; j < zdim; j++) acc += row[j] * rz[j];
            rout(t, k) = ActDeriv(s.activation, lt.pre(t, k), out(t, k)) * acc;
          }
        }
        break;
      }
      case LayerKind::kRecurrent: {
        const int zdim = idim + dim;
        std::vector<Real> z(zdim), rz(zdim), ra(dim), rh(dim);
        for (int t = 0; t < T; t++) {
          const int n = lt.frame_steps[t].rows;
          std::fill(rh.begin(), rh.end(), Real(0));
          for (int step = 0; step < n; step++) {
            const int tau = t - n + 1 + step;
            const Real *st = lt.frame_steps[t].Row(step);
            const Real *hprev = step > 0 ? lt.frame_steps[t].Row(step - 1) + dim : nullptr;
            std::copy(in.Row(tau), in.Row(tau) + idim, z.data());
            for (int j = 0; j < dim; j++) z[idim + j] = hprev ? hprev[j] : Real(0);
            std::copy(rin.Row(tau), rin.Row(tau) + idim, rz.data());
            std::copy(rh.begin(), rh.end(), rz.data() + idim);
            AffineInto(vw.data(), dim, zdim, z.data(), ra.data());
            for (int k = 0; k < dim; k++) {
              const Real *row = w.data() + static_cast<size_t>(k) * zdim;
              Real acc = ra[k];
              for (int j = 0; j < zdim; j++) acc += row[j] * rz[j];
              rh[k] = ActDeriv(s.activation, st[k], st[dim + k]) * acc;
            }
          }
          std::copy(rh.begin(), rh.end(), rout.Row(t));
        }
        break;
      }
      case LayerKind::kLstm: {
        const int zdim = idim + dim;
        const size_t gsz = static_cast<size_t>(dim) * zdim + dim;
        const Real *wptr[4] = {w.data(), w.data() + gsz, w.data() + 2 * gsz,
                               w.data() + 3 * gsz};
        const Real *vptr[4] = {vw.data(), vw.data() + gsz, vw.data() + 2 * gsz,
                               vw.data() + 3 * gsz};
        std::vector<Real> z(zdim), rz(zdim), rh(dim), rc(dim);
        std::vector<Real> ra(static_cast<size_t>(4) * dim);
        for (int t = 0; t < T; t++) {
          const int n = lt.frame_steps[t].rows;
          std::fill(rh.begin(), rh.end(), Real(0));
          std::fill(rc.begin(), rc.end(), Real(0));
          for (int step = 0; step < n; step++) {
            const int tau = t - n + 1 + step;
            const Real *st = lt.frame_steps[t].Row(step);
            const Real *prev = step > 0 ? lt.frame_steps[t].Row(step - 1) : nullptr;
            std::copy(in.Row(tau), in.Row(tau) + idim, z.data());
            for (int j = 0; j < dim; j++) z[idim + j] = prev ? prev[6 * dim + j] : Real(0);
            std::copy(rin.Row(tau), rin.Row(tau) + idim, rz.data());
            std::copy(rh.begin(), rh.end(), rz.data() + idim);
            for (int g = 0; g < 4; g++) {
              AffineInto(vptr[g], dim, zdim, z.data(), ra.data() + g * dim);
              for (int k = 0; k < dim; k++) {
                const Real *row = wptr[g] + static_cast<size_t>(k) * zdim;
                Real acc = ra[g * dim + k];
                for (int j = 0; j < zdim; j++) acc += row[j] * rz[j];
                ra[g * dim + k] = acc;
              }
            }
            // Gate values from the tape; R of each Hadamard product follows
            // R(g.z) = R(g).z + g.R(z).
            for (int k = 0; k < dim; k++) {
              const Real iv = st[k], fv = st[dim + k], gv = st[2 * dim + k],
                         ov = st[3 * dim + k], tc = st[5 * dim + k];
              const Real cprev = prev ? prev[4 * dim + k] : Real(0);
              const Real rcprev = rc[k];
              const Real ri = iv * (Real(1) - iv) * ra[k];
              const Real rf = fv * (Real(1) - fv) * ra[dim + k];
              const Real rg = (Real(1) - gv * gv) * ra[2 * dim + k];
              const Real ro = ov * (Real(1) - ov) * ra[3 * dim + k];
              const Real rcv = rf * cprev + fv * rcprev + ri * gv + iv * rg;
              rh[k] = ro * tc + ov * (Real(1) - tc * tc) * rcv;
              rc[k] = rcv;
            }
          }
          std::copy(rh.begin(), rh.end(), rout.Row(t));
        }
        break;
      }
    }
    rin = std::move(rout);
  }
  return rin;
}

template ActivationTape<float> Network::Forward<float>(const ParamVector &,
                                                       const Matrix<double> &) const;
template ActivationTape<double> Network::Forward<double>(const ParamVector &,
                                                         const Matrix<double> &) const;
template ParamVector Network::Backprop<float>(const ParamVector &,
                                              const ActivationTape<float> &,
                                              const Matrix<float> &, bool) const;
template ParamVector Network::Backprop<double>(const ParamVector &,
                                               const ActivationTape<double> &,
                                               const Matrix<double> &, bool) const;
template Matrix<float> Network::RForward<float>(const ParamVector &,
                                                const ActivationTape<float> &,
                                                const ParamVector &) const;
template Matrix<double> Network::RForward<double>(const ParamVector &,
                                                  const ActivationTape<double> &,
                                                  const ParamVector &) const;

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

void WriteCheckpoint(std::ostream &os, const ModelSpec &spec, const ParamVector &params) {
  os << "SEQOPT_CKPT 1\n";
  os << "input_dim " << spec.input_dim << "\n";
  os << "model " << spec.ToString() << "\n";
  os << "precision " << PrecisionName(params.prec) << "\n";
  os << "dim " << params.Dim() << "\n";
  char buf[64];
  for (double x : params.data) {
    std::snprintf(buf, sizeof(buf), "%a", x);
    os << buf << "\n";
  }
  os << "end\n";
}

void ReadCheckpoint(std::istream &is, ModelSpec *spec, ParamVector *params) {
  std::string line, key;
  SEQOPT_CHECK(static_cast<bool>(std::getline(is, line)), "checkpoint: empty stream");
  SEQOPT_CHECK(line == "SEQOPT_CKPT 1", "checkpoint: bad header '%s'", line.c_str());
  int input_dim = -1;
  std::string model_text, prec_name;
  size_t dim = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "input_dim") {
      ls >> input_dim;
    } else if (key == "model") {
      std::getline(ls, model_text);
    } else if (key == "precision") {
      ls >> prec_name;
    } else if (key == "dim") {
      ls >> dim;
      break;
    } else {
      Fail("checkpoint: unexpected key '%s'", key.c_str());
    }
  }
  SEQOPT_CHECK(input_dim > 0 && !model_text.empty() && !prec_name.empty(),
               "checkpoint: missing header fields");
  *spec = ModelSpec::Parse(model_text, input_dim);
  params->prec = PrecisionFromName(prec_name);
  params->data.resize(dim);
  for (size_t i = 0; i < dim; i++) {
    SEQOPT_CHECK(static_cast<bool>(std::getline(is, line)), "checkpoint: truncated values");
    params->data[i] = std::strtod(line.c_str(), nullptr);
  }
  SEQOPT_CHECK(static_cast<bool>(std::getline(is, line)) && line == "end",
               "checkpoint: missing end marker");
  Network net(*spec);
  SEQOPT_CHECK(net.NumParams() == dim, "checkpoint: dim %zu does not match model (%zu)", dim,
               net.NumParams());
}

void SaveCheckpoint(const std::string &path, const ModelSpec &spec,
                    const ParamVector &params) {
  std::ofstream os(path);
  SEQOPT_CHECK(os.good(), "checkpoint: cannot write '%s'", path.c_str());
  WriteCheckpoint(os, spec, params);
  SEQOPT_CHECK(os.good(), "checkpoint: write failed for '%s'", path.c_str());
}

void LoadCheckpoint(const std::string &path, ModelSpec *spec, ParamVector *params) {
  std::ifstream is(path);
  SEQOPT_CHECK(is.good(), "checkpoint: cannot open '%s'", path.c_str());
  ReadCheckpoint(is, spec, params);
}

}  // namespace seqopt
