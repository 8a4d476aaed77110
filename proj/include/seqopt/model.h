// seqopt/model.h

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

#ifndef SEQOPT_MODEL_H_
#define SEQOPT_MODEL_H_

#include <iosfwd>
#include <string>
#include <vector>

#include "seqopt/common.h"

namespace seqopt {

enum class LayerKind { kFullyConnected, kTdnnSplice, kRecurrent, kLstm };
enum class Activation { kSigmoid, kTanh, kRelu, kIdentity };

struct LayerSpec {
  LayerKind kind = LayerKind::kFullyConnected;
  Activation activation = Activation::kSigmoid;
  int dim = 0;
  std::vector<int> splice_offsets;  // TdnnSplice: strictly increasing
  int unfold_steps = 1;             // Recurrent/Lstm: truncated unfolding depth

  // Layer description strings, e.g. "fc:32:sigmoid", "tdnn:32:sigmoid:-2,-1,0,1,2",
  // "rnn:24:tanh:8", "lstm:24:tanh:8".
  static LayerSpec Parse(const std::string &text);
  std::string ToString() const;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  int input_dim = 0;
  int output_dim = 0;  // K, must equal layers.back().dim

  void Validate() const;
  // Whitespace-separated layer descriptions; output_dim taken from the last layer.
  static ModelSpec Parse(const std::string &text, int input_dim);
  std::string ToString() const;
};

// c_i = number of time-replicated uses of parameter i per utterance graph.
struct ShareCounts {
  std::vector<int> counts;
  bool AnyShared() const {
    for (int c : counts)
      if (c > 1) return true;
    return false;
  }
};

// Per-layer cached activations from a forward pass.  FC/TDNN layers keep the
// pre-activations; recurrent kinds keep the per-frame unfolded step states.
template <typename Real>
struct LayerTape {
  Matrix<Real> pre;  // FC/TDNN: (T x dim) pre-activations
  // Recurrent: frame_steps[t] is (n_steps x 2*dim), columns [a | h].
  // LSTM: frame_steps[t] is (n_steps x 7*dim), columns [i | f | g | o | c | tanh_c | h].
  std::vector<Matrix<Real>> frame_steps;
};

template <typename Real>
struct ActivationTape {
  int num_frames = 0;
  Matrix<Real> input;               // features cast to Real (T x input_dim)
  std::vector<Matrix<Real>> outs;   // outs[l] = layer l post-activations (T x dim_l)
  std::vector<LayerTape<Real>> layers;

  const Matrix<Real> &Logits() const { return outs.back(); }
};

class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec &Spec() const { return spec_; }
  size_t NumParams() const { return num_params_; }
  int InputDim() const { return spec_.input_dim; }
  int OutputDim() const { return spec_.output_dim; }
  int NumLayers() const { return static_cast<int>(spec_.layers.size()); }

  size_t LayerParamOffset(int l) const { return offsets_[l]; }
  size_t LayerParamSize(int l) const { return sizes_[l]; }
  int LayerInputDim(int l) const { return in_dims_[l]; }

  const ShareCounts &GetShareCounts() const { return share_counts_; }

  ParamVector RandomInit(uint64_t seed, double scale,
                         Precision prec = Precision::kFloat64) const;

  // Forward propagation over one utterance.  Throws on dimension mismatch and
  // on non-finite activations (divergence signal).
  template <typename Real>
  ActivationTape<Real> Forward(const ParamVector &params,
                               const Matrix<double> &features) const;

  // Accumulates sum_t J_t^T g_t over the utterance.  Products are formed in
  // Real, per-parameter accumulation is in double.
  template <typename Real>
  ParamVector Backprop(const ParamVector &params, const ActivationTape<Real> &tape,
                       const Matrix<Real> &output_grads,
                       bool normalize_by_share) const;

  // Forward-mode directional derivative: returns R(a_out) = J v per frame.
  template <typename Real>
  Matrix<Real> RForward(const ParamVector &params, const ActivationTape<Real> &tape,
                        const ParamVector &v) const;

 private:
  ModelSpec spec_;
  size_t num_params_ = 0;
  std::vector<size_t> offsets_, sizes_;
  std::vector<int> in_dims_;
  ShareCounts share_counts_;
};

template <typename To, typename From>
Matrix<To> CastMatrix(const Matrix<From> &m) {
  Matrix<To> out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); i++) out.data[i] = static_cast<To>(m.data[i]);
  return out;
}

// Checkpoint container: model description, precision tag and parameter values
// (hex floats, so the round trip is bit-exact).
void SaveCheckpoint(const std::string &path, const ModelSpec &spec,
                    const ParamVector &params);
void LoadCheckpoint(const std::string &path, ModelSpec *spec, ParamVector *params);
void WriteCheckpoint(std::ostream &os, const ModelSpec &spec, const ParamVector &params);
void ReadCheckpoint(std::istream &is, ModelSpec *spec, ParamVector *params);

}  // namespace seqopt

#endif  // SEQOPT_MODEL_H_
