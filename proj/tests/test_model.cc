// tests/test_model.cc

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
#include <sstream>

#include "doctest.h"
#include "seqopt/loss.h"
#include "seqopt/model.h"
#include "test_util.hpp"

using namespace seqopt;
using namespace seqopt::test;

TEST_CASE("fc forward: direct substitution") {
  // a = U x + b with U = [[1, 2]], b = [0], x = (1, 1)
  ModelSpec spec = ModelSpec::Parse("fc:1:identity", 2);
  Network net(spec);
  ParamVector params(net.NumParams());
  params.data = {1.0, 2.0, 0.0};
  Matrix<double> feats(1, 2);
  feats(0, 0) = 1.0;
  feats(0, 1) = 1.0;
  auto tape = net.Forward<double>(params, feats);
  CHECK(tape.Logits()(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("recurrent layer with zero recurrent weights matches fc per frame") {
  const int in = 3, dim = 4, T = 6;
  Network rnn(ModelSpec::Parse("rnn:4:sigmoid:5 fc:4:identity", in));
  Network fc(ModelSpec::Parse("fc:4:sigmoid fc:4:identity", in));

  ParamVector fc_params = fc.RandomInit(11, 0.7);
  ParamVector rnn_params(rnn.NumParams());
  // rnn layer 0: U (dim x (in + dim)) then bias; fc layer 0: W (dim x in), b.
  for (int k = 0; k < dim; k++) {
    for (int j = 0; j < in; j++)
      rnn_params.data[k * (in + dim) + j] = fc_params.data[k * in + j];
    rnn_params.data[dim * (in + dim) + k] = fc_params.data[dim * in + k];
  }
  for (size_t i = 0; i < fc.LayerParamSize(1); i++)
    rnn_params.data[rnn.LayerParamOffset(1) + i] =
        fc_params.data[fc.LayerParamOffset(1) + i];

  Matrix<double> feats = RandomFrames(T, in, 21);
  auto a = rnn.Forward<double>(rnn_params, feats).Logits();
  auto b = fc.Forward<double>(fc_params, feats).Logits();
  for (size_t i = 0; i < a.data.size(); i++)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-14));
}

namespace {

// Straightforward re-implementation of a 2-layer sigmoid net, the reference
// for the library's forward pass.
Matrix<double> ReferenceForwardTwoLayerSigmoid(const ParamVector &p, int in, int h, int out,
                                               const Matrix<double> &x) {
  Matrix<double> logits(x.rows, out);
  for (int t = 0; t < x.rows; t++) {
    std::vector<double> hid(h);
    for (int k = 0; k < h; k++) {
      double a = p.data[static_cast<size_t>(h) * in + k];
      for (int j = 0; j < in; j++) a += p.data[static_cast<size_t>(k) * in + j] * x(t, j);
      hid[k] = 1.0 / (1.0 + std::exp(-a));
    }
    const size_t off = static_cast<size_t>(h) * in + h;
    for (int k = 0; k < out; k++) {
      double a = p.data[off + static_cast<size_t>(out) * h + k];
      for (int j = 0; j < h; j++) a += p.data[off + static_cast<size_t>(k) * h + j] * hid[j];
      logits(t, k) = a;
    }
  }
  return logits;
}

}  // namespace

TEST_CASE("forward matches an independent reference implementation") {
  const int in = 5, h = 7, out = 4, T = 5;
  Network net(ModelSpec::Parse("fc:7:sigmoid fc:4:identity", in));
  ParamVector params = net.RandomInit(31, 0.8);
  Matrix<double> feats = RandomFrames(T, in, 32);
  auto got = net.Forward<double>(params, feats).Logits();
  auto want = ReferenceForwardTwoLayerSigmoid(params, in, h, out, feats);
  for (size_t i = 0; i < got.data.size(); i++)
    CHECK(RelErr(got.data[i], want.data[i]) < 1e-12);
}

TEST_CASE("forward rejects bad dims and non-finite activations") {
  Network net(ModelSpec::Parse("fc:3:identity", 2));
  ParamVector params = net.RandomInit(1, 0.5);
  CHECK_THROWS_AS(net.Forward<double>(params, Matrix<double>(4, 3)), Error);
  ParamVector bad = params;
  bad.data[0] = std::numeric_limits<double>::infinity();
  Matrix<double> feats = RandomFrames(2, 2, 3);
  CHECK_THROWS_AS(net.Forward<double>(bad, feats), Error);
}

TEST_CASE("backprop: zero output grads give a zero gradient") {
  Network net(ModelSpec::Parse("lstm:3:tanh:4 fc:2:identity", 3));
  ParamVector params = net.RandomInit(41, 0.5);
  Matrix<double> feats = RandomFrames(5, 3, 42);
  auto tape = net.Forward<double>(params, feats);
  Matrix<double> zeros(5, 2);
  ParamVector grad = net.Backprop<double>(params, tape, zeros, false);
  for (double g : grad.data) CHECK(g == 0.0);
}

static void CheckCeGradientAgainstFd(const std::string &model, int in, uint64_t seed) {
  Network net(ModelSpec::Parse(model, in));
  INFO("model: " << model << " D=" << net.NumParams());
  ParamVector params = net.RandomInit(seed, 0.6);
  const int T = 5;
  Matrix<double> feats = RandomFrames(T, in, seed + 1);
  std::vector<int> labels(T);
  for (int t = 0; t < T; t++) labels[t] = t % net.OutputDim();

  auto tape = net.Forward<double>(params, feats);
  Matrix<double> out_grads;
  CeLossAndGrad(tape.Logits(), labels, &out_grads);
  ParamVector grad = net.Backprop<double>(params, tape, out_grads, false);

  auto loss_at = [&](const ParamVector &p) {
    return CeLossAndGrad(net.Forward<double>(p, feats).Logits(), labels, nullptr);
  };
  ParamVector fd = FiniteDiffGradient(loss_at, params, 1e-5);
  CHECK(RelL2(grad.data, fd.data) < 1e-6);
}

TEST_CASE("backprop matches central finite differences for every layer kind") {
  CheckCeGradientAgainstFd("fc:4:sigmoid fc:3:identity", 3, 51);
  CheckCeGradientAgainstFd("fc:4:relu fc:3:identity", 3, 52);
  CheckCeGradientAgainstFd("tdnn:4:tanh:-1,0,2 fc:3:identity", 3, 53);
  CheckCeGradientAgainstFd("rnn:4:tanh:3 fc:3:identity", 3, 54);
  CheckCeGradientAgainstFd("lstm:3:tanh:3 fc:3:identity", 3, 55);
}

TEST_CASE("share-normalised backprop is the elementwise quotient") {
  Network net(ModelSpec::Parse("rnn:3:sigmoid:20 fc:2:identity", 2));
  const ShareCounts &counts = net.GetShareCounts();
  ParamVector params = net.RandomInit(61, 0.4);
  Matrix<double> feats = RandomFrames(25, 2, 62);
  auto tape = net.Forward<double>(params, feats);
  Matrix<double> grads = RandomFrames(25, 2, 63);
  ParamVector raw = net.Backprop<double>(params, tape, grads, false);
  ParamVector norm = net.Backprop<double>(params, tape, grads, true);
  for (size_t i = 0; i < raw.Dim(); i++)
    CHECK(norm.data[i] == raw.data[i] / counts.counts[i]);
  CHECK(counts.counts[0] == 20);
  CHECK(norm.data[0] == raw.data[0] / 20.0);
}

TEST_CASE("r_forward: fc substitution example") {
  // a = U x + b, x = (1, 1); v puts V = [[0.1, 0.2]] with zero bias
  // direction and upstream R(x) = 0, so R(a) = 0.1 + 0.2 = 0.3.
  Network net(ModelSpec::Parse("fc:1:identity", 2));
  ParamVector params(net.NumParams());
  params.data = {1.0, 2.0, 0.0};
  ParamVector v(net.NumParams());
  v.data = {0.1, 0.2, 0.0};
  Matrix<double> feats(1, 2);
  feats(0, 0) = feats(0, 1) = 1.0;
  auto tape = net.Forward<double>(params, feats);
  auto r = net.RForward<double>(params, tape, v);
  CHECK(r(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("r_forward: lstm gating rule on a 1-unit cell") {
  // Zero weights, cell-candidate bias 0.5, direction along that bias.  Then
  // i = o = 0.5, g = tanh(0.5), c = i*g, and by R(g.z) = R(g).z + g.R(z):
  //   R(c) = R(i)*g + i*R(g) = 0.5 * (1 - g^2)
  //   R(h) = R(o)*tanh(c) + o*(1 - tanh(c)^2)*R(c)
  Network net(ModelSpec::Parse("lstm:1:tanh:1 fc:1:identity", 1));
  ParamVector params(net.NumParams());
  params.data[2 * 3 + 2] = 0.5;  // gate order i, f, g, o; per gate U (1x2), b
  params.data[net.LayerParamOffset(1)] = 1.0;  // pass h through unchanged
  ParamVector v(net.NumParams());
  v.data[2 * 3 + 2] = 1.0;
  Matrix<double> feats(1, 1);
  auto tape = net.Forward<double>(params, feats);
  auto r = net.RForward<double>(params, tape, v);

  const double g = std::tanh(0.5);
  const double c = 0.5 * g;
  const double rc = 0.5 * (1 - g * g);
  const double want = 0.5 * (1 - std::tanh(c) * std::tanh(c)) * rc;
  CHECK(r(0, 0) == doctest::Approx(want).epsilon(1e-14));
}

static void CheckRForwardAgainstFd(const std::string &model, int in, uint64_t seed) {
  Network net(ModelSpec::Parse(model, in));
  INFO("model: " << model);
  ParamVector params = net.RandomInit(seed, 0.5);
  ParamVector v = RandomVector(net.NumParams(), seed + 7);
  Matrix<double> feats = RandomFrames(6, in, seed + 8);
  auto tape = net.Forward<double>(params, feats);
  Matrix<double> r = net.RForward<double>(params, tape, v);
  Matrix<double> fd = DirectionalLogitsDiff(net, params, v, feats, 1e-4);
  CHECK(RelL2(r.data, fd.data) < 1e-5);
}

TEST_CASE("r_forward matches central differences of the logits") {
  CheckRForwardAgainstFd("fc:5:sigmoid fc:3:identity", 4, 71);
  CheckRForwardAgainstFd("tdnn:4:sigmoid:-2,0,1 fc:3:identity", 4, 72);
  CheckRForwardAgainstFd("rnn:4:tanh:4 fc:3:identity", 4, 73);
  CheckRForwardAgainstFd("lstm:4:tanh:4 fc:3:identity", 4, 74);
  CheckRForwardAgainstFd("lstm:3:tanh:2 lstm:3:tanh:3 fc:2:identity", 4, 75);
}

TEST_CASE("r_forward is linear in the direction") {
  Network net(ModelSpec::Parse("lstm:4:tanh:3 fc:3:identity", 3));
  ParamVector params = net.RandomInit(81, 0.5);
  ParamVector v = RandomVector(net.NumParams(), 82);
  Matrix<double> feats = RandomFrames(5, 3, 83);
  auto tape = net.Forward<double>(params, feats);
  Matrix<double> rv = net.RForward<double>(params, tape, v);
  ParamVector cv = v;
  Scale(-3.25, &cv);
  Matrix<double> rcv = net.RForward<double>(params, tape, cv);
  for (size_t i = 0; i < rv.data.size(); i++)
    CHECK(RelErr(rcv.data[i], -3.25 * rv.data[i]) < 1e-12);
}

TEST_CASE("duality: u.(Jv) equals (J^T u).v") {
  for (const char *model : {"tdnn:4:sigmoid:-1,0 fc:3:identity",
                            "rnn:4:tanh:5 fc:3:identity", "lstm:3:tanh:4 fc:3:identity"}) {
    Network net(ModelSpec::Parse(model, 3));
    ParamVector params = net.RandomInit(91, 0.5);
    ParamVector v = RandomVector(net.NumParams(), 92);
    Matrix<double> feats = RandomFrames(6, 3, 93);
    Matrix<double> u = RandomFrames(6, 3, 94);
    auto tape = net.Forward<double>(params, feats);
    Matrix<double> jv = net.RForward<double>(params, tape, v);
    double lhs = 0;
    for (size_t i = 0; i < jv.data.size(); i++) lhs += u.data[i] * jv.data[i];
    ParamVector jtu = net.Backprop<double>(params, tape, u, false);
    CHECK(RelErr(lhs, Dot(jtu, v)) < 1e-10);
  }
}

TEST_CASE("forward, backprop and r_forward are pure") {
  Network net(ModelSpec::Parse("lstm:3:tanh:3 fc:2:identity", 2));
  ParamVector params = net.RandomInit(101, 0.5);
  ParamVector v = RandomVector(net.NumParams(), 102);
  Matrix<double> feats = RandomFrames(4, 2, 103);
  Matrix<double> grads = RandomFrames(4, 2, 104);
  auto t1 = net.Forward<double>(params, feats);
  auto t2 = net.Forward<double>(params, feats);
  CHECK(t1.Logits().data == t2.Logits().data);
  CHECK(net.Backprop<double>(params, t1, grads, true).data ==
        net.Backprop<double>(params, t2, grads, true).data);
  CHECK(net.RForward<double>(params, t1, v).data ==
        net.RForward<double>(params, t2, v).data);
}

TEST_CASE("share counts") {
  SUBCASE("plain fc layers are unshared") {
    Network net(ModelSpec::Parse("fc:4:sigmoid fc:3:identity", 3));
    for (int c : net.GetShareCounts().counts) CHECK(c == 1);
    CHECK_FALSE(net.GetShareCounts().AnyShared());
  }
  SUBCASE("recurrent layer unfolded 20 steps") {
    Network net(ModelSpec::Parse("rnn:4:sigmoid:20 fc:3:identity", 3));
    for (size_t i = 0; i < net.LayerParamSize(0); i++)
      CHECK(net.GetShareCounts().counts[i] == 20);
    for (size_t i = net.LayerParamOffset(1); i < net.NumParams(); i++)
      CHECK(net.GetShareCounts().counts[i] == 1);
  }
  SUBCASE("tdnn layer consumed at 2 splice offsets") {
    Network net(ModelSpec::Parse("fc:4:sigmoid tdnn:4:sigmoid:-1,2 fc:3:identity", 3));
    for (size_t i = 0; i < net.LayerParamSize(0); i++)
      CHECK(net.GetShareCounts().counts[i] == 2);
    for (size_t i = net.LayerParamOffset(1); i < net.NumParams(); i++)
      CHECK(net.GetShareCounts().counts[i] == 1);
  }
}

TEST_CASE("model spec validation") {
  CHECK_THROWS_AS(ModelSpec::Parse("fc:3:sigmoid", 2), Error);
  CHECK_THROWS_AS(ModelSpec::Parse("tdnn:3:identity:1,0", 2), Error);
  CHECK_THROWS_AS(ModelSpec::Parse("rnn:3:identity:0", 2), Error);
  CHECK_THROWS_AS(ModelSpec::Parse("lstm:3:sigmoid:4 fc:2:identity", 2), Error);
  ModelSpec ok = ModelSpec::Parse("tdnn:3:relu:-2,-1,0,1,2 fc:2:identity", 5);
  CHECK(ok.output_dim == 2);
  CHECK(ok.ToString() == "tdnn:3:relu:-2,-1,0,1,2 fc:2:identity");
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ModelSpec spec = ModelSpec::Parse("lstm:3:tanh:4 fc:2:identity", 3);
  Network net(spec);
  ParamVector params = net.RandomInit(111, 0.3);
  params.prec = Precision::kFloat32;
  params.data[0] = 0x1.fffffffffffffp-3;  // awkward mantissa
  std::stringstream ss;
  WriteCheckpoint(ss, spec, params);
  ModelSpec spec2;
  ParamVector params2;
  ReadCheckpoint(ss, &spec2, &params2);
  CHECK(spec2.ToString() == spec.ToString());
  CHECK(spec2.input_dim == spec.input_dim);
  CHECK(params2.prec == params.prec);
  REQUIRE(params2.Dim() == params.Dim());
  for (size_t i = 0; i < params.Dim(); i++) CHECK(params2.data[i] == params.data[i]);
}
