// seqopt/config.cc

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

#include "seqopt/config.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace seqopt {

namespace {

std::string Trim(const std::string &s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool ParseBool(const std::string &key, const std::string &value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  Fail("config: key '%s' expects a boolean, got '%s'", key.c_str(), value.c_str());
}

double ParseDouble(const std::string &key, const std::string &value) {
  char *end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    Fail("config: key '%s' expects a number, got '%s'", key.c_str(), value.c_str());
  return v;
}

int ParseInt(const std::string &key, const std::string &value) {
  const double v = ParseDouble(key, value);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    Fail("config: key '%s' expects an integer, got '%s'", key.c_str(), value.c_str());
  return i;
}

}  // namespace

RunConfig RunConfig::FromText(const std::string &text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    line_no++;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = Trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    SEQOPT_CHECK(eq != std::string::npos, "config line %d: expected 'key = value', got '%s'",
                 line_no, line.c_str());
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    SEQOPT_CHECK(!key.empty() && !value.empty(), "config line %d: empty key or value",
                 line_no);

    if (key == "data") cfg.data_dir = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "model") cfg.model_text = value;
    else if (key == "init_checkpoint") cfg.init_checkpoint = value;
    else if (key == "init_scale") cfg.init_scale = ParseDouble(key, value);
    else if (key == "loss") cfg.loss.kind = LossKindFromName(value);
    else if (key == "kappa") cfg.loss.kappa = ParseDouble(key, value);
    else if (key == "optimizer") cfg.optim.kind = OptimizerKindFromName(value);
    else if (key == "learning_rate") cfg.optim.learning_rate = ParseDouble(key, value);
    else if (key == "momentum") cfg.optim.momentum = ParseDouble(key, value);
    else if (key == "beta1") cfg.optim.beta1 = ParseDouble(key, value);
    else if (key == "beta2") cfg.optim.beta2 = ParseDouble(key, value);
    else if (key == "epsilon") cfg.optim.epsilon = ParseDouble(key, value);
    else if (key == "lambda") cfg.optim.lambda = ParseDouble(key, value);
    else if (key == "inner_ng_iters") cfg.optim.inner_ng_iters = ParseInt(key, value);
    else if (key == "cg_iters") cfg.optim.cg.max_iters = ParseInt(key, value);
    else if (key == "damping") cfg.optim.cg.tikhonov_damping = ParseDouble(key, value);
    else if (key == "stabilize") cfg.optim.cg.stabilize = ParseBool(key, value);
    else if (key == "precondition") {
      SEQOPT_CHECK(value == "auto" || value == "on" || value == "off",
                   "config: precondition must be auto, on or off");
      cfg.precondition_mode = value;
    } else if (key == "eval_every") cfg.optim.cg.eval_every = ParseInt(key, value);
    else if (key == "gradient_batch_size")
      cfg.optim.gradient_batch_size = ParseInt(key, value);
    else if (key == "cg_batch_size") cfg.optim.cg_batch_size = ParseInt(key, value);
    else if (key == "updates_per_epoch") cfg.optim.updates_per_epoch = ParseInt(key, value);
    else if (key == "select_on_valid") cfg.optim.select_on_valid = ParseBool(key, value);
    else if (key == "epochs") cfg.epochs = ParseInt(key, value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(ParseDouble(key, value));
    else if (key == "precision") cfg.precision = PrecisionFromName(value);
    else if (key == "workers") cfg.workers = ParseInt(key, value);
    else if (key == "valid_every") cfg.valid_every = ParseInt(key, value);
    else if (key == "num_train") cfg.task.num_train = ParseInt(key, value);
    else if (key == "num_valid") cfg.task.num_valid = ParseInt(key, value);
    else if (key == "num_states") cfg.task.num_states = ParseInt(key, value);
    else if (key == "feat_dim") cfg.task.feat_dim = ParseInt(key, value);
    else if (key == "min_segments") cfg.task.min_segments = ParseInt(key, value);
    else if (key == "max_segments") cfg.task.max_segments = ParseInt(key, value);
    else if (key == "min_segment_len") cfg.task.min_segment_len = ParseInt(key, value);
    else if (key == "max_segment_len") cfg.task.max_segment_len = ParseInt(key, value);
    else if (key == "confusability") cfg.task.confusability = ParseDouble(key, value);
    else if (key == "emitter_sep") cfg.task.emitter_sep = ParseDouble(key, value);
    else if (key == "noise_std") cfg.task.noise_std = ParseDouble(key, value);
    else
      Fail("config line %d: unknown key '%s'", line_no, key.c_str());
  }
  return cfg;
}

RunConfig RunConfig::Load(const std::string &path) {
  std::ifstream is(path);
  SEQOPT_CHECK(is.good(), "cannot open config file '%s'", path.c_str());
  std::ostringstream ss;
  ss << is.rdbuf();
  return FromText(ss.str());
}

std::string RunConfig::ToText() const {
  std::ostringstream os;
  os << "data = " << data_dir << "\n";
  os << "out = " << out_dir << "\n";
  if (!model_text.empty()) os << "model = " << model_text << "\n";
  if (!init_checkpoint.empty()) os << "init_checkpoint = " << init_checkpoint << "\n";
  os << "init_scale = " << init_scale << "\n";
  os << "loss = " << LossKindName(loss.kind) << "\n";
  os << "kappa = " << loss.kappa << "\n";
  os << "optimizer = " << OptimizerKindName(optim.kind) << "\n";
  os << "learning_rate = " << optim.learning_rate << "\n";
  os << "momentum = " << optim.momentum << "\n";
  os << "beta1 = " << optim.beta1 << "\n";
  os << "beta2 = " << optim.beta2 << "\n";
  os << "epsilon = " << optim.epsilon << "\n";
  os << "lambda = " << optim.lambda << "\n";
  os << "inner_ng_iters = " << optim.inner_ng_iters << "\n";
  os << "cg_iters = " << optim.cg.max_iters << "\n";
  os << "damping = " << optim.cg.tikhonov_damping << "\n";
  os << "stabilize = " << (optim.cg.stabilize ? "on" : "off") << "\n";
  os << "precondition = " << precondition_mode << "\n";
  os << "eval_every = " << optim.cg.eval_every << "\n";
  os << "gradient_batch_size = " << optim.gradient_batch_size << "\n";
  os << "cg_batch_size = " << optim.cg_batch_size << "\n";
  os << "updates_per_epoch = " << optim.updates_per_epoch << "\n";
  os << "select_on_valid = " << (optim.select_on_valid ? "on" : "off") << "\n";
  os << "epochs = " << epochs << "\n";
  os << "seed = " << seed << "\n";
  os << "precision = " << PrecisionName(precision) << "\n";
  os << "workers = " << workers << "\n";
  os << "valid_every = " << valid_every << "\n";
  os << "num_train = " << task.num_train << "\n";
  os << "num_valid = " << task.num_valid << "\n";
  os << "num_states = " << task.num_states << "\n";
  os << "feat_dim = " << task.feat_dim << "\n";
  os << "min_segments = " << task.min_segments << "\n";
  os << "max_segments = " << task.max_segments << "\n";
  os << "min_segment_len = " << task.min_segment_len << "\n";
  os << "max_segment_len = " << task.max_segment_len << "\n";
  os << "confusability = " << task.confusability << "\n";
  os << "emitter_sep = " << task.emitter_sep << "\n";
  os << "noise_std = " << task.noise_std << "\n";
  return os.str();
}

void RunConfig::Validate() const {
  loss.Validate();
  optim.Validate();
  SEQOPT_CHECK(epochs >= 1, "config: epochs must be >= 1");
  SEQOPT_CHECK(workers >= 1, "config: workers must be >= 1");
  SEQOPT_CHECK(valid_every >= 0, "config: valid_every must be >= 0");
}

}  // namespace seqopt
