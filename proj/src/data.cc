// seqopt/data.cc

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

#include "seqopt/data.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace seqopt {

void SyntheticTaskConfig::Validate() const {
  SEQOPT_CHECK(num_train >= 1 && num_valid >= 0, "gen-data: bad split sizes");
  SEQOPT_CHECK(num_states >= 2, "gen-data: need at least 2 states");
  SEQOPT_CHECK(feat_dim >= 1, "gen-data: bad feat_dim");
  SEQOPT_CHECK(min_segments >= 1 && max_segments >= min_segments, "gen-data: bad segment counts");
  SEQOPT_CHECK(min_segment_len >= 1 && max_segment_len >= min_segment_len,
               "gen-data: bad segment lengths");
  SEQOPT_CHECK(confusability >= 0.0 && confusability <= 1.0,
               "gen-data: confusability must be in [0,1]");
  SEQOPT_CHECK(noise_std > 0.0, "gen-data: noise_std must be > 0");
}

namespace {

std::string PhoneName(int state) { return "p" + std::to_string(state); }

int StateFromPhone(const std::string &label) {
  SEQOPT_CHECK(label.size() >= 2 && label[0] == 'p', "bad phone label '%s'", label.c_str());
  return std::atoi(label.c_str() + 1);
}

Utterance MakeUtterance(const std::string &id, const std::vector<int> &seg_states,
                        const std::vector<int> &seg_lens,
                        const std::vector<std::vector<int>> &competitors,
                        const Matrix<double> &means, double noise_std, int feat_dim,
                        std::mt19937_64 *rng) {
  Utterance utt;
  utt.utt_id = id;
  const int n_seg = static_cast<int>(seg_states.size());
  int total = 0;
  for (int len : seg_lens) total += len;
  utt.features = Matrix<double>(total, feat_dim);
  utt.frame_labels.resize(total);

  std::normal_distribution<double> noise(0.0, noise_std);
  int t = 0;
  for (int s = 0; s < n_seg; s++) {
    const int state = seg_states[s];
    utt.reference.push_back({PhoneName(state), t, t + seg_lens[s]});
    for (int i = 0; i < seg_lens[s]; i++, t++) {
      utt.frame_labels[t] = state;
      for (int d = 0; d < feat_dim; d++)
        utt.features(t, d) = means(state, d) + noise(*rng);
    }
  }

  // Nodes at segment boundaries; the numerator is the reference path and the
  // denominator adds the confusable labels in parallel on every segment.
  utt.lattices.num.utt_id = id;
  utt.lattices.den.utt_id = id;
  int time = 0;
  utt.lattices.num.nodes.push_back({0, 0});
  utt.lattices.den.nodes.push_back({0, 0});
  for (int s = 0; s < n_seg; s++) {
    time += seg_lens[s];
    utt.lattices.num.nodes.push_back({s + 1, time});
    utt.lattices.den.nodes.push_back({s + 1, time});
    const int state = seg_states[s];
    Arc ref_arc;
    ref_arc.start_node = s;
    ref_arc.end_node = s + 1;
    ref_arc.phone_label = PhoneName(state);
    ref_arc.alignment.assign(seg_lens[s], state);
    utt.lattices.num.arcs.push_back(ref_arc);
    utt.lattices.den.arcs.push_back(ref_arc);
    for (int alt : competitors[state]) {
      Arc arc;
      arc.start_node = s;
      arc.end_node = s + 1;
      arc.phone_label = PhoneName(alt);
      arc.alignment.assign(seg_lens[s], alt);
      utt.lattices.den.arcs.push_back(arc);
    }
  }
  utt.lattices.Validate();
  return utt;
}

Dataset GenerateSplit(const SyntheticTaskConfig &cfg, const std::string &prefix, int count,
                      const Matrix<double> &means,
                      const std::vector<std::vector<int>> &competitors, uint64_t seed) {
  Dataset data;
  data.feat_dim = cfg.feat_dim;
  data.num_states = cfg.num_states;
  for (int u = 0; u < count; u++) {
    std::mt19937_64 rng(MixSeed(seed, 17, u));
    std::uniform_int_distribution<int> seg_count(cfg.min_segments, cfg.max_segments);
    std::uniform_int_distribution<int> seg_len(cfg.min_segment_len, cfg.max_segment_len);
    std::uniform_int_distribution<int> state_pick(0, cfg.num_states - 1);
    const int n_seg = seg_count(rng);
    std::vector<int> states(n_seg), lens(n_seg);
    for (int s = 0; s < n_seg; s++) {
      states[s] = state_pick(rng);
      lens[s] = seg_len(rng);
    }
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04d", prefix.c_str(), u);
    data.utts.push_back(MakeUtterance(id, states, lens, competitors, means, cfg.noise_std,
                                      cfg.feat_dim, &rng));
  }
  return data;
}

}  // namespace

SyntheticTask GenerateSyntheticTask(const SyntheticTaskConfig &cfg) {
  cfg.Validate();
  std::mt19937_64 rng(MixSeed(cfg.seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix<double> means(cfg.num_states, cfg.feat_dim);
  for (int k = 0; k < cfg.num_states; k++)
    for (int d = 0; d < cfg.feat_dim; d++) means(k, d) = cfg.emitter_sep * gauss(rng);

  // Competitors of a state are its acoustically nearest neighbours; the
  // confusability level sets how many of them appear per segment.
  const int n_comp = std::min(cfg.num_states - 1,
                              static_cast<int>(std::lround(3.0 * cfg.confusability)));
  std::vector<std::vector<int>> competitors(cfg.num_states);
  for (int k = 0; k < cfg.num_states; k++) {
    std::vector<std::pair<double, int>> by_dist;
    for (int j = 0; j < cfg.num_states; j++) {
      if (j == k) continue;
      double d2 = 0.0;
      for (int d = 0; d < cfg.feat_dim; d++) {
        const double diff = means(k, d) - means(j, d);
        d2 += diff * diff;
      }
      by_dist.push_back({d2, j});
    }
    std::sort(by_dist.begin(), by_dist.end());
    for (int i = 0; i < n_comp; i++) competitors[k].push_back(by_dist[i].second);
    std::sort(competitors[k].begin(), competitors[k].end());
  }

  SyntheticTask task;
  task.train = GenerateSplit(cfg, "train", cfg.num_train, means, competitors,
                             MixSeed(cfg.seed, 5));
  task.valid = GenerateSplit(cfg, "valid", cfg.num_valid, means, competitors,
                             MixSeed(cfg.seed, 7));
  return task;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

void SaveDataset(const std::string &dir, const Dataset &data) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  SEQOPT_CHECK(!ec, "gen-data: cannot create directory '%s'", dir.c_str());

  {
    std::ofstream os(dir + "/manifest.txt");
    SEQOPT_CHECK(os.good(), "cannot write '%s/manifest.txt'", dir.c_str());
    os << "SEQOPT_DATA 1\n";
    os << "num_states " << data.num_states << "\n";
    os << "feat_dim " << data.feat_dim << "\n";
    os << "utterances " << data.Size() << "\n";
  }
  {
    std::ofstream os(dir + "/feats.txt");
    SEQOPT_CHECK(os.good(), "cannot write '%s/feats.txt'", dir.c_str());
    char buf[32];
    for (const Utterance &utt : data.utts) {
      os << "UTT " << utt.utt_id << ' ' << utt.features.rows << ' ' << utt.features.cols
         << '\n';
      for (int t = 0; t < utt.features.rows; t++) {
        for (int d = 0; d < utt.features.cols; d++) {
          std::snprintf(buf, sizeof(buf), "%.17g", utt.features(t, d));
          os << (d ? " " : "") << buf;
        }
        os << '\n';
      }
    }
  }
  {
    std::ofstream os(dir + "/refs.txt");
    SEQOPT_CHECK(os.good(), "cannot write '%s/refs.txt'", dir.c_str());
    for (const Utterance &utt : data.utts) {
      os << "REF " << utt.utt_id << ' ' << utt.reference.size() << '\n';
      for (const TimedPhone &p : utt.reference)
        os << "P " << p.label << ' ' << StateFromPhone(p.label) << ' ' << p.start << ' '
           << p.end << '\n';
    }
  }
  std::vector<Lattice> num_lats, den_lats;
  for (const Utterance &utt : data.utts) {
    num_lats.push_back(utt.lattices.num);
    den_lats.push_back(utt.lattices.den);
  }
  WriteLatticeFile(dir + "/num.lat", num_lats);
  WriteLatticeFile(dir + "/den.lat", den_lats);
}

Dataset LoadDataset(const std::string &dir) {
  Dataset data;
  {
    std::ifstream is(dir + "/manifest.txt");
    SEQOPT_CHECK(is.good(), "cannot open '%s/manifest.txt'", dir.c_str());
    std::string line, key;
    SEQOPT_CHECK(static_cast<bool>(std::getline(is, line)) && line == "SEQOPT_DATA 1",
                 "bad manifest header in '%s'", dir.c_str());
    int n_utts = -1;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      ls >> key;
      if (key == "num_states") ls >> data.num_states;
      else if (key == "feat_dim") ls >> data.feat_dim;
      else if (key == "utterances") ls >> n_utts;
      else Fail("manifest '%s': unknown key '%s'", dir.c_str(), key.c_str());
    }
    SEQOPT_CHECK(data.num_states > 0 && data.feat_dim > 0 && n_utts >= 0,
                 "manifest '%s': missing fields", dir.c_str());
    data.utts.resize(n_utts);
  }
  {
    std::ifstream is(dir + "/feats.txt");
    SEQOPT_CHECK(is.good(), "cannot open '%s/feats.txt'", dir.c_str());
    for (Utterance &utt : data.utts) {
      std::string tag;
      int t_frames = 0, n_dim = 0;
      is >> tag >> utt.utt_id >> t_frames >> n_dim;
      SEQOPT_CHECK(tag == "UTT" && t_frames > 0 && n_dim == data.feat_dim,
                   "feats.txt: bad utterance header in '%s'", dir.c_str());
      utt.features = Matrix<double>(t_frames, n_dim);
      for (double &v : utt.features.data) is >> v;
      SEQOPT_CHECK(!is.fail(), "feats.txt: truncated features for '%s'", utt.utt_id.c_str());
    }
  }
  {
    std::ifstream is(dir + "/refs.txt");
    SEQOPT_CHECK(is.good(), "cannot open '%s/refs.txt'", dir.c_str());
    for (Utterance &utt : data.utts) {
      std::string tag, id;
      int n_phones = 0;
      is >> tag >> id >> n_phones;
      SEQOPT_CHECK(tag == "REF" && id == utt.utt_id, "refs.txt: order mismatch at '%s'",
                   id.c_str());
      utt.frame_labels.assign(utt.NumFrames(), -1);
      for (int p = 0; p < n_phones; p++) {
        TimedPhone ph;
        int state = 0;
        is >> tag >> ph.label >> state >> ph.start >> ph.end;
        SEQOPT_CHECK(tag == "P" && !is.fail(), "refs.txt: bad phone line for '%s'",
                     id.c_str());
        SEQOPT_CHECK(ph.start >= 0 && ph.end <= utt.NumFrames() && ph.start < ph.end,
                     "refs.txt: phone span outside utterance '%s'", id.c_str());
        for (int t = ph.start; t < ph.end; t++) utt.frame_labels[t] = state;
        utt.reference.push_back(ph);
      }
      for (int t = 0; t < utt.NumFrames(); t++)
        SEQOPT_CHECK(utt.frame_labels[t] >= 0, "refs.txt: frame %d of '%s' unlabelled", t,
                     id.c_str());
    }
  }
  std::vector<Lattice> num_lats = ParseLatticeFile(dir + "/num.lat");
  std::vector<Lattice> den_lats = ParseLatticeFile(dir + "/den.lat");
  SEQOPT_CHECK(num_lats.size() == data.utts.size() && den_lats.size() == data.utts.size(),
               "lattice files in '%s' do not match utterance count", dir.c_str());
  for (size_t i = 0; i < data.utts.size(); i++) {
    Utterance &utt = data.utts[i];
    utt.lattices.num = std::move(num_lats[i]);
    utt.lattices.den = std::move(den_lats[i]);
    utt.lattices.Validate();
    SEQOPT_CHECK(utt.lattices.num.utt_id == utt.utt_id, "num.lat: order mismatch at '%s'",
                 utt.lattices.num.utt_id.c_str());
    utt.lattices.num.ValidateStateIds(data.num_states);
    utt.lattices.den.ValidateStateIds(data.num_states);
    SEQOPT_CHECK(utt.lattices.den.StartTime() == 0 &&
                     utt.lattices.den.EndTime() == utt.NumFrames(),
                 "lattice for '%s' does not cover the utterance", utt.utt_id.c_str());
  }
  return data;
}

void SaveSyntheticTask(const std::string &dir, const SyntheticTask &task,
                       const SyntheticTaskConfig &cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  SEQOPT_CHECK(!ec, "gen-data: cannot create directory '%s'", dir.c_str());
  SaveDataset(dir + "/train", task.train);
  SaveDataset(dir + "/valid", task.valid);
  std::ofstream os(dir + "/task.txt");
  SEQOPT_CHECK(os.good(), "cannot write '%s/task.txt'", dir.c_str());
  os << "seed " << cfg.seed << "\nnum_train " << cfg.num_train << "\nnum_valid "
     << cfg.num_valid << "\nnum_states " << cfg.num_states << "\nfeat_dim " << cfg.feat_dim
     << "\nmin_segments " << cfg.min_segments << "\nmax_segments " << cfg.max_segments
     << "\nmin_segment_len " << cfg.min_segment_len << "\nmax_segment_len "
     << cfg.max_segment_len << "\nconfusability " << cfg.confusability << "\nemitter_sep "
     << cfg.emitter_sep << "\nnoise_std " << cfg.noise_std << "\n";
}

}  // namespace seqopt
