// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "slmtk/toydata.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "slmtk/ngram.h"

namespace slmtk {

namespace {

// Raw 64-bit draws only; distribution classes differ between libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}
  double Uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  size_t Index(size_t n) { return static_cast<size_t>(Uniform() * static_cast<double>(n)); }
  bool Bernoulli(double p) { return Uniform() < p; }
  double Gaussian() {
    double u1 = std::max(Uniform(), 1e-300), u2 = Uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  template <class T>
  const T& Pick(const std::vector<T>& v) { return v[Index(v.size())]; }

 private:
  std::mt19937_64 gen_;
};

struct Lexicon {
  std::vector<std::string> nouns_sg{"dog", "cat", "man", "woman", "bird", "child", "farmer", "horse"};
  std::vector<std::string> nouns_pl{"dogs", "cats", "men", "women", "birds", "children", "farmers", "horses"};
  std::vector<std::string> trans_sg{"sees", "likes", "chases", "feeds"};
  std::vector<std::string> trans_pl{"see", "like", "chase", "feed"};
  std::vector<std::string> intrans_sg{"sleeps", "runs", "sings"};
  std::vector<std::string> intrans_pl{"sleep", "run", "sing"};
  std::vector<std::string> dets_sg{"the", "a", "this"};
  std::vector<std::string> dets_pl{"the", "some", "these"};
  std::vector<std::string> adjs{"big", "small", "old", "red"};
  std::vector<std::string> preps{"with", "near", "behind"};
  std::vector<std::string> advs{"today", "again"};
};

RawTree Leaf(const std::string& tag, const std::string& word) {
  RawTree t;
  t.symbol = tag;
  t.word = word;
  return t;
}

RawTree Node(const std::string& label, int head, RawTree left, RawTree right) {
  RawTree t;
  t.symbol = label;
  t.head_child = head;
  t.word = head == 0 ? left.word : right.word;
  t.children.push_back(std::move(left));
  t.children.push_back(std::move(right));
  return t;
}

class Grammar {
 public:
  Grammar(Rng& rng, double pp_rate) : rng_(rng), pp_rate_(pp_rate) {}

  RawTree Sentence() {
    bool plural = rng_.Bernoulli(0.5);
    RawTree subject = NounPhrase(plural, 0);
    RawTree vp = VerbPhrase(plural);
    RawTree s = Node("S", 1, std::move(subject), std::move(vp));
    if (rng_.Bernoulli(0.1)) s = Node("S", 0, std::move(s), Leaf("RB", rng_.Pick(lex_.advs)));
    return s;
  }

 private:
  RawTree NounPhrase(bool plural, int depth) {
    const auto& nouns = plural ? lex_.nouns_pl : lex_.nouns_sg;
    RawTree noun = Leaf("NN", rng_.Pick(nouns));
    if (rng_.Bernoulli(0.3)) noun = Node("NBAR", 1, Leaf("JJ", rng_.Pick(lex_.adjs)), std::move(noun));
    RawTree np = Node("NP", 1, Leaf("DT", rng_.Pick(plural ? lex_.dets_pl : lex_.dets_sg)), std::move(noun));
    if (depth < 2 && rng_.Bernoulli(pp_rate_)) {
      RawTree pp = Node("PP", 0, Leaf("IN", rng_.Pick(lex_.preps)),
                        NounPhrase(rng_.Bernoulli(0.5), depth + 1));
      np = Node("NP", 0, std::move(np), std::move(pp));
    }
    return np;
  }

  RawTree VerbPhrase(bool plural) {
    if (rng_.Bernoulli(0.3)) {
      return Leaf("VBI", rng_.Pick(plural ? lex_.intrans_pl : lex_.intrans_sg));
    }
    RawTree verb = Leaf("VB", rng_.Pick(plural ? lex_.trans_pl : lex_.trans_sg));
    return Node("VP", 0, std::move(verb), NounPhrase(rng_.Bernoulli(0.5), 1));
  }

  Rng& rng_;
  double pp_rate_;
  Lexicon lex_;
};

// Words a recognizer might confuse with `w`: the other number form first.
std::vector<std::string> Confusions(const std::string& w) {
  static const Lexicon lex;
  std::vector<std::string> out;
  auto pair_up = [&](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i] == w) out.push_back(b[i]);
      if (b[i] == w) out.push_back(a[i]);
    }
  };
  pair_up(lex.nouns_sg, lex.nouns_pl);
  pair_up(lex.trans_sg, lex.trans_pl);
  pair_up(lex.intrans_sg, lex.intrans_pl);
  pair_up(lex.dets_sg, lex.dets_pl);
  for (const auto* group : {&lex.adjs, &lex.preps}) {
    if (std::find(group->begin(), group->end(), w) != group->end()) {
      for (const auto& o : *group) {
        if (o != w) out.push_back(o);
      }
    }
  }
  out.erase(std::remove(out.begin(), out.end(), w), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct Slot {
  std::vector<std::string> words;
  std::vector<double> am;
};

std::vector<Slot> ConfusionNetwork(const std::vector<std::string>& ref, Rng& rng, double rate) {
  std::vector<Slot> slots;
  for (const auto& w : ref) {
    Slot s;
    s.words.push_back(w);
    s.am.push_back(-2.0 + 0.5 * rng.Gaussian());
    auto conf = Confusions(w);
    size_t k = std::min<size_t>(conf.size(), 1 + rng.Index(2));
    for (size_t i = 0; i < k; ++i) {
      s.words.push_back(conf[i]);
      // A confusion beats the reference in roughly `rate` of the slots.
      double gap = rng.Bernoulli(rate) ? -0.3 - 0.5 * rng.Uniform() : 0.5 + 1.5 * rng.Uniform();
      s.am.push_back(s.am[0] - gap);
    }
    slots.push_back(std::move(s));
  }
  return slots;
}

Lattice SlotsToLattice(const std::vector<Slot>& slots, const NgramModel& lm) {
  std::vector<double> times;
  std::vector<LatticeLink> links;
  for (size_t i = 0; i <= slots.size() + 1; ++i) times.push_back(0.25 * static_cast<double>(i));
  for (size_t i = 0; i < slots.size(); ++i) {
    for (size_t k = 0; k < slots[i].words.size(); ++k) {
      WordId id = lm.vocab().MapWord(slots[i].words[k], OovPolicy::kOpen);
      links.push_back({static_cast<int32_t>(i), static_cast<int32_t>(i + 1), slots[i].words[k],
                       slots[i].am[k], std::log(lm.UnigramProb(id))});
    }
  }
  int32_t last = static_cast<int32_t>(slots.size());
  links.push_back({last, last + 1, std::string(Vocabulary::kEosString), 0.0,
                   std::log(lm.UnigramProb(Vocabulary::kEos))});
  return Lattice::Build(std::move(times), std::move(links));
}

// K best paths of a confusion network by acoustic score plus weighted
// first-pass LM score.
std::vector<NBestHypothesis> SlotsNBest(const std::vector<Slot>& slots, const Lattice& lat, int n) {
  std::vector<std::vector<std::pair<double, size_t>>> ranked(slots.size());
  size_t link = 0;
  for (size_t i = 0; i < slots.size(); ++i) {
    for (size_t k = 0; k < slots[i].words.size(); ++k, ++link) {
      double score = slots[i].am[k] + lat.link(static_cast<int32_t>(link)).lm;
      ranked[i].push_back({score, k});
    }
    std::stable_sort(ranked[i].begin(), ranked[i].end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
  }
  using Choice = std::vector<size_t>;
  auto total = [&](const Choice& c) {
    double s = 0.0;
    for (size_t i = 0; i < c.size(); ++i) s += ranked[i][c[i]].first;
    return s;
  };
  std::set<std::pair<double, Choice>, std::greater<>> frontier;
  std::set<Choice> seen;
  Choice start(slots.size(), 0);
  frontier.insert({total(start), start});
  seen.insert(start);
  std::vector<NBestHypothesis> out;
  while (!frontier.empty() && static_cast<int>(out.size()) < n) {
    auto [score, c] = *frontier.begin();
    frontier.erase(frontier.begin());
    NBestHypothesis h;
    for (size_t i = 0; i < c.size(); ++i) {
      size_t k = ranked[i][c[i]].second;
      h.words.push_back(slots[i].words[k]);
      h.am += slots[i].am[k];
    }
    out.push_back(std::move(h));
    for (size_t i = 0; i < c.size(); ++i) {
      if (c[i] + 1 >= ranked[i].size()) continue;
      Choice next = c;
      ++next[i];
      if (seen.insert(next).second) frontier.insert({total(next), next});
    }
  }
  return out;
}

std::string Join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

ToyData GenerateToyData(const ToyOptions& options) {
  if (options.train_sentences < 2 || options.heldout_sentences < 1 || options.test_sentences < 1) {
    throw ConfigError("toy data needs at least two training and one held-out and test sentence");
  }
  Rng rng(options.seed);
  Grammar grammar(rng, options.pp_rate);
  ToyData data;
  auto words_of = [](const RawTree& t) {
    std::vector<std::string> w;
    CollectWords(t, w);
    return w;
  };
  for (int i = 0; i < options.train_sentences; ++i) {
    data.train_trees.push_back(grammar.Sentence());
    data.train.push_back(words_of(data.train_trees.back()));
  }
  for (int i = 0; i < options.heldout_sentences; ++i) data.heldout.push_back(words_of(grammar.Sentence()));
  std::vector<std::vector<std::string>> test;
  for (int i = 0; i < options.test_sentences; ++i) test.push_back(words_of(grammar.Sentence()));

  // First-pass scores come from a trigram on the training text.
  Vocabulary vocab = BuildVocabulary(data.train, 1 << 20);
  std::vector<Sentence> corpus;
  for (const auto& s : data.train) corpus.push_back(vocab.MapSentence(s, OovPolicy::kOpen));
  NgramModel lm = NgramModel::Train(vocab, corpus);
  for (int i = 0; i < options.test_sentences; ++i) {
    ToyUtterance u;
    char id[32];
    std::snprintf(id, sizeof(id), "utt%04d", i + 1);
    u.id = id;
    u.reference = test[i];
    auto slots = ConfusionNetwork(u.reference, rng, options.confusion_rate);
    u.lattice = SlotsToLattice(slots, lm);
    u.nbest = SlotsNBest(slots, u.lattice, options.nbest);
    data.test.push_back(std::move(u));
  }
  return data;
}

void WriteToyData(const ToyData& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "lattices");
  auto lines = [](const std::vector<std::vector<std::string>>& c) {
    std::string out;
    for (const auto& s : c) out += Join(s) + "\n";
    return out;
  };
  WriteFileAtomic(dir + "/train.txt", lines(data.train));
  WriteFileAtomic(dir + "/heldout.txt", lines(data.heldout));
  std::string trees;
  for (const auto& t : data.train_trees) trees += FormatRawTree(t) + "\n";
  WriteFileAtomic(dir + "/train.trees", trees);
  std::string refs;
  std::vector<NBestList> lists;
  for (const auto& u : data.test) {
    refs += u.id + " " + Join(u.reference) + "\n";
    WriteFileAtomic(dir + "/lattices/" + u.id + ".lat", u.lattice.Serialize());
    lists.push_back({u.id, u.nbest});
  }
  WriteFileAtomic(dir + "/test.txt", refs);
  WriteFileAtomic(dir + "/test.nbest", FormatNBestFile(lists));
}

std::vector<NBestList> ParseNBestFile(std::string_view text) {
  std::vector<NBestList> out;
  size_t line_no = 0;
  for (const auto& line : SplitChar(text, '\n')) {
    ++line_no;
    if (SplitWhitespace(line).empty()) continue;
    auto cols = SplitChar(line, '\t');
    if (cols.size() != 3) {
      throw DataError("nbest line " + std::to_string(line_no) + ": expected id<TAB>am<TAB>words");
    }
    NBestHypothesis h;
    try {
      h.am = ParseDouble(cols[1], "acoustic score");
    } catch (const DataError& e) {
      throw DataError("nbest line " + std::to_string(line_no) + ": " + e.what());
    }
    h.words = SplitWhitespace(cols[2]);
    if (out.empty() || out.back().id != cols[0]) {
      for (const auto& l : out) {
        if (l.id == cols[0]) {
          throw DataError("nbest line " + std::to_string(line_no) + ": utterance " + cols[0] +
                          " is not contiguous");
        }
      }
      out.push_back({cols[0], {}});
    }
    out.back().hypotheses.push_back(std::move(h));
  }
  return out;
}

std::string FormatNBestFile(const std::vector<NBestList>& lists) {
  std::string out;
  for (const auto& l : lists) {
    for (const auto& h : l.hypotheses) out += l.id + "\t" + FormatDouble(h.am) + "\t" + Join(h.words) + "\n";
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<std::string>>> ParseReferenceFile(std::string_view text) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::set<std::string> ids;
  size_t line_no = 0;
  for (const auto& line : SplitChar(text, '\n')) {
    ++line_no;
    auto fields = SplitWhitespace(line);
    if (fields.empty()) continue;
    if (!ids.insert(fields[0]).second) {
      throw DataError("reference line " + std::to_string(line_no) + ": duplicate id " + fields[0]);
    }
    out.push_back({fields[0], std::vector<std::string>(fields.begin() + 1, fields.end())});
  }
  return out;
}

}  // namespace slmtk
