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

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "slmtk/astar.h"
#include "slmtk/ngram.h"
#include "slmtk/slm.h"
#include "slmtk/toydata.h"
#include "test_util.h"

namespace slmtk {
namespace {

using testing::ContextScorer;
using testing::TestRng;

const std::vector<std::string> kWords = {"a", "b", "c", "d", "e"};

// Records every scored link so expansions can be recounted independently.
class RecordingScorer : public LinkScorer {
 public:
  explicit RecordingScorer(const LinkScorer& inner) : inner_(inner) {}
  LMStatePtr Start() const override { return inner_.Start(); }
  double Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const override {
    double s = inner_.Score(state, link, next);
    calls.push_back({link, s});
    return s;
  }
  mutable std::vector<std::pair<int32_t, double>> calls;

 private:
  const LinkScorer& inner_;
};

RescoreParams Params(double lm_weight, double log_ip, double log_comp, double log_final) {
  RescoreParams p;
  p.lm_weight = lm_weight;
  p.log_ip = log_ip;
  p.log_comp = log_comp;
  p.log_final = log_final;
  return p;
}

Lattice SmallLattice(TestRng& rng) {
  int levels = 2 + static_cast<int>(rng.Index(5));
  return testing::RandomLattice(rng, kWords, levels, std::min(12, levels + 1 + static_cast<int>(rng.Index(8))));
}

// Every path from `node` to the final node.
std::vector<LatticePath> SuffixesFrom(const Lattice& lat, int32_t node) {
  std::vector<LatticePath> out;
  LatticePath cur;
  std::function<void(int32_t)> walk = [&](int32_t v) {
    if (v == lat.final()) {
      out.push_back(cur);
      return;
    }
    for (int32_t j : lat.out_links(v)) {
      cur.push_back(j);
      walk(lat.link(j).end);
      cur.pop_back();
    }
  };
  walk(node);
  return out;
}

struct Best {
  LatticePath path;
  double f = -std::numeric_limits<double>::infinity();
};

Best ExhaustiveBest(const Lattice& lat, const LinkScorer& scorer, const RescoreParams& p) {
  Best best;
  for (const auto& path : EnumeratePaths(lat, 1 << 20)) {
    double f = PathScore(lat, scorer, path, p);
    if (f > best.f) best = {path, f};
  }
  return best;
}

// Largest rise between consecutive entries. With an exact heuristic a child
// ties its parent, so rounding alone can produce a rise of a few ulps.
double MaxRise(const std::vector<double>& v) {
  double rise = 0.0;
  for (size_t i = 1; i < v.size(); ++i) rise = std::max(rise, v[i] - v[i - 1]);
  return rise;
}

TEST(RescoreParams, Validation) {
  EXPECT_NO_THROW(RescoreParams{}.Validate());
  EXPECT_THROW(Params(0, 0, 0, 0).Validate(), ConfigError);
  EXPECT_THROW(Params(1, -1, 0, 0).Validate(), ConfigError);
  EXPECT_THROW(Params(1, 0, NAN, 0).Validate(), ConfigError);
  RescoreParams p;
  p.stack_capacity = 0;
  EXPECT_THROW(p.Validate(), ConfigError);
}

TEST(SuffixBound, FinalNodeIsZero) {
  TestRng rng(1);
  Lattice lat = SmallLattice(rng);
  SuffixBound h(lat, Params(3, 2, 0.5, 1.5));
  EXPECT_EQ(h(lat.final()), 0.0);
  EXPECT_EQ(h.raw(lat.final()), 0.0);
}

TEST(SuffixBound, TwoLinkChain) {
  Lattice lat = Lattice::Build({0, 1, 2}, {{0, 1, "a", -1, -2}, {1, 2, "b", -1, -2}});
  SuffixBound h(lat, Params(1, 0, 0, 0));
  EXPECT_DOUBLE_EQ(h(lat.initial()), -6.0);
  EXPECT_DOUBLE_EQ(h(1), -3.0);
}

TEST(SuffixBound, MatchesEnumeratedSuffixes) {
  TestRng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Lattice lat = SmallLattice(rng);
    RescoreParams p = Params(rng.Uniform(0.5, 15), rng.Uniform(0, 10), rng.Uniform(-1, 2), rng.Uniform(-1, 1));
    SuffixBound h(lat, p);
    for (int32_t v = 0; v < lat.num_nodes(); ++v) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& suffix : SuffixesFrom(lat, v)) {
        double s = 0.0;
        for (int32_t j : suffix) {
          const auto& l = lat.link(j);
          s += l.am + p.lm_weight * (l.lm + p.log_comp) - p.log_ip;
        }
        best = std::max(best, s);
      }
      double expected = v == lat.final() ? 0.0 : best + p.lm_weight * p.log_final;
      EXPECT_NEAR(h(v), expected, 1e-9 * std::max(1.0, std::abs(expected)));
      // Backward recursion holds with equality on some outgoing link.
      if (v != lat.final()) {
        double tightest = -std::numeric_limits<double>::infinity();
        for (int32_t j : lat.out_links(v)) {
          const auto& l = lat.link(j);
          double through = l.am + p.lm_weight * (l.lm + p.log_comp) - p.log_ip + h.raw(l.end);
          EXPECT_GE(h.raw(v), through - 1e-12);
          tightest = std::max(tightest, through);
        }
        EXPECT_DOUBLE_EQ(h.raw(v), tightest);
      }
    }
  }
}

TEST(PathScore, SingleLink) {
  Lattice lat = Lattice::Build({0, 1}, {{0, 1, "a", -10, std::log(0.5)}});
  FirstPassLinkScorer fp(lat);
  EXPECT_DOUBLE_EQ(PathScore(lat, fp, {0}, Params(1, 0, 0, 0)), -10 + std::log(0.5));
}

TEST(PathScore, InsertionPenaltyPerLink) {
  Lattice lat = Lattice::Build({0, 1, 2, 3}, {{0, 1, "a", -1, -0.5}, {1, 2, "b", -2, -1}, {2, 3, "c", -3, -1.5}});
  FirstPassLinkScorer fp(lat);
  double without = PathScore(lat, fp, {0, 1, 2}, Params(2, 0, 0, 0));
  double with = PathScore(lat, fp, {0, 1, 2}, Params(2, 1, 0, 0));
  EXPECT_DOUBLE_EQ(without - with, 3.0);
}

TEST(PathScore, IncrementalMatchesRecompute) {
  Vocabulary v;
  for (const auto& w : kWords) v.AddWord(w, 1);
  TestRng rng(3);
  std::vector<Sentence> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(testing::RandomSentence(rng, v, 1, 8));
  NgramModel lm = NgramModel::Train(v, corpus);
  for (int trial = 0; trial < 20; ++trial) {
    Lattice lat = testing::RandomLattice(rng, kWords, 5, 5);
    LmLinkScorer scorer(lat, lm, LinkWordIds(lat, v, OovPolicy::kClosed));
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), 0, 0);
    LatticePath path = EnumeratePaths(lat, 1)[0];
    ASSERT_EQ(path.size(), 5u);
    LMStatePtr state = scorer.Start();
    double f = 0.0;
    LatticePath prefix;
    for (int32_t j : path) {
      LMStatePtr next;
      f += lat.link(j).am + p.lm_weight * scorer.Score(state, j, &next) - p.log_ip;
      state = next;
      prefix.push_back(j);
      EXPECT_NEAR(f, PathScore(lat, scorer, prefix, p), 1e-12 * std::max(1.0, std::abs(f)));
    }
  }
}

TEST(AStarSearch, SinglePath) {
  Lattice lat = Lattice::Build({0, 1, 2, 3}, {{0, 1, "a", -1, -1}, {1, 2, "b", -1, -1}, {2, 3, "c", -1, -1}});
  FirstPassLinkScorer fp(lat);
  RescoreParams p = Params(12, 10, 0.5, 0);
  AStarResult r = AStarSearch(lat, fp, p, SuffixBound(lat, p));
  EXPECT_EQ(r.path, (LatticePath{0, 1, 2}));
  EXPECT_EQ(r.words, testing::Words({"a", "b", "c"}));
  EXPECT_EQ(r.diagnostics.pops, 4u);
  EXPECT_DOUBLE_EQ(r.f, PathScore(lat, fp, r.path, p));
}

TEST(AStarSearch, ExactHeuristicFindsArgmax) {
  TestRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Lattice lat = SmallLattice(rng);
    FirstPassLinkScorer fp(lat);
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), 0, 0);
    AStarResult r = AStarSearch(lat, fp, p, SuffixBound(lat, p));
    Best best = ExhaustiveBest(lat, fp, p);
    EXPECT_NEAR(r.f, best.f, 1e-9 * std::max(1.0, std::abs(best.f)));
    EXPECT_EQ(r.path, best.path);
    EXPECT_EQ(r.diagnostics.evictions, 0u);
    EXPECT_EQ(r.diagnostics.violations, 0u);
    EXPECT_LE(MaxRise(r.diagnostics.popped_g), 1e-9 * std::max(1.0, std::abs(r.f)));
    // Complete hypotheses are ranked by their exact score.
    EXPECT_DOUBLE_EQ(r.diagnostics.popped_g.back(), r.f);
    // Exact heuristic: only the best path is ever popped.
    EXPECT_EQ(r.diagnostics.pops, r.path.size() + 1);
  }
}

TEST(AStarSearch, AdmissibleContextScorerFindsArgmax) {
  TestRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Lattice lat = SmallLattice(rng);
    ContextScorer scorer(lat, trial, 0.0, 2.0);
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), rng.Uniform(0, 1), rng.Uniform(0, 1));
    ASSERT_EQ(CheckAdmissibility(lat, scorer, p).violations, 0u);
    AStarResult r = AStarSearch(lat, scorer, p, SuffixBound(lat, p));
    Best best = ExhaustiveBest(lat, scorer, p);
    EXPECT_NEAR(r.f, best.f, 1e-9 * std::max(1.0, std::abs(best.f)));
    EXPECT_EQ(r.diagnostics.violations, 0u);
    EXPECT_LE(MaxRise(r.diagnostics.popped_g), 1e-9 * std::max(1.0, std::abs(r.f)));
  }
}

TEST(AStarSearch, BoundHoldsForEveryPrefix) {
  TestRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Lattice lat = SmallLattice(rng);
    ContextScorer scorer(lat, 100 + trial, 0.0, 1.0);
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), 0.0, rng.Uniform(0, 1));
    SuffixBound h(lat, p);
    for (const auto& path : EnumeratePaths(lat, 1 << 20)) {
      double f = PathScore(lat, scorer, path, p);
      for (size_t k = 0; k <= path.size(); ++k) {
        LatticePath prefix(path.begin(), path.begin() + static_cast<long>(k));
        int32_t node = k == 0 ? lat.initial() : lat.link(prefix.back()).end;
        double g = PathScore(lat, scorer, prefix, p) + h(node);
        EXPECT_GE(g, f - 1e-9 * std::max(1.0, std::abs(f)));
        if (k == path.size()) EXPECT_DOUBLE_EQ(g, f);
      }
    }
  }
}

TEST(AStarSearch, CountsEveryViolation) {
  TestRng rng(7);
  size_t total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Lattice lat = SmallLattice(rng);
    ContextScorer inner(lat, 200 + trial, 0.0, 2.0);
    RecordingScorer scorer(inner);
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), -1.0, 0.0);
    AStarResult r = AStarSearch(lat, scorer, p, SuffixBound(lat, p));
    ASSERT_EQ(scorer.calls.size(), r.diagnostics.expansions);
    size_t expected = 0;
    for (const auto& [link, exact] : scorer.calls) {
      if (exact > lat.link(link).lm + p.log_comp) ++expected;
    }
    EXPECT_EQ(r.diagnostics.violations, expected);
    total += expected;
    scorer.calls.clear();
    Best best = ExhaustiveBest(lat, scorer, p);
    EXPECT_LE(r.f, best.f + 1e-9);
  }
  EXPECT_GT(total, 0u);
}

TEST(AStarSearch, LooserBoundNeverReducesWork) {
  TestRng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Lattice lat = SmallLattice(rng);
    ContextScorer scorer(lat, 300 + trial, 0.0, 1.0);
    RescoreParams p = Params(rng.Uniform(1, 12), rng.Uniform(0, 5), 0, 0);
    size_t prev = 0;
    for (double c : {0.0, 0.25, 0.5, 1.0, 2.0, 5.0}) {
      p.log_comp = c;
      AStarResult r = AStarSearch(lat, scorer, p, SuffixBound(lat, p));
      EXPECT_GE(r.diagnostics.pops, prev) << "log_comp " << c;
      prev = r.diagnostics.pops;
    }
  }
}

TEST(AStarSearch, EvictionIsCountedAndStillCompletes) {
  TestRng rng(9);
  size_t evictions = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Lattice lat = SmallLattice(rng);
    FirstPassLinkScorer fp(lat);
    RescoreParams p = Params(1, 0, 1.0, 0);
    p.stack_capacity = 1;
    AStarResult r = AStarSearch(lat, fp, p, SuffixBound(lat, p));
    EXPECT_LE(r.diagnostics.max_stack, 1u);
    EXPECT_EQ(lat.link(r.path.back()).end, lat.final());
    evictions += r.diagnostics.evictions;
  }
  EXPECT_GT(evictions, 0u);
}

TEST(CheckAdmissibility, IdentityAndHugeCompensation) {
  TestRng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    Lattice lat = SmallLattice(rng);
    FirstPassLinkScorer fp(lat);
    AdmissibilityReport r = CheckAdmissibility(lat, fp, Params(1, 0, 0, 0));
    EXPECT_EQ(r.violations, 0u);
    // One instance per distinct prefix.
    std::set<LatticePath> prefixes;
    for (const auto& path : EnumeratePaths(lat, 1 << 20)) {
      for (size_t k = 1; k <= path.size(); ++k) prefixes.insert(LatticePath(path.begin(), path.begin() + k));
    }
    EXPECT_EQ(r.instances, prefixes.size());
    ContextScorer worse(lat, trial, -3.0, 0.0);
    EXPECT_EQ(CheckAdmissibility(lat, worse, Params(1, 0, 1e9, 0)).violations, 0u);
    EXPECT_GT(CheckAdmissibility(lat, worse, Params(1, 0, 0, 0)).violations, 0u);
  }
}

TEST(CheckAdmissibility, ToySlmRateFallsWithCompensation) {
  testing::ToyModels toy = testing::LoadToy();
  SlmModel slm = InitFromTreebank(toy.vocab, toy.parses);
  SlmLanguageModel lm(slm, SearchOptions{});
  Lattice lat = ReadLatticeFile(testing::SourceDir() + "/data/toy/lattices/utt0003.lat");
  LmLinkScorer scorer(lat, lm, LinkWordIds(lat, toy.vocab, OovPolicy::kOpen));
  double prev = 1.0;
  size_t first = 0;
  for (double c : {-2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0}) {
    AdmissibilityOptions opts;
    opts.samples = 100;
    opts.seed = 11;
    AdmissibilityReport r = CheckAdmissibility(lat, scorer, Params(1, 0, c, 0), opts);
    if (c == -2.0) first = r.violations;
    EXPECT_LE(r.rate(), prev) << "log_comp " << c;
    prev = r.rate();
    for (const auto& v : r.examples) EXPECT_LT(v.estimate, v.exact);
  }
  EXPECT_GT(first, 0u);
  EXPECT_LT(prev, 1.0);
}

NgramModel ToyTrigram(const testing::ToyModels& toy) { return NgramModel::Train(toy.vocab, toy.train); }

TEST(RescoreNBest, SingleHypothesisUnchanged) {
  testing::ToyModels toy = testing::LoadToy();
  NgramModel lm = ToyTrigram(toy);
  auto ranked = RescoreNBest({{testing::Words({"the", "dog"}), -3.0}}, lm, toy.vocab, OovPolicy::kOpen,
                             RescoreParams{});
  ASSERT_EQ(ranked.size(), 1u);
  EXPECT_EQ(ranked[0].index, 0u);
  EXPECT_THROW(RescoreNBest({}, lm, toy.vocab, OovPolicy::kOpen, RescoreParams{}), DataError);
}

TEST(RescoreNBest, OrderFollowsLmDifference) {
  Vocabulary v;
  for (const auto& w : kWords) v.AddWord(w, 1);
  TestRng rng(12);
  std::vector<Sentence> corpus;
  for (int i = 0; i < 100; ++i) corpus.push_back(testing::RandomSentence(rng, v, 1, 6));
  NgramModel lm = NgramModel::Train(v, corpus);
  for (const char* other : {"b", "c", "d", "e"}) {
    std::vector<NBestHypothesis> list = {{testing::Words({"a", "a", "c"}), -5.0},
                                         {{"a", other, "c"}, -5.0}};
    Sentence s0 = v.MapSentence(list[0].words, OovPolicy::kClosed);
    Sentence s1 = v.MapSentence(list[1].words, OovPolicy::kClosed);
    double d = 0.0;
    for (double x : SentenceLogProbs(lm, s0)) d += x;
    for (double x : SentenceLogProbs(lm, s1)) d -= x;
    auto ranked = RescoreNBest(list, lm, v, OovPolicy::kClosed, Params(3, 1, 0, 0));
    EXPECT_EQ(ranked[0].index, d >= 0 ? 0u : 1u) << other;
    EXPECT_NEAR(ranked[0].f - ranked[1].f, 3 * std::abs(d), 1e-9);
  }
}

TEST(RescoreNBest, MatchesAStarOnPrefixTree) {
  testing::ToyModels toy = testing::LoadToy();
  NgramModel lm = ToyTrigram(toy);
  auto lists = ParseNBestFile(ReadFile(testing::SourceDir() + "/data/toy/test.nbest"));
  ASSERT_GE(lists.size(), 20u);
  RescoreParams p = Params(4, 1, 0, 0);
  for (size_t u = 0; u < 20; ++u) {
    std::vector<NBestHypothesis> remaining = lists[u].hypotheses;
    ASSERT_LE(remaining.size(), 10u);
    auto ranked = RescoreNBest(remaining, lm, toy.vocab, OovPolicy::kOpen, p);
    // Peel off the A* winner each round; the sequence must follow the ranking.
    std::vector<size_t> alive(remaining.size());
    for (size_t i = 0; i < alive.size(); ++i) alive[i] = i;
    for (const auto& expect : ranked) {
      std::vector<NBestHypothesis> sub;
      for (size_t i : alive) sub.push_back(remaining[i]);
      Lattice tree = NBestPrefixTree(sub);
      LmLinkScorer scorer(tree, lm, LinkWordIds(tree, toy.vocab, OovPolicy::kOpen));
      ASSERT_EQ(CheckAdmissibility(tree, scorer, p).violations, 0u);
      AStarResult r = AStarSearch(tree, scorer, p, SuffixBound(tree, p));
      EXPECT_EQ(r.words, remaining[expect.index].words) << "utterance " << u;
      EXPECT_NEAR(r.f, expect.f, 1e-9 * std::abs(expect.f));
      alive.erase(std::find(alive.begin(), alive.end(), expect.index));
    }
  }
}

TEST(NBestPrefixTree, SharesPrefixes) {
  Lattice tree = NBestPrefixTree({{testing::Words({"a", "b"}), -1}, {testing::Words({"a", "c"}), -2},
                                  {testing::Words({"a", "b"}), -3}});
  // a, b, c word links plus one </s> per hypothesis.
  EXPECT_EQ(tree.num_links(), 6);
  auto paths = EnumeratePaths(tree, 10);
  EXPECT_EQ(paths.size(), 3u);
}

}  // namespace
}  // namespace slmtk
