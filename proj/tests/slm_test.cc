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
#include <map>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "slmtk/ngram.h"
#include "slmtk/slm.h"
#include "enumerator.h"
#include "test_util.h"

namespace slmtk {
namespace {

using testing::TestRng;

using testing::ByTrace;
using testing::Enumerator;
using testing::Leaf;
using testing::LogMass;
using testing::Node;
Vocabulary ToyVocab() {
  Vocabulary v;
  for (const char* w : {"the", "dog", "barks"}) v.AddWord(w, 1);
  for (const char* t : {"DT", "NN", "VB"}) v.AddTag(t, 1);
  for (const char* l : {"NP", "S"}) v.AddLabel(l, 1);
  return v;
}

SlmModel UniformModel(const Vocabulary& v) {
  return SlmModel(v, DIModel(SlmModel::PredictorConfig(v, DIConfig::DefaultBucketEdges())),
                  DIModel(SlmModel::TaggerConfig(v, DIConfig::DefaultBucketEdges())),
                  DIModel(SlmModel::ParserConfig(v, DIConfig::DefaultBucketEdges())));
}

TEST(ParserAction, CodesRoundTrip) {
  for (int32_t code = 0; code < 20; ++code) EXPECT_EQ(ParserAction::FromCode(code).Code(), code);
  EXPECT_EQ(ParserAction::Null().Event(), 0);
  for (LabelId l = 2; l < 6; ++l) {
    for (ParserAction a : {ParserAction::AdjoinLeft(l), ParserAction::AdjoinRight(l)}) {
      EXPECT_EQ(ParserAction::FromEvent(a.Event()), a);
      EXPECT_GE(a.Event(), 1);
    }
  }
}

TEST(ApplyAction, AdjoinRightKeepsRightHead) {
  Vocabulary v = ToyVocab();
  WordParsePrefix p;
  p.heads = {ExposedHead::SentenceBegin(), Leaf(3, 2), Leaf(4, 3)};
  WordParsePrefix q = ApplyAction(p, ParserAction::AdjoinRight(2));
  ASSERT_EQ(q.heads.size(), 2u);
  EXPECT_EQ(q.heads[1], Node(4, 2));
  EXPECT_EQ(v.Word(q.heads[1].word), "dog");
  EXPECT_EQ(v.Label(q.heads[1].symbol), "NP");
}

TEST(ApplyAction, AdjoinLeftKeepsLeftHead) {
  WordParsePrefix p;
  p.heads = {ExposedHead::SentenceBegin(), Leaf(3, 2), Leaf(4, 3)};
  WordParsePrefix q = ApplyAction(p, ParserAction::AdjoinLeft(2));
  ASSERT_EQ(q.heads.size(), 2u);
  EXPECT_EQ(q.heads[1], Node(3, 2));
}

TEST(ApplyAction, SentenceBeginIsOffLimitsBeforeEnd) {
  WordParsePrefix p;
  p.heads = {ExposedHead::SentenceBegin(), Leaf(3, 2)};
  EXPECT_THROW(ApplyAction(p, ParserAction::AdjoinLeft(2)), DataError);
  EXPECT_EQ(LegalActions(p, 4), std::vector<ParserAction>{ParserAction::Null()});
}

TEST(ApplyAction, FinalPhaseIsForcedAtBothEnds) {
  WordParsePrefix p;
  p.heads = {ExposedHead::SentenceBegin(), Leaf(3, 2), Leaf(Vocabulary::kEos, Vocabulary::kEosTag)};
  p.final = true;
  EXPECT_EQ(LegalActions(p, 4),
            std::vector<ParserAction>{ParserAction::AdjoinLeft(Vocabulary::kEndLabel)});
  EXPECT_THROW(ApplyAction(p, ParserAction::Null()), DataError);
  EXPECT_THROW(ApplyAction(p, ParserAction::AdjoinLeft(2)), DataError);
  WordParsePrefix q = ApplyAction(p, ParserAction::AdjoinLeft(Vocabulary::kEndLabel));
  EXPECT_EQ(q.heads.back(), Node(3, Vocabulary::kEndLabel));
  EXPECT_EQ(LegalActions(q, 4),
            std::vector<ParserAction>{ParserAction::AdjoinRight(Vocabulary::kTopLabel)});
  WordParsePrefix r = ApplyAction(q, ParserAction::AdjoinRight(Vocabulary::kTopLabel));
  EXPECT_TRUE(r.complete());
  EXPECT_TRUE(LegalActions(r, 4).empty());
}

TEST(Derivation, TraceRoundTrip) {
  Derivation d;
  d.tags = {2, 3, Vocabulary::kEosTag};
  d.actions = {{ParserAction::Null()},
               {ParserAction::AdjoinRight(2), ParserAction::Null()},
               {ParserAction::AdjoinLeft(Vocabulary::kEndLabel), ParserAction::AdjoinRight(Vocabulary::kTopLabel)}};
  EXPECT_EQ(Derivation::FromTrace(d.Trace(), 2), d);
}

TEST(ExtractDerivation, RightBranchingWaitsForEnd) {
  Sentence s{{3, 4, 5}};
  Derivation d = ExtractDerivation(RightBranchAnnotate(s, 2, 2));
  ASSERT_EQ(d.actions.size(), 4u);
  for (size_t k = 0; k < 3; ++k) EXPECT_EQ(d.actions[k], std::vector<ParserAction>{ParserAction::Null()});
  std::vector<ParserAction> final = {ParserAction::AdjoinLeft(Vocabulary::kEndLabel),
                                     ParserAction::AdjoinRight(2), ParserAction::AdjoinRight(2),
                                     ParserAction::AdjoinRight(Vocabulary::kTopLabel)};
  EXPECT_EQ(d.actions[3], final);
}

TEST(ExtractDerivation, LeftBranchingAdjoinsAfterSecondWord) {
  Vocabulary v = ToyVocab();
  Vocabulary grown = v;
  RawTree t = ParseTreeLine("(S~the (NP~the (DT the) (NN dog)) (VB barks))");
  AnnotatedParse p = InternTree(t, grown, OovPolicy::kClosed, false);
  Derivation d = ExtractDerivation(p);
  EXPECT_EQ(d.tags, (std::vector<TagId>{2, 3, 4, Vocabulary::kEosTag}));
  EXPECT_EQ(d.actions[0], std::vector<ParserAction>{ParserAction::Null()});
  EXPECT_EQ(d.actions[1], (std::vector<ParserAction>{ParserAction::AdjoinLeft(2), ParserAction::Null()}));
  EXPECT_EQ(d.actions[2], std::vector<ParserAction>{ParserAction::Null()});
  EXPECT_EQ(d.actions[3], (std::vector<ParserAction>{ParserAction::AdjoinLeft(Vocabulary::kEndLabel),
                                                     ParserAction::AdjoinLeft(3),
                                                     ParserAction::AdjoinRight(Vocabulary::kTopLabel)}));
  EXPECT_TRUE(std::isfinite(JointLogProb(UniformModel(v), p.Leaves(), d)));
}

TEST(ExtractDerivation, EveryToyTreeReplays) {
  auto trees = ReadTreebankFile(testing::SourceDir() + "/data/toy/train.trees");
  std::vector<std::vector<std::string>> corpus(trees.size());
  for (size_t i = 0; i < trees.size(); ++i) CollectWords(trees[i], corpus[i]);
  Vocabulary v = BuildVocabulary(corpus, 1000);
  std::vector<AnnotatedParse> parses;
  for (const auto& t : trees) parses.push_back(InternTree(t, v, OovPolicy::kClosed, true));
  SlmModel m = UniformModel(v);
  for (const auto& p : parses) {
    Derivation d = ExtractDerivation(p);
    EXPECT_EQ(Derivation::FromTrace(d.Trace(), p.Leaves().size()), d);
    EXPECT_TRUE(std::isfinite(JointLogProb(m, p.Leaves(), d)));
  }
}

TEST(JointLogProb, UniformTablesByHand) {
  // Three regular words (five predictable events), two tags, one label.
  Vocabulary v;
  for (const char* w : {"a", "b", "c"}) v.AddWord(w, 1);
  v.AddTag("X", 1);
  v.AddTag("Y", 1);
  v.AddLabel("L", 1);
  SlmModel m = UniformModel(v);
  Sentence s{{3, 4}};
  Derivation d;
  d.tags = {2, 3, Vocabulary::kEosTag};
  d.actions = {{ParserAction::Null()},
               {ParserAction::Null()},
               {ParserAction::AdjoinLeft(Vocabulary::kEndLabel), ParserAction::AdjoinRight(2),
                ParserAction::AdjoinRight(Vocabulary::kTopLabel)}};
  // words (1/5)^3, tags (1/2)^2, null after "b" 1/3, final free adjoin 1/2;
  // the null after "a" and both reserved-label moves are forced.
  double expected = std::log(1.0 / 125 / 4 / 3 / 2);
  EXPECT_NEAR(JointLogProb(m, s, d), expected, 1e-12);
}

TEST(JointLogProb, ComponentLookupsByHand) {
  SlmModel m = testing::RandomSlm(21, 4, 2, 2);
  Sentence s{{3, 5}};
  Derivation d;
  d.tags = {2, 3, Vocabulary::kEosTag};
  d.actions = {{ParserAction::Null()},
               {ParserAction::AdjoinLeft(3), ParserAction::Null()},
               {ParserAction::AdjoinLeft(Vocabulary::kEndLabel), ParserAction::AdjoinRight(Vocabulary::kTopLabel)}};
  ExposedHead bos = ExposedHead::SentenceBegin();
  ExposedHead a = Leaf(3, 2), b = Leaf(5, 3), ab = Node(3, 3);
  auto pred = [&](ExposedHead h0, ExposedHead h1, WordId w) {
    return m.predictor().Prob(Context{HeadKey(h0), HeadKey(h1)}, w - 1);
  };
  auto tag = [&](WordId w, ExposedHead h0, ExposedHead h1, TagId t) {
    return m.tagger().Prob(Context{w, HeadCategory(h0), HeadCategory(h1)}, t - Vocabulary::kNumReservedTags);
  };
  auto parse = [&](ExposedHead h0, ExposedHead h1, ParserAction act) {
    return m.parser().Prob(Context{HeadKey(h0), HeadKey(h1)}, act.Event());
  };
  double p = pred(bos, bos, 3) * tag(3, bos, bos, 2);
  p *= pred(a, bos, 5) * tag(5, a, bos, 3);
  // Every parser event is legal once three heads are exposed; the null move
  // that follows, with two heads left, is forced.
  p *= parse(b, a, ParserAction::AdjoinLeft(3));
  p *= pred(ab, bos, Vocabulary::kEos);
  EXPECT_NEAR(JointLogProb(m, s, d), std::log(p), 1e-12);
}

TEST(JointLogProb, ZeroFactorGivesLogZero) {
  Vocabulary v = ToyVocab();
  SlmModel base = UniformModel(v);
  DIModel pred(SlmModel::PredictorConfig(v, DIConfig::DefaultBucketEdges()));
  Context start = SlmModel::PredictorContext(WordParsePrefix{});
  pred.Accumulate(start, 3 - 1);
  pred.SetWeights(pred.BucketFor(start), {1.0, 0.0, 0.0, 0.0});
  SlmModel m(v, pred, base.tagger(), base.parser());
  Sentence s{{4}};
  Derivation d;
  d.tags = {2, Vocabulary::kEosTag};
  d.actions = {{ParserAction::Null()},
               {ParserAction::AdjoinLeft(Vocabulary::kEndLabel), ParserAction::AdjoinRight(Vocabulary::kTopLabel)}};
  EXPECT_EQ(JointLogProb(m, s, d), kLogZero);
}

TEST(JointLogProb, RejectsIllegalDerivations) {
  SlmModel m = UniformModel(ToyVocab());
  Sentence s{{3, 4}};
  Derivation d;
  d.tags = {2, 3, Vocabulary::kEosTag};
  d.actions = {{ParserAction::AdjoinLeft(2), ParserAction::Null()},
               {ParserAction::Null()},
               {ParserAction::AdjoinLeft(Vocabulary::kEndLabel), ParserAction::AdjoinRight(Vocabulary::kTopLabel)}};
  EXPECT_THROW(JointLogProb(m, s, d), DataError);
  d.actions[0] = {ParserAction::Null()};
  EXPECT_THROW(JointLogProb(m, s, d), DataError);  // three heads left after </s>
  d.tags[2] = 2;
  EXPECT_THROW(JointLogProb(m, s, d), DataError);
}

TEST(MultiStackSearch, MatchesExhaustiveEnumeration) {
  SlmModel m = testing::RandomSlm(1, 6, 2, 2);
  Enumerator en(m);
  TestRng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 4);
    auto levels = en.Run(s);
    SearchResult r = MultiStackSearch(m, s, SearchOptions::Exhaustive());
    ASSERT_EQ(r.stacks.size(), levels.size());
    for (size_t k = 0; k < levels.size(); ++k) {
      const StackSet& st = r.stacks[k];
      ASSERT_EQ(st.entries.size(), levels[k].size()) << "k=" << k;
      double want = LogMass(levels[k]);
      EXPECT_NEAR(st.LogMass(), want, 1e-9 * std::abs(want) + 1e-12) << "k=" << k;
      auto expected = ByTrace(levels[k]);
      for (const auto& e : st.entries) {
        EXPECT_EQ(e.position, static_cast<int>(k));
        auto it = expected.find(e.trace);
        ASSERT_NE(it, expected.end());
        EXPECT_NEAR(e.logprob, it->second, 1e-9);
      }
      auto w = st.Weights();
      double sum = 0.0;
      for (double x : w) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
        sum += x;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    // The chained word probabilities telescope to the total mass.
    double chained = 0.0;
    for (double lp : r.word_logprobs) chained += lp;
    EXPECT_NEAR(chained, r.stacks.back().LogMass(), 1e-9);
    for (const auto& e : r.stacks.back().entries) {
      Derivation d = Derivation::FromTrace(e.trace, s.size());
      EXPECT_NEAR(JointLogProb(m, s, d), e.logprob, 1e-9);
    }
  }
}

TEST(MultiStackSearch, EnumeratorAgreesOnLegalMoves) {
  SlmModel m = testing::RandomSlm(3, 5, 2, 3);
  Enumerator en(m);
  TestRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 3);
    auto levels = en.Run(s);
    for (size_t k = 0; k + 1 < levels.size(); ++k) {
      for (const auto& p : levels[k]) {
        EXPECT_EQ(LegalActions(p, m.num_labels()), en.Legal(p));
        double sum = 0.0;
        for (ParserAction a : en.Legal(p)) sum += std::exp(m.ParserLogProb(p, a));
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(MultiStackSearch, CapacityOneKeepsOneDerivation) {
  SlmModel m = testing::RandomSlm(5, 6, 2, 2);
  TestRng rng(6);
  SearchOptions o;
  o.capacity = 1;
  for (int trial = 0; trial < 20; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 6);
    SearchResult r = MultiStackSearch(m, s, o);
    for (size_t k = 0; k + 1 < r.stacks.size(); ++k) {
      ASSERT_EQ(r.stacks[k].entries.size(), 1u);
      WordId w = k < s.size() ? s.tokens[k] : Vocabulary::kEos;
      EXPECT_NEAR(r.word_logprobs[k], m.PredictorLogProb(r.stacks[k].entries[0], w), 1e-12);
    }
  }
}

TEST(MultiStackSearch, PruningNeverAddsMass) {
  SlmModel m = testing::RandomSlm(7, 6, 2, 2, 80, 6);
  TestRng rng(8);
  std::vector<SearchOptions> chain;
  for (double beam : {SearchOptions::kNoBeam, 8.0, 4.0, 1.0}) {
    for (int cap : {SearchOptions::kNoCapacity, 30, 5, 1}) chain.push_back({beam, cap, false, false});
  }
  for (int trial = 0; trial < 30; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 2, 4);
    SearchResult full = MultiStackSearch(m, s, SearchOptions::Exhaustive());
    for (const auto& o : chain) {
      SearchResult r = MultiStackSearch(m, s, o);
      for (size_t k = 0; k < r.stacks.size(); ++k) {
        EXPECT_LE(r.stacks[k].LogMass(), full.stacks[k].LogMass() + 1e-12)
            << "beam=" << o.beam << " cap=" << o.capacity << " k=" << k;
        EXPECT_LE(static_cast<int>(r.stacks[k].entries.size()), o.capacity);
      }
    }
  }
}

TEST(MultiStackSearch, TighteningCapacityNeverAddsMass) {
  SlmModel m = testing::RandomSlm(9, 6, 2, 2, 80, 6);
  TestRng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 2, 4);
    std::vector<double> prev;
    for (int cap : {SearchOptions::kNoCapacity, 50, 20, 8, 3, 1}) {
      SearchResult r = MultiStackSearch(m, s, {SearchOptions::kNoBeam, cap, false, false});
      std::vector<double> cur;
      for (const auto& stack : r.stacks) cur.push_back(stack.LogMass());
      if (!prev.empty()) {
        ASSERT_EQ(cur.size(), prev.size());
        for (size_t k = 0; k < cur.size(); ++k) {
          EXPECT_LE(cur[k], prev[k] + 1e-12) << "cap=" << cap << " k=" << k;
        }
      }
      prev = cur;
    }
  }
}

TEST(MultiStackSearch, MergingKeepsMass) {
  SlmModel m = testing::RandomSlm(11, 6, 2, 2);
  TestRng rng(12);
  SearchOptions merged = SearchOptions::Exhaustive();
  merged.merge_duplicates = true;
  for (int trial = 0; trial < 20; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 4);
    SearchResult a = MultiStackSearch(m, s, SearchOptions::Exhaustive());
    SearchResult b = MultiStackSearch(m, s, merged);
    for (size_t k = 0; k < a.stacks.size(); ++k) {
      EXPECT_NEAR(a.stacks[k].LogMass(), b.stacks[k].LogMass(), 1e-9);
      EXPECT_LE(b.stacks[k].entries.size(), a.stacks[k].entries.size());
      std::set<std::vector<ExposedHead>, bool (*)(const std::vector<ExposedHead>&, const std::vector<ExposedHead>&)>
          heads([](const std::vector<ExposedHead>& x, const std::vector<ExposedHead>& y) {
            return std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end(),
                                                [](const ExposedHead& p, const ExposedHead& q) {
                                                  return std::tie(p.word, p.symbol, p.terminal) <
                                                         std::tie(q.word, q.symbol, q.terminal);
                                                });
          });
      for (const auto& e : b.stacks[k].entries) EXPECT_TRUE(heads.insert(e.heads).second);
    }
    for (size_t k = 0; k < a.word_logprobs.size(); ++k) {
      EXPECT_NEAR(a.word_logprobs[k], b.word_logprobs[k], 1e-9);
    }
  }
}

TEST(MultiStackSearch, DeterministicOrder) {
  SlmModel m = testing::RandomSlm(13, 6, 2, 2);
  Sentence s{{3, 4, 5, 6, 7}};
  SearchResult a = MultiStackSearch(m, s, SearchOptions{});
  SearchResult b = MultiStackSearch(m, s, SearchOptions{});
  for (size_t k = 0; k < a.stacks.size(); ++k) {
    ASSERT_EQ(a.stacks[k].entries.size(), b.stacks[k].entries.size());
    for (size_t i = 0; i < a.stacks[k].entries.size(); ++i) {
      EXPECT_EQ(a.stacks[k].entries[i].trace, b.stacks[k].entries[i].trace);
      if (i > 0) {
        const auto& x = a.stacks[k].entries[i - 1];
        const auto& y = a.stacks[k].entries[i];
        EXPECT_TRUE(x.logprob > y.logprob || (x.logprob == y.logprob && x.trace < y.trace));
      }
    }
  }
}

TEST(SearchOptions, Validation) {
  EXPECT_THROW((SearchOptions{0.0, 10, false, false}.Validate()), ConfigError);
  EXPECT_THROW((SearchOptions{1.0, 0, false, false}.Validate()), ConfigError);
  SearchOptions{}.Validate();
}

TEST(MultiStackSearch, ZeroProbabilityWordIsASearchFailure) {
  Vocabulary v = ToyVocab();
  SlmModel base = UniformModel(v);
  DIModel pred(SlmModel::PredictorConfig(v, DIConfig::DefaultBucketEdges()));
  Context start = SlmModel::PredictorContext(WordParsePrefix{});
  pred.Accumulate(start, 3 - 1);
  pred.SetWeights(pred.BucketFor(start), {1.0, 0.0, 0.0, 0.0});
  SlmModel m(v, pred, base.tagger(), base.parser());
  EXPECT_THROW(MultiStackSearch(m, Sentence{{4}}, SearchOptions{}), SearchFailure);
}

TEST(PrefixWordProb, InitialStackUsesSentenceBegin) {
  SlmModel m = testing::RandomSlm(14, 6, 2, 2);
  ExposedHead bos = ExposedHead::SentenceBegin();
  for (WordId w = 1; w < m.vocab().num_words(); ++w) {
    double want = m.predictor().LogProb(Context{HeadKey(bos), HeadKey(bos)}, w - 1);
    EXPECT_DOUBLE_EQ(PrefixWordLogProb(m, StackSet::Initial(), w), want);
  }
}

TEST(PrefixWordProb, NormalizedOverVocabulary) {
  SlmModel m = testing::RandomSlm(15, 8, 3, 2, 100, 8);
  TestRng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 8);
    SearchResult r = MultiStackSearch(m, s, SearchOptions{});
    const StackSet& st = r.stacks[rng.Index(s.size() + 1)];
    double sum = 0.0;
    for (WordId w = 1; w < m.vocab().num_words(); ++w) sum += std::exp(PrefixWordLogProb(m, st, w));
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(SlmPerplexity, UniformPredictorGivesVocabularySize) {
  Vocabulary v;
  for (int i = 0; i < 8; ++i) v.AddWord("w" + std::to_string(i), 1);
  v.AddTag("T", 1);
  v.AddLabel("L", 1);
  ASSERT_EQ(v.num_words() - 1, 10);
  SlmModel m = UniformModel(v);
  TestRng rng(17);
  std::vector<Sentence> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(testing::RandomSentence(rng, v, 1, 6));
  PerplexityReport r = SlmPerplexity(m, corpus, SearchOptions{});
  EXPECT_NEAR(r.perplexity, 10.0, 1e-9);
  EXPECT_NEAR(SlmPerplexity(m, corpus, SearchOptions{}, 3).logprob, r.logprob, 0.0);
}

TEST(SlmPerplexity, EquivalentToTrigramWhenRightBranching) {
  Vocabulary v = testing::MakeVocab(8, 1, 1);
  TestRng rng(18);
  std::vector<Sentence> corpus;
  std::vector<AnnotatedParse> parses;
  for (int i = 0; i < 300; ++i) {
    // Markov text so the trigram weights carry information.
    Sentence s;
    WordId prev = 3;
    size_t n = 1 + rng.Index(8);
    for (size_t j = 0; j < n; ++j) {
      prev = rng.Bernoulli(0.6) ? 3 + (prev - 3 + 1) % 8 : 3 + static_cast<WordId>(rng.Index(8));
      s.tokens.push_back(prev);
    }
    corpus.push_back(s);
    parses.push_back(RightBranchAnnotate(s, 2, 2));
  }
  SlmModel slm = InitFromTreebank(v, parses);
  NgramModel tri = NgramModel::Train(v, corpus);
  SearchOptions rb;
  rb.right_branching_only = true;
  for (const auto& s : corpus) {
    SearchResult r = MultiStackSearch(slm, s, rb);
    std::vector<double> want = SentenceLogProbs(tri, s);
    ASSERT_EQ(r.word_logprobs.size(), want.size());
    for (size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(r.word_logprobs[k], want[k], 1e-9);
  }
}

TEST(NBestParses, PosteriorsMatchEnumeration) {
  SlmModel m = testing::RandomSlm(19, 6, 2, 2);
  Enumerator en(m);
  TestRng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 3);
    auto complete = en.Run(s).back();
    auto all = NBestParses(m, s, static_cast<int>(complete.size()) + 5, SearchOptions::Exhaustive());
    ASSERT_EQ(all.size(), complete.size());
    double z = LogMass(complete);
    auto exact = ByTrace(complete);
    double sum = 0.0;
    for (size_t i = 0; i < all.size(); ++i) {
      double want = std::exp(exact.at(all[i].derivation.Trace()) - z);
      EXPECT_NEAR(all[i].posterior, want, 1e-9);
      if (i > 0) EXPECT_LE(all[i].posterior, all[i - 1].posterior);
      sum += all[i].posterior;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    auto one = NBestParses(m, s, 1, SearchOptions::Exhaustive());
    ASSERT_EQ(one.size(), 1u);
    EXPECT_DOUBLE_EQ(one[0].posterior, 1.0);
    EXPECT_EQ(one[0].derivation, all[0].derivation);
    EXPECT_THROW(NBestParses(m, s, 0, SearchOptions{}), ConfigError);
  }
}

TEST(EmReestimate, SingleParseCorpusIsAFixedPoint) {
  Vocabulary v = testing::MakeVocab(6, 1, 1);
  TestRng rng(22);
  std::vector<Sentence> corpus;
  std::vector<AnnotatedParse> parses;
  for (int i = 0; i < 200; ++i) {
    Sentence s = testing::RandomSentence(rng, v, 1, 1);
    corpus.push_back(s);
    parses.push_back(RightBranchAnnotate(s, 2, 2));
  }
  SlmModel init = InitFromTreebank(v, parses);
  for (const auto& s : corpus) {
    ASSERT_EQ(NBestParses(init, s, 10, SearchOptions::Exhaustive()).size(), 1u);
  }
  SlmModel next = EmReestimate(init, corpus, 10, SearchOptions{}, SlmTrainOptions{});
  EXPECT_TRUE(next.predictor().SameCounts(init.predictor(), 1e-12));
  EXPECT_TRUE(next.predictor().SameWeights(init.predictor(), 1e-12));
  EXPECT_TRUE(next.tagger().SameCounts(init.tagger(), 1e-12));
  EXPECT_TRUE(next.tagger().SameWeights(init.tagger(), 1e-12));
  EXPECT_TRUE(next.parser().SameCounts(init.parser(), 1e-12));
  EXPECT_TRUE(next.parser().SameWeights(init.parser(), 1e-12));
}

TEST(EmReestimate, SkipsUnparsableSentences) {
  Vocabulary v = ToyVocab();
  SlmModel base = UniformModel(v);
  DIModel pred(SlmModel::PredictorConfig(v, DIConfig::DefaultBucketEdges()));
  Context start = SlmModel::PredictorContext(WordParsePrefix{});
  pred.Accumulate(start, 3 - 1);
  pred.SetWeights(pred.BucketFor(start), {1.0, 0.0, 0.0, 0.0});
  SlmModel m(v, pred, base.tagger(), base.parser());
  ReestimateReport r;
  EmReestimate(m, {Sentence{{3, 4}}, Sentence{{4}}}, 3, SearchOptions{}, SlmTrainOptions{}, &r);
  EXPECT_EQ(r.sentences, 1u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_THROW(EmReestimate(m, {Sentence{{4}}}, 3, SearchOptions{}, SlmTrainOptions{}), SearchFailure);
}

// Heads exposed before predicting word k+1 of a treebank parse: the maximal
// subtrees inside the first k words, except that before </s> the subtrees
// ending at the last word are still open, leaving that word as a leaf.
std::vector<ExposedHead> HeadsBefore(const AnnotatedParse& p, size_t k, size_t n) {
  struct Span { int32_t node; size_t lo, hi; };
  std::vector<Span> spans;
  size_t next_leaf = 0;
  std::function<std::pair<size_t, size_t>(int32_t)> walk = [&](int32_t id) -> std::pair<size_t, size_t> {
    const ParseNode& nd = p.nodes[id];
    std::pair<size_t, size_t> span;
    if (nd.is_leaf()) {
      span = {next_leaf, next_leaf};
      ++next_leaf;
    } else {
      auto l = walk(nd.left);
      auto r = walk(nd.right);
      span = {l.first, r.second};
    }
    spans.push_back({id, span.first, span.second});
    return span;
  };
  walk(p.root);
  size_t limit = k == n ? n - 1 : k;
  std::vector<std::pair<size_t, ExposedHead>> chosen;
  for (const auto& s : spans) {
    bool inside = s.hi < limit || (k == n && s.lo == n - 1 && s.hi == n - 1);
    if (!inside) continue;
    bool maximal = true;
    for (const auto& t : spans) {
      if (t.node == s.node || !(t.lo <= s.lo && s.hi <= t.hi)) continue;
      if (t.hi < limit || (k == n && t.lo == n - 1 && t.hi == n - 1)) maximal = false;
    }
    if (!maximal) continue;
    const ParseNode& nd = p.nodes[s.node];
    chosen.push_back({s.lo, nd.is_leaf() ? Leaf(nd.word, nd.symbol) : Node(nd.word, nd.symbol)});
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ExposedHead> heads{ExposedHead::SentenceBegin()};
  for (const auto& c : chosen) heads.push_back(c.second);
  return heads;
}

TEST(InitFromTreebank, PredictorCountsMatchTreeWalk) {
  auto trees = ReadTreebankFile(testing::SourceDir() + "/data/toy/train.trees");
  trees.resize(50);
  std::vector<std::vector<std::string>> corpus(trees.size());
  for (size_t i = 0; i < trees.size(); ++i) CollectWords(trees[i], corpus[i]);
  Vocabulary v = BuildVocabulary(corpus, 1000);
  std::vector<AnnotatedParse> parses;
  for (const auto& t : trees) parses.push_back(InternTree(t, v, OovPolicy::kClosed, true));
  SlmModel m = InitFromTreebank(v, parses);

  std::map<std::tuple<int64_t, int64_t, int32_t>, double> tally;
  size_t events = 0;
  for (const auto& p : parses) {
    Sentence s = p.Leaves();
    for (size_t k = 0; k <= s.size(); ++k) {
      auto heads = HeadsBefore(p, k, s.size());
      const ExposedHead& h0 = heads.back();
      const ExposedHead& h1 = heads.size() >= 2 ? heads[heads.size() - 2] : heads[0];
      WordId w = k < s.size() ? s.tokens[k] : Vocabulary::kEos;
      tally[{HeadKey(h0), HeadKey(h1), w - 1}] += 1.0;
      ++events;
    }
  }
  EXPECT_DOUBLE_EQ(m.predictor().ContextCount(2, Context{}), static_cast<double>(events));
  std::set<std::pair<int64_t, int64_t>> contexts;
  for (const auto& [key, n] : tally) contexts.insert({std::get<0>(key), std::get<1>(key)});
  EXPECT_EQ(m.predictor().NumContexts(0), contexts.size());
  for (const auto& [key, n] : tally) {
    auto [a, b, e] = key;
    EXPECT_DOUBLE_EQ(m.predictor().EventCount(0, Context{a, b}, e), n);
  }
}

TEST(SlmModel, SerializationRoundTrip) {
  SlmModel m = testing::RandomSlm(23, 6, 2, 2);
  std::string text = m.Serialize();
  SlmModel back = SlmModel::Parse(text);
  EXPECT_EQ(back.Serialize(), text);
  EXPECT_EQ(testing::RandomSlm(23, 6, 2, 2).Serialize(), text);
  Sentence s{{3, 4, 5}};
  EXPECT_EQ(MultiStackSearch(back, s, SearchOptions{}).word_logprobs,
            MultiStackSearch(m, s, SearchOptions{}).word_logprobs);
  std::string broken = text;
  broken.replace(broken.find("vocab-checksum") + 15, 4, "ffff");
  EXPECT_THROW(SlmModel::Parse(broken), DataError);
  EXPECT_THROW(SlmModel::Parse("slmtk-slm 7\n"), DataError);
}

TEST(SlmLanguageModel, MatchesSearch) {
  SlmModel m = testing::RandomSlm(24, 6, 2, 2);
  SlmLanguageModel lm(m, SearchOptions{});
  TestRng rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    Sentence s = testing::RandomSentence(rng, m.vocab(), 1, 6);
    EXPECT_EQ(SentenceLogProbs(lm, s), MultiStackSearch(m, s, SearchOptions{}).word_logprobs);
    // Scoring without a successor state must not change the value.
    LMStatePtr st = lm.Start();
    for (WordId w : s.tokens) {
      double with = lm.Score(st, w, nullptr);
      LMStatePtr next;
      EXPECT_DOUBLE_EQ(lm.Score(st, w, &next), with);
      st = next;
    }
  }
}

}  // namespace
}  // namespace slmtk
