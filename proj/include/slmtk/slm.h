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

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slmtk/di_model.h"
#include "slmtk/lm.h"
#include "slmtk/treebank.h"
#include "slmtk/vocabulary.h"

namespace slmtk {

// Root annotation of one subtree of the partial parse: (word, POS tag) for a
// single leaf, (headword, non-terminal label) otherwise.
struct ExposedHead {
  WordId word = 0;
  int32_t symbol = 0;
  bool terminal = true;

  static ExposedHead SentenceBegin() { return {Vocabulary::kBos, Vocabulary::kBosTag, true}; }
  bool operator==(const ExposedHead&) const = default;
};

// Hash-friendly encodings of a head for use in DI contexts.
int64_t HeadKey(const ExposedHead& head);
int64_t HeadCategory(const ExposedHead& head);

class ParserAction {
 public:
  enum class Kind : uint8_t { kNull = 0, kAdjoinLeft = 1, kAdjoinRight = 2 };

  static ParserAction Null() { return ParserAction(Kind::kNull, 0); }
  static ParserAction AdjoinLeft(LabelId label) { return ParserAction(Kind::kAdjoinLeft, label); }
  static ParserAction AdjoinRight(LabelId label) { return ParserAction(Kind::kAdjoinRight, label); }

  Kind kind() const { return kind_; }
  LabelId label() const { return label_; }
  bool is_null() const { return kind_ == Kind::kNull; }

  // Dense non-negative code, also the trace element for this action.
  int32_t Code() const;
  static ParserAction FromCode(int32_t code);
  // Event index in the parser distribution; reserved labels have none.
  int32_t Event() const;
  static ParserAction FromEvent(int32_t event);

  std::string ToString(const Vocabulary& vocab) const;
  bool operator==(const ParserAction&) const = default;

 private:
  ParserAction(Kind kind, LabelId label) : kind_(kind), label_(label) {}
  Kind kind_;
  LabelId label_;
};

// W_k T_k: the exposed heads (oldest first, h_0 last) of one partial parse
// after k predicted words, with log P(W_k, T_k) and the derivation trace.
struct WordParsePrefix {
  std::vector<ExposedHead> heads{ExposedHead::SentenceBegin()};
  double logprob = 0.0;
  int position = 0;
  // </s> has been predicted; the parser must now complete the tree.
  bool final = false;
  // Tag steps are stored as -1 - tag, parser steps as ParserAction::Code().
  std::vector<int32_t> trace;

  const ExposedHead& h0() const { return heads.back(); }
  // h_{-1}; the sentence-begin head doubles as padding.
  const ExposedHead& h1() const { return heads.size() >= 2 ? heads[heads.size() - 2] : heads[0]; }
  bool complete() const { return final && heads.size() == 1; }
};

// The parser moves available in a prefix. Adjoins never touch the
// sentence-begin head before </s>; after </s> the sentence-end leaf is
// attached to its left neighbour (forced, label <end>), the remaining heads
// are joined by free adjoins, and <s> is joined last (forced, label <top>).
std::vector<ParserAction> LegalActions(const WordParsePrefix& prefix, int32_t num_labels,
                                       bool right_branching_only = false);

// Applies one parser move to the heads of `prefix` (log-probability is not
// touched). Throws DataError if the move is not legal for the prefix.
WordParsePrefix ApplyAction(const WordParsePrefix& prefix, ParserAction action);

// A complete derivation: for every predicted word (the body, then </s>)
// its tag and the parser moves that follow it.
struct Derivation {
  std::vector<TagId> tags;
  std::vector<std::vector<ParserAction>> actions;

  std::vector<int32_t> Trace() const;
  static Derivation FromTrace(std::span<const int32_t> trace, size_t sentence_length);
  bool operator==(const Derivation&) const = default;
};

struct SlmTrainOptions {
  SplitOptions split;
  EstimateOptions estimate;
  std::vector<double> bucket_edges = DIConfig::DefaultBucketEdges();
};

// SLM parameters: WORD-PREDICTOR P(w | h0, h-1), TAGGER
// P(t | w, h0.tag, h-1.tag) and PARSER P(action | h0, h-1).
class SlmModel {
 public:
  SlmModel(Vocabulary vocab, DIModel predictor, DIModel tagger, DIModel parser);

  static DIConfig PredictorConfig(const Vocabulary& vocab, std::vector<double> edges);
  static DIConfig TaggerConfig(const Vocabulary& vocab, std::vector<double> edges);
  static DIConfig ParserConfig(const Vocabulary& vocab, std::vector<double> edges);

  static Context PredictorContext(const WordParsePrefix& prefix);
  static Context TaggerContext(const WordParsePrefix& prefix, WordId word);
  static Context ParserContext(const WordParsePrefix& prefix);

  const Vocabulary& vocab() const { return vocab_; }
  const DIModel& predictor() const { return predictor_; }
  const DIModel& tagger() const { return tagger_; }
  const DIModel& parser() const { return parser_; }
  int32_t num_labels() const { return vocab_.num_labels(); }

  double PredictorLogProb(const WordParsePrefix& prefix, WordId word) const;
  // Log-probabilities of every regular tag (index = tag - kNumReservedTags).
  void TaggerLogProbs(const WordParsePrefix& prefix, WordId word, std::vector<double>& out) const;
  double TaggerLogProb(const WordParsePrefix& prefix, WordId word, TagId tag) const;
  // Log-probability of `action` renormalized over the legal moves; 0 for a
  // forced move.
  double ParserLogProb(const WordParsePrefix& prefix, ParserAction action,
                       bool right_branching_only = false) const;

  std::string Serialize() const;
  static SlmModel Parse(std::string_view text);

 private:
  Vocabulary vocab_;
  DIModel predictor_;
  DIModel tagger_;
  DIModel parser_;
};

// log P(W, T) of a complete derivation; kLogZero if any factor is zero.
// Throws DataError if the derivation is illegal for the sentence.
double JointLogProb(const SlmModel& model, const Sentence& sentence, const Derivation& derivation,
                    bool right_branching_only = false);

// Unique left-to-right derivation licensed by a treebank parse. Subtrees are
// reduced as soon as they are complete, except those covering the last word,
// which wait for </s>.
Derivation ExtractDerivation(const AnnotatedParse& parse);

// Predictor, tagger and parser events of a derivation, weighted by `weight`;
// forced parser moves contribute nothing.
struct ComponentObservations {
  std::vector<Observation> predictor;
  std::vector<Observation> tagger;
  std::vector<Observation> parser;
  void Append(const ComponentObservations& other);
};
ComponentObservations DerivationObservations(int32_t num_labels, const Sentence& sentence,
                                             const Derivation& derivation, double weight);

SlmModel InitFromTreebank(const Vocabulary& vocab, const std::vector<AnnotatedParse>& parses,
                          const SlmTrainOptions& options = {});

struct SearchOptions {
  static constexpr double kNoBeam = std::numeric_limits<double>::infinity();
  static constexpr int kNoCapacity = std::numeric_limits<int>::max();

  double beam = 6.9;  // natural-log width below the best entry
  int capacity = 128;
  bool right_branching_only = false;
  bool merge_duplicates = false;

  static SearchOptions Exhaustive() { return {kNoBeam, kNoCapacity, false, false}; }
  void Validate() const;
};

// S_k: the surviving word-parse k-prefixes, best first.
struct StackSet {
  int position = 0;
  std::vector<WordParsePrefix> entries;

  static StackSet Initial();
  // log sum_T P(W_k T_k)
  double LogMass() const;
  // P(W_k T_k) / sum_T P(W_k T_k) for every entry.
  std::vector<double> Weights() const;
};

struct AdvanceResult {
  StackSet next;
  double word_logprob = 0.0;  // log P(w_{k+1} | W_k) from the incoming stack
  size_t expansions = 0;
};

// One synchronous step: predict `word`, tag it, run the parser to
// quiescence (or to a complete tree after </s>), pruning every level.
// Throws SearchFailure if pruning leaves nothing.
AdvanceResult AdvanceStack(const SlmModel& model, const StackSet& stack, WordId word,
                           const SearchOptions& options);

// log sum_T P(w | W_k T_k) * weight(T) over the stack.
double PrefixWordLogProb(const SlmModel& model, const StackSet& stack, WordId word);

struct SearchResult {
  std::vector<StackSet> stacks;       // S_0 .. S_{n+1}; the last holds complete parses
  std::vector<double> word_logprobs;  // n + 1 entries, the last for </s>
  size_t expansions = 0;
};

SearchResult MultiStackSearch(const SlmModel& model, const Sentence& sentence,
                              const SearchOptions& options);

struct ScoredDerivation {
  Derivation derivation;
  double logprob = 0.0;
  double posterior = 0.0;
};

// Best `n` complete parses with posteriors normalized over the returned list.
std::vector<ScoredDerivation> NBestParses(const SlmModel& model, const Sentence& sentence,
                                          int n, const SearchOptions& options);

PerplexityReport SlmPerplexity(const SlmModel& model, const std::vector<Sentence>& corpus,
                               const SearchOptions& options, int workers = 1);

struct ReestimateReport {
  size_t sentences = 0;
  size_t skipped = 0;
};

// One N-best EM iteration: fractional counts from the posteriors of each
// sentence's N best parses, then deleted-interpolation re-estimation.
SlmModel EmReestimate(const SlmModel& model, const std::vector<Sentence>& corpus, int n,
                      const SearchOptions& search, const SlmTrainOptions& train,
                      ReestimateReport* report = nullptr, int workers = 1);

// Left-to-right adaptor for lattice rescoring and interpolation.
class SlmLanguageModel : public LanguageModel {
 public:
  SlmLanguageModel(const SlmModel& model, SearchOptions options);
  LMStatePtr Start() const override;
  double Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const override;
  const SlmModel& model() const { return model_; }

 private:
  const SlmModel& model_;
  SearchOptions options_;
};

}  // namespace slmtk
