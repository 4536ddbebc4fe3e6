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
#include <string>
#include <vector>

#include "slmtk/lattice.h"
#include "slmtk/lm.h"

namespace slmtk {

struct RescoreParams {
  double lm_weight = 12.0;
  double log_ip = 10.0;    // subtracted once per link
  double log_comp = 0.5;   // added to every first-pass LM score in the lookahead
  double log_final = 0.0;  // added once for a non-empty suffix
  int stack_capacity = 10000;

  void Validate() const;
};

// Upper bounds on the best suffix score from every node, computed from the
// first-pass LM scores on the links.
class SuffixBound {
 public:
  SuffixBound(const Lattice& lattice, const RescoreParams& params);

  // h for a prefix ending at `node`, including the final-word term.
  double operator()(int32_t node) const;
  // The backward DP value without the final-word term.
  double raw(int32_t node) const { return h_.at(node); }

 private:
  std::vector<double> h_;
  int32_t final_ = -1;
  double final_term_ = 0.0;
};

// Second-pass LM score of a link given the path that leads to it.
class LinkScorer {
 public:
  virtual ~LinkScorer() = default;
  virtual LMStatePtr Start() const = 0;
  virtual double Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const = 0;
};

// Scores link words with a language model; <s> links score 0.
class LmLinkScorer : public LinkScorer {
 public:
  LmLinkScorer(const Lattice& lattice, const LanguageModel& lm, std::vector<WordId> word_ids);
  LMStatePtr Start() const override { return lm_.Start(); }
  double Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const override;

 private:
  const Lattice& lattice_;
  const LanguageModel& lm_;
  std::vector<WordId> word_ids_;
};

// Replays the stored first-pass LM score of every link.
class FirstPassLinkScorer : public LinkScorer {
 public:
  explicit FirstPassLinkScorer(const Lattice& lattice) : lattice_(lattice) {}
  LMStatePtr Start() const override { return nullptr; }
  double Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const override;

 private:
  const Lattice& lattice_;
};

// Exact score of a complete or partial path, one term per link.
double PathScore(const Lattice& lattice, const LinkScorer& scorer, const LatticePath& path,
                 const RescoreParams& params);

struct AStarDiagnostics {
  size_t pops = 0;
  size_t expansions = 0;
  size_t max_stack = 0;
  size_t evictions = 0;
  // Expansions whose exact LM score exceeded the lookahead estimate.
  size_t violations = 0;
  std::vector<double> popped_g;
};

struct AStarResult {
  LatticePath path;
  double f = 0.0;
  std::vector<std::string> words;
  AStarDiagnostics diagnostics;
};

// Best-first search ranked by g = f + h; stops at the first complete
// hypothesis popped. Throws SearchFailure if the stack runs dry.
AStarResult AStarSearch(const Lattice& lattice, const LinkScorer& scorer, const RescoreParams& params,
                        const SuffixBound& bounds);

struct AdmissibilityOptions {
  // 0 walks every path prefix; otherwise the number of random complete
  // paths to sample.
  size_t samples = 0;
  uint64_t seed = 0;
  size_t max_reported = 100;
};

struct AdmissibilityViolation {
  LatticePath prefix;  // ends with the offending link
  double exact = 0.0;
  double estimate = 0.0;
};

struct AdmissibilityReport {
  size_t instances = 0;
  size_t violations = 0;
  std::vector<AdmissibilityViolation> examples;
  double rate() const { return instances ? static_cast<double>(violations) / instances : 0.0; }
};

AdmissibilityReport CheckAdmissibility(const Lattice& lattice, const LinkScorer& scorer,
                                       const RescoreParams& params,
                                       const AdmissibilityOptions& options = {});

struct NBestHypothesis {
  std::vector<std::string> words;
  double am = 0.0;
};

struct RankedHypothesis {
  size_t index = 0;  // position in the input list
  double f = 0.0;
};

// Scores every hypothesis (words then </s>) and sorts by descending score;
// ties keep input order.
std::vector<RankedHypothesis> RescoreNBest(const std::vector<NBestHypothesis>& list,
                                           const LanguageModel& lm, const Vocabulary& vocab,
                                           OovPolicy policy, const RescoreParams& params);

// Prefix tree of an N-best list: word links carry zero scores and each
// hypothesis ends in a </s> link to the shared final node carrying its
// acoustic score.
Lattice NBestPrefixTree(const std::vector<NBestHypothesis>& list);

}  // namespace slmtk
