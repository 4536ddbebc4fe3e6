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

#include <memory>
#include <vector>

#include "slmtk/common.h"
#include "slmtk/vocabulary.h"

namespace slmtk {

struct LMState {
  virtual ~LMState() = default;
};
using LMStatePtr = std::shared_ptr<const LMState>;

// Left-to-right word probability source. Implementations are immutable and
// safe for concurrent Score() calls.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  // State before the first word of a sentence (history "<s>").
  virtual LMStatePtr Start() const = 0;
  // Natural-log probability of `word` given the history in `state`. `word`
  // may be </s>, which ends the sentence. `next` (if non-null) receives the
  // extended state.
  virtual double Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const = 0;
};

struct PerplexityReport {
  double tokens = 0.0;  // words plus one </s> per sentence
  double logprob = 0.0;
  double perplexity = 0.0;
};

// Per-token log-probabilities of the sentence body followed by </s>.
std::vector<double> SentenceLogProbs(const LanguageModel& lm, const Sentence& sentence);

}  // namespace slmtk
