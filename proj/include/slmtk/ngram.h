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

#include <string>
#include <string_view>
#include <vector>

#include "slmtk/di_model.h"
#include "slmtk/lm.h"
#include "slmtk/vocabulary.h"

namespace slmtk {

struct NgramTrainOptions {
  SplitOptions split;
  EstimateOptions estimate;
  std::vector<double> bucket_edges = DIConfig::DefaultBucketEdges();
};

// Deleted-interpolation trigram: (w-1, w-2) -> (w-1) -> () -> uniform over
// every word except <s>. Histories are padded with <s>.
class NgramModel : public LanguageModel {
 public:
  NgramModel(Vocabulary vocab, DIModel model);

  static NgramModel Train(const Vocabulary& vocab, const std::vector<Sentence>& corpus,
                          const NgramTrainOptions& options = {}, EMReport* report = nullptr);

  static DIConfig MakeConfig(const Vocabulary& vocab, std::vector<double> bucket_edges);
  static Context MakeContext(WordId prev1, WordId prev2) { return Context{prev1, prev2}; }
  static int32_t EventOf(WordId w) { return w - 1; }

  // P(w | prev1 prev2) where prev1 immediately precedes w.
  double TrigramProb(WordId w, WordId prev1, WordId prev2) const;
  // P(w | prev1) with an unseen second word, i.e. the bigram/unigram part
  // of the mixture.
  double BigramProb(WordId w, WordId prev1) const;
  double UnigramProb(WordId w) const;

  LMStatePtr Start() const override;
  double Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const override;

  const Vocabulary& vocab() const { return vocab_; }
  const DIModel& model() const { return model_; }

  std::string Serialize() const;
  static NgramModel Parse(std::string_view text);

 private:
  Vocabulary vocab_;
  DIModel model_;
};

// Every (history, word) event of a sentence, including the final </s>.
std::vector<Observation> TrigramObservations(const Sentence& sentence);

}  // namespace slmtk
