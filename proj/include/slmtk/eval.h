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

#include "slmtk/lm.h"

namespace slmtk {

// log(lambda * e^a + (1 - lambda) * e^b), exact at the endpoints.
double MixLogProb(double lambda, double a, double b);

// lambda * P_first + (1 - lambda) * P_second. At lambda = 1 (0) the second
// (first) model is never consulted.
class InterpolatedLM : public LanguageModel {
 public:
  InterpolatedLM(const LanguageModel& first, const LanguageModel& second, double lambda);
  LMStatePtr Start() const override;
  double Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const override;
  double lambda() const { return lambda_; }

 private:
  const LanguageModel& first_;
  const LanguageModel& second_;
  double lambda_;
};

// Per-sentence token log-probabilities, computed on `workers` threads.
std::vector<std::vector<double>> CorpusLogProbs(const LanguageModel& lm,
                                                const std::vector<Sentence>& corpus,
                                                int workers = 1);
PerplexityReport Perplexity(const LanguageModel& lm, const std::vector<Sentence>& corpus,
                            int workers = 1);
PerplexityReport PerplexityFromLogProbs(const std::vector<std::vector<double>>& logprobs);

// Perplexity of the mixture given aligned token log-probabilities.
double MixturePerplexity(double lambda, const std::vector<double>& first,
                         const std::vector<double>& second);

struct LambdaSearch {
  double lambda = 0.0;
  double perplexity = 0.0;
  std::vector<std::pair<double, double>> grid;  // (lambda, perplexity)
};

// Grid search over [0, 1] followed by golden-section refinement around the
// grid optimum; ties go to the smaller lambda.
LambdaSearch TuneLambda(const std::vector<double>& first, const std::vector<double>& second,
                        double step = 0.05);

struct WerCounts {
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  int64_t reference_length = 0;

  int64_t errors() const { return substitutions + insertions + deletions; }
  double wer() const {
    return reference_length ? static_cast<double>(errors()) / reference_length : 0.0;
  }
  WerCounts& operator+=(const WerCounts& o);
};

// Unit-cost alignment. Among minimum-error alignments the one with the most
// substitutions is counted.
WerCounts Wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

struct SignTestResult {
  int64_t wins = 0;    // system strictly better
  int64_t losses = 0;  // baseline strictly better
  int64_t ties = 0;
  double p_value = 1.0;
  std::string note;
};

// Two-sided exact sign test over paired per-utterance error counts.
SignTestResult SignTest(const std::vector<int64_t>& baseline, const std::vector<int64_t>& system);

}  // namespace slmtk
