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

#include "slmtk/eval.h"

#include <algorithm>
#include <cmath>

#include "slmtk/parallel.h"

namespace slmtk {

double MixLogProb(double lambda, double a, double b) {
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;
  return LogAdd(std::log(lambda) + a, std::log1p(-lambda) + b);
}

namespace {

struct PairState : LMState {
  LMStatePtr first;
  LMStatePtr second;
};

}  // namespace

InterpolatedLM::InterpolatedLM(const LanguageModel& first, const LanguageModel& second,
                               double lambda)
    : first_(first), second_(second), lambda_(lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

LMStatePtr InterpolatedLM::Start() const {
  auto s = std::make_shared<PairState>();
  if (lambda_ > 0.0) s->first = first_.Start();
  if (lambda_ < 1.0) s->second = second_.Start();
  return s;
}

double InterpolatedLM::Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const {
  const auto* s = dynamic_cast<const PairState*>(state.get());
  if (!s) throw std::logic_error("foreign LM state passed to the interpolated model");
  std::shared_ptr<PairState> n;
  if (next) n = std::make_shared<PairState>();
  double a = 0.0, b = 0.0;
  if (lambda_ > 0.0) a = first_.Score(s->first, word, n ? &n->first : nullptr);
  if (lambda_ < 1.0) b = second_.Score(s->second, word, n ? &n->second : nullptr);
  if (next) *next = std::move(n);
  return MixLogProb(lambda_, a, b);
}

std::vector<std::vector<double>> CorpusLogProbs(const LanguageModel& lm,
                                                const std::vector<Sentence>& corpus, int workers) {
  std::vector<std::vector<double>> out(corpus.size());
  ParallelFor(corpus.size(), workers, [&](size_t i) {
    try {
      out[i] = SentenceLogProbs(lm, corpus[i]);
    } catch (const SearchFailure& e) {
      throw SearchFailure("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
  });
  return out;
}

PerplexityReport PerplexityFromLogProbs(const std::vector<std::vector<double>>& logprobs) {
  PerplexityReport r;
  for (const auto& s : logprobs) {
    for (double lp : s) r.logprob += lp;
    r.tokens += static_cast<double>(s.size());
  }
  r.perplexity = r.tokens > 0 ? std::exp(-r.logprob / r.tokens) : 0.0;
  return r;
}

PerplexityReport Perplexity(const LanguageModel& lm, const std::vector<Sentence>& corpus,
                            int workers) {
  return PerplexityFromLogProbs(CorpusLogProbs(lm, corpus, workers));
}

double MixturePerplexity(double lambda, const std::vector<double>& first,
                         const std::vector<double>& second) {
  if (first.size() != second.size()) throw DataError("token log-probability lists differ in length");
  if (first.empty()) throw DataError("held-out data is empty");
  double sum = 0.0;
  for (size_t i = 0; i < first.size(); ++i) sum += MixLogProb(lambda, first[i], second[i]);
  return std::exp(-sum / static_cast<double>(first.size()));
}

LambdaSearch TuneLambda(const std::vector<double>& first, const std::vector<double>& second,
                        double step) {
  if (!(step > 0.0 && step <= 0.5)) throw ConfigError("lambda grid step must lie in (0, 0.5]");
  if (first.empty()) throw DataError("held-out data is empty");
  LambdaSearch out;
  int points = static_cast<int>(std::ceil(1.0 / step - 1e-9));
  for (int i = 0; i <= points; ++i) {
    double lambda = std::min(1.0, i * step);
    double ppl = MixturePerplexity(lambda, first, second);
    out.grid.emplace_back(lambda, ppl);
    if (i == 0 || ppl < out.perplexity) {
      out.lambda = lambda;
      out.perplexity = ppl;
    }
  }
  double lo = std::max(0.0, out.lambda - step);
  double hi = std::min(1.0, out.lambda + step);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  double f1 = MixturePerplexity(x1, first, second), f2 = MixturePerplexity(x2, first, second);
  for (int it = 0; it < 60 && hi - lo > 1e-10; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = MixturePerplexity(x1, first, second);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = MixturePerplexity(x2, first, second);
    }
  }
  double refined = f1 <= f2 ? x1 : x2;
  double refined_ppl = std::min(f1, f2);
  // Rounding noise must not move a flat optimum.
  if (refined_ppl < out.perplexity * (1.0 - 1e-12)) {
    out.lambda = refined;
    out.perplexity = refined_ppl;
  }
  return out;
}

WerCounts& WerCounts::operator+=(const WerCounts& o) {
  substitutions += o.substitutions;
  insertions += o.insertions;
  deletions += o.deletions;
  reference_length += o.reference_length;
  return *this;
}

WerCounts Wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) throw DataError("empty reference");
  struct Cell {
    int64_t errors = 0;
    int64_t subs = 0;
    int64_t ins = 0;
    int64_t del = 0;
    bool better(const Cell& o) const {
      return errors < o.errors || (errors == o.errors && subs > o.subs);
    }
  };
  const size_t n = hyp.size(), m = ref.size();
  std::vector<std::vector<Cell>> d(n + 1, std::vector<Cell>(m + 1));
  for (size_t i = 1; i <= n; ++i) d[i][0] = {static_cast<int64_t>(i), 0, static_cast<int64_t>(i), 0};
  for (size_t j = 1; j <= m; ++j) d[0][j] = {static_cast<int64_t>(j), 0, 0, static_cast<int64_t>(j)};
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      Cell diag = d[i - 1][j - 1];
      if (hyp[i - 1] != ref[j - 1]) {
        ++diag.errors;
        ++diag.subs;
      }
      Cell ins = d[i - 1][j];
      ++ins.errors;
      ++ins.ins;
      Cell del = d[i][j - 1];
      ++del.errors;
      ++del.del;
      Cell best = diag;
      if (ins.better(best)) best = ins;
      if (del.better(best)) best = del;
      d[i][j] = best;
    }
  }
  const Cell& c = d[n][m];
  WerCounts w;
  w.substitutions = c.subs;
  w.insertions = c.ins;
  w.deletions = c.del;
  w.reference_length = static_cast<int64_t>(m);
  return w;
}

SignTestResult SignTest(const std::vector<int64_t>& baseline, const std::vector<int64_t>& system) {
  if (baseline.size() != system.size()) throw DataError("sign test needs paired error lists");
  SignTestResult r;
  for (size_t i = 0; i < baseline.size(); ++i) {
    if (system[i] < baseline[i]) {
      ++r.wins;
    } else if (system[i] > baseline[i]) {
      ++r.losses;
    } else {
      ++r.ties;
    }
  }
  int64_t n = r.wins + r.losses;
  if (n == 0) {
    r.p_value = 1.0;
    r.note = "no informative pairs";
    return r;
  }
  int64_t k = std::min(r.wins, r.losses);
  // log C(n, i) - n log 2, summed in the log domain.
  std::vector<double> terms;
  for (int64_t i = 0; i <= k; ++i) {
    terms.push_back(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) -
                    n * std::log(2.0));
  }
  r.p_value = std::min(1.0, 2.0 * std::exp(LogSumExp(terms)));
  return r;
}

}  // namespace slmtk
