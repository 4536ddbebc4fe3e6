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

#include "slmtk/ngram.h"

#include <cmath>

namespace slmtk {

namespace {

// Never a word id, so contexts containing it are never seen.
constexpr WordId kNoWord = -1;

struct TrigramState : LMState {
  WordId prev1 = Vocabulary::kBos;
  WordId prev2 = Vocabulary::kBos;
  bool ended = false;
};

}  // namespace

std::vector<double> SentenceLogProbs(const LanguageModel& lm, const Sentence& sentence) {
  std::vector<double> out;
  out.reserve(sentence.size() + 1);
  LMStatePtr state = lm.Start();
  for (WordId w : sentence.tokens) {
    LMStatePtr next;
    out.push_back(lm.Score(state, w, &next));
    state = std::move(next);
  }
  out.push_back(lm.Score(state, Vocabulary::kEos, nullptr));
  return out;
}

NgramModel::NgramModel(Vocabulary vocab, DIModel model)
    : vocab_(std::move(vocab)), model_(std::move(model)) {
  if (model_.event_space_size() != vocab_.num_words() - 1) {
    throw DataError("trigram event space does not match the vocabulary");
  }
}

DIConfig NgramModel::MakeConfig(const Vocabulary& vocab, std::vector<double> bucket_edges) {
  DIConfig config;
  config.order_lengths = {2, 1, 0};
  config.event_space_size = vocab.num_words() - 1;
  config.bucket_edges = std::move(bucket_edges);
  return config;
}

std::vector<Observation> TrigramObservations(const Sentence& sentence) {
  std::vector<Observation> out;
  WordId prev1 = Vocabulary::kBos;
  WordId prev2 = Vocabulary::kBos;
  for (WordId w : sentence.tokens) {
    out.push_back({NgramModel::MakeContext(prev1, prev2), NgramModel::EventOf(w), 1.0});
    prev2 = prev1;
    prev1 = w;
  }
  out.push_back({NgramModel::MakeContext(prev1, prev2), NgramModel::EventOf(Vocabulary::kEos), 1.0});
  return out;
}

NgramModel NgramModel::Train(const Vocabulary& vocab, const std::vector<Sentence>& corpus,
                             const NgramTrainOptions& options, EMReport* report) {
  if (corpus.size() < 2) throw DataError("trigram training needs at least two sentences");
  std::vector<bool> heldout = HeldOutMask(corpus.size(), options.split);
  HeldOutSplit split;
  for (size_t i = 0; i < corpus.size(); ++i) {
    ValidateSentence(corpus[i]);
    for (WordId w : corpus[i].tokens) {
      if (w >= vocab.num_words()) throw DataError("word id outside the vocabulary");
    }
    auto obs = TrigramObservations(corpus[i]);
    auto& side = heldout[i] ? split.heldout : split.development;
    side.insert(side.end(), obs.begin(), obs.end());
  }
  DIModel model = TrainDeletedInterpolation(MakeConfig(vocab, options.bucket_edges), split,
                                            options.estimate, report);
  return NgramModel(vocab, std::move(model));
}

double NgramModel::TrigramProb(WordId w, WordId prev1, WordId prev2) const {
  return model_.Prob(MakeContext(prev1, prev2), EventOf(w));
}

double NgramModel::BigramProb(WordId w, WordId prev1) const {
  return model_.Prob(MakeContext(prev1, kNoWord), EventOf(w));
}

double NgramModel::UnigramProb(WordId w) const {
  return model_.Prob(MakeContext(kNoWord, kNoWord), EventOf(w));
}

LMStatePtr NgramModel::Start() const { return std::make_shared<TrigramState>(); }

double NgramModel::Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const {
  const auto* s = dynamic_cast<const TrigramState*>(state.get());
  if (!s) throw std::logic_error("foreign LM state passed to the trigram");
  if (s->ended) throw DataError("word scored after </s>");
  if (word <= Vocabulary::kBos || word >= vocab_.num_words()) {
    throw DataError("word id outside the trigram vocabulary");
  }
  double lp = std::log(TrigramProb(word, s->prev1, s->prev2));
  if (next) {
    auto n = std::make_shared<TrigramState>();
    n->prev1 = word;
    n->prev2 = s->prev1;
    n->ended = word == Vocabulary::kEos;
    *next = std::move(n);
  }
  return lp;
}

std::string NgramModel::Serialize() const {
  std::string out = "slmtk-ngram 1\n";
  out += "vocab-checksum " + HexDigest(vocab_.Checksum()) + "\n";
  out += vocab_.Serialize();
  out += model_.Serialize("trigram");
  return out;
}

NgramModel NgramModel::Parse(std::string_view text) {
  size_t pos = 0;
  auto next_line = [&]() {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) throw DataError("truncated ngram model");
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != "slmtk-ngram 1") throw DataError("not an slmtk ngram model");
  auto ck = SplitWhitespace(next_line());
  if (ck.size() != 2 || ck[0] != "vocab-checksum") throw DataError("ngram model: missing checksum");
  size_t vocab_begin = pos;
  size_t dim = text.find("\ndimodel ", pos);
  if (dim == std::string_view::npos) throw DataError("ngram model: missing DI section");
  ++dim;
  Vocabulary vocab = Vocabulary::Parse(text.substr(vocab_begin, dim - vocab_begin));
  if (HexDigest(vocab.Checksum()) != ck[1]) throw DataError("ngram model: vocabulary checksum mismatch");
  pos = dim;
  std::string role;
  DIModel model = DIModel::Parse(text, pos, &role);
  if (role != "trigram") throw DataError("ngram model: unexpected DI role " + role);
  return NgramModel(std::move(vocab), std::move(model));
}

}  // namespace slmtk
