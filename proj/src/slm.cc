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

#include "slmtk/slm.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <unordered_map>

#include "slmtk/parallel.h"

namespace slmtk {

namespace {

constexpr int64_t kNonTerminalBit = int64_t{1} << 23;

int32_t NumParserEvents(int32_t num_labels) {
  return 1 + 2 * (num_labels - Vocabulary::kNumReservedLabels);
}

WordParsePrefix Shift(const WordParsePrefix& prefix, WordId word, TagId tag) {
  WordParsePrefix next = prefix;
  next.heads.push_back({word, tag, true});
  next.position = prefix.position + 1;
  next.final = word == Vocabulary::kEos;
  next.trace.push_back(-1 - tag);
  return next;
}

bool Better(const WordParsePrefix& a, const WordParsePrefix& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.trace < b.trace;
}

std::string HeadsKey(const WordParsePrefix& p) {
  std::string key;
  key.reserve(p.heads.size() * 9 + 1);
  key.push_back(p.final ? 'f' : 'n');
  for (const auto& h : p.heads) {
    key.append(reinterpret_cast<const char*>(&h.word), sizeof(h.word));
    key.append(reinterpret_cast<const char*>(&h.symbol), sizeof(h.symbol));
    key.push_back(h.terminal ? 't' : 'n');
  }
  return key;
}

void Prune(std::vector<WordParsePrefix>& level, const SearchOptions& options) {
  std::sort(level.begin(), level.end(), Better);
  if (options.merge_duplicates && level.size() > 1) {
    std::unordered_map<std::string, size_t> seen;
    std::vector<WordParsePrefix> merged;
    merged.reserve(level.size());
    for (auto& p : level) {
      auto [it, inserted] = seen.emplace(HeadsKey(p), merged.size());
      if (inserted) {
        merged.push_back(std::move(p));
      } else {
        merged[it->second].logprob = LogAdd(merged[it->second].logprob, p.logprob);
      }
    }
    level = std::move(merged);
    std::sort(level.begin(), level.end(), Better);
  }
  if (level.empty()) return;
  double floor = level.front().logprob - options.beam;
  size_t keep = 0;
  while (keep < level.size() && keep < static_cast<size_t>(options.capacity) &&
         level[keep].logprob >= floor) {
    ++keep;
  }
  level.resize(keep);
}

// A child of parents[parent] reached by appending `code` to its trace.
struct Candidate {
  double logprob;
  int32_t parent;
  int32_t code;
};

// Same order as Better() on the children, without building them.
bool CandidateBetter(const Candidate& a, const Candidate& b,
                     const std::vector<WordParsePrefix>& parents) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  const auto& ta = parents[a.parent].trace;
  const auto& tb = parents[b.parent].trace;
  size_t la = ta.size() + 1, lb = tb.size() + 1;
  for (size_t i = 0; i < std::min(la, lb); ++i) {
    int32_t x = i < ta.size() ? ta[i] : a.code;
    int32_t y = i < tb.size() ? tb[i] : b.code;
    if (x != y) return x < y;
  }
  return la < lb;
}

// Candidates that survive beam and capacity pruning, best first. With
// duplicate merging every candidate is kept; Prune() runs on the children.
std::vector<Candidate> SelectCandidates(std::vector<Candidate> cands,
                                        const std::vector<WordParsePrefix>& parents,
                                        const SearchOptions& options) {
  if (options.merge_duplicates || cands.empty()) return cands;
  auto better = [&](const Candidate& a, const Candidate& b) { return CandidateBetter(a, b, parents); };
  double best = cands[0].logprob;
  for (const auto& c : cands) best = std::max(best, c.logprob);
  double floor = best - options.beam;
  cands.erase(std::remove_if(cands.begin(), cands.end(),
                             [&](const Candidate& c) { return c.logprob < floor; }),
              cands.end());
  size_t keep = std::min(cands.size(), static_cast<size_t>(options.capacity));
  std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(), better);
  cands.resize(keep);
  return cands;
}

// Parser log-probabilities of every legal move, renormalized over them.
void LegalLogProbs(const SlmModel& model, const WordParsePrefix& prefix,
                   const std::vector<ParserAction>& legal, std::vector<double>& out) {
  out.assign(legal.size(), 0.0);
  if (legal.size() <= 1) return;
  std::vector<double> dist(model.parser().event_space_size());
  model.parser().Distribution(SlmModel::ParserContext(prefix), dist);
  if (static_cast<int32_t>(legal.size()) == model.parser().event_space_size()) {
    for (size_t i = 0; i < legal.size(); ++i) out[i] = std::log(dist[legal[i].Event()]);
    return;
  }
  double mass = 0.0;
  for (const auto& a : legal) mass += dist[a.Event()];
  for (size_t i = 0; i < legal.size(); ++i) {
    out[i] = mass > 0.0 ? std::log(dist[legal[i].Event()] / mass) : kLogZero;
  }
}

DIModel TrainComponent(const DIConfig& config, const HeldOutSplit& split,
                       const EstimateOptions& options) {
  if (!split.development.empty() && !split.heldout.empty()) {
    return TrainDeletedInterpolation(config, split, options);
  }
  // Too little data to estimate weights; keep the default mixture.
  DIModel model(config);
  model.AccumulateAll(split.development);
  model.AccumulateAll(split.heldout);
  model.RecomputeTotals();
  return model;
}

SlmModel TrainFromObservations(const Vocabulary& vocab, const ComponentObservations& dev,
                               const ComponentObservations& heldout,
                               const SlmTrainOptions& options) {
  auto train = [&](DIConfig config, const std::vector<Observation>& d,
                   const std::vector<Observation>& h) {
    HeldOutSplit split{d, h};
    return TrainComponent(config, split, options.estimate);
  };
  DIModel predictor = train(SlmModel::PredictorConfig(vocab, options.bucket_edges), dev.predictor,
                            heldout.predictor);
  DIModel tagger = train(SlmModel::TaggerConfig(vocab, options.bucket_edges), dev.tagger,
                         heldout.tagger);
  DIModel parser = train(SlmModel::ParserConfig(vocab, options.bucket_edges), dev.parser,
                         heldout.parser);
  return SlmModel(vocab, std::move(predictor), std::move(tagger), std::move(parser));
}

}  // namespace

int64_t HeadCategory(const ExposedHead& head) {
  return (head.terminal ? 0 : kNonTerminalBit) | static_cast<int64_t>(head.symbol);
}

int64_t HeadKey(const ExposedHead& head) {
  return (static_cast<int64_t>(head.word) << 24) | HeadCategory(head);
}

int32_t ParserAction::Code() const {
  switch (kind_) {
    case Kind::kNull:
      return 0;
    case Kind::kAdjoinLeft:
      return 1 + 2 * label_;
    case Kind::kAdjoinRight:
      return 2 + 2 * label_;
  }
  return 0;
}

ParserAction ParserAction::FromCode(int32_t code) {
  if (code < 0) throw DataError("negative parser action code");
  if (code == 0) return Null();
  LabelId label = (code - 1) / 2;
  return code % 2 == 1 ? AdjoinLeft(label) : AdjoinRight(label);
}

int32_t ParserAction::Event() const {
  if (kind_ == Kind::kNull) return 0;
  if (label_ < Vocabulary::kNumReservedLabels) return -1;
  return Code() - 2 * Vocabulary::kNumReservedLabels;
}

ParserAction ParserAction::FromEvent(int32_t event) {
  if (event < 0) throw DataError("negative parser event");
  return FromCode(event == 0 ? 0 : event + 2 * Vocabulary::kNumReservedLabels);
}

std::string ParserAction::ToString(const Vocabulary& vocab) const {
  switch (kind_) {
    case Kind::kNull:
      return "null";
    case Kind::kAdjoinLeft:
      return "adjoin-left(" + vocab.Label(label_) + ")";
    case Kind::kAdjoinRight:
      return "adjoin-right(" + vocab.Label(label_) + ")";
  }
  return "?";
}

std::vector<ParserAction> LegalActions(const WordParsePrefix& prefix, int32_t num_labels,
                                       bool right_branching_only) {
  std::vector<ParserAction> out;
  auto add_adjoins = [&]() {
    for (LabelId l = Vocabulary::kNumReservedLabels; l < num_labels; ++l) {
      out.push_back(ParserAction::AdjoinLeft(l));
      out.push_back(ParserAction::AdjoinRight(l));
    }
  };
  if (!prefix.final) {
    out.push_back(ParserAction::Null());
    if (prefix.heads.size() >= 3 && !right_branching_only) add_adjoins();
    return out;
  }
  if (prefix.complete()) return out;
  const ExposedHead& h0 = prefix.h0();
  if (h0.terminal && h0.word == Vocabulary::kEos) {
    out.push_back(ParserAction::AdjoinLeft(Vocabulary::kEndLabel));
  } else if (prefix.heads.size() == 2) {
    out.push_back(ParserAction::AdjoinRight(Vocabulary::kTopLabel));
  } else {
    add_adjoins();
  }
  return out;
}

WordParsePrefix ApplyAction(const WordParsePrefix& prefix, ParserAction action) {
  if (prefix.complete()) throw DataError("parser move after the tree is complete");
  size_t n = prefix.heads.size();
  if (action.is_null()) {
    if (prefix.final) throw DataError("null move after </s>");
    WordParsePrefix next = prefix;
    next.trace.push_back(action.Code());
    return next;
  }
  const ExposedHead& h0 = prefix.h0();
  bool eos_leaf = h0.terminal && h0.word == Vocabulary::kEos;
  LabelId label = action.label();
  if (!prefix.final) {
    if (n < 3) throw DataError("adjoin would touch the sentence-begin head");
    if (label < Vocabulary::kNumReservedLabels) throw DataError("reserved label before </s>");
  } else if (eos_leaf) {
    if (action != ParserAction::AdjoinLeft(Vocabulary::kEndLabel)) {
      throw DataError("</s> must be attached with adjoin-left(<end>)");
    }
  } else if (n == 2) {
    if (action != ParserAction::AdjoinRight(Vocabulary::kTopLabel)) {
      throw DataError("the root must be closed with adjoin-right(<top>)");
    }
  } else if (label < Vocabulary::kNumReservedLabels) {
    throw DataError("reserved label in a free adjoin");
  }
  WordParsePrefix next = prefix;
  const ExposedHead& left = prefix.heads[n - 2];
  const ExposedHead& right = prefix.heads[n - 1];
  WordId head_word =
      action.kind() == ParserAction::Kind::kAdjoinLeft ? left.word : right.word;
  next.heads.resize(n - 2);
  next.heads.push_back({head_word, label, false});
  next.trace.push_back(action.Code());
  return next;
}

std::vector<int32_t> Derivation::Trace() const {
  std::vector<int32_t> out;
  for (size_t k = 0; k < tags.size(); ++k) {
    out.push_back(-1 - tags[k]);
    if (k < actions.size()) {
      for (const auto& a : actions[k]) out.push_back(a.Code());
    }
  }
  return out;
}

Derivation Derivation::FromTrace(std::span<const int32_t> trace, size_t sentence_length) {
  Derivation d;
  for (int32_t code : trace) {
    if (code < 0) {
      d.tags.push_back(-1 - code);
      d.actions.emplace_back();
    } else {
      if (d.tags.empty()) throw DataError("derivation trace starts with a parser move");
      d.actions.back().push_back(ParserAction::FromCode(code));
    }
  }
  if (d.tags.size() != sentence_length + 1) {
    throw DataError("derivation trace length does not match the sentence");
  }
  return d;
}

SlmModel::SlmModel(Vocabulary vocab, DIModel predictor, DIModel tagger, DIModel parser)
    : vocab_(std::move(vocab)),
      predictor_(std::move(predictor)),
      tagger_(std::move(tagger)),
      parser_(std::move(parser)) {
  if (vocab_.num_labels() <= Vocabulary::kNumReservedLabels) {
    throw DataError("the SLM needs at least one non-terminal label");
  }
  if (vocab_.num_tags() <= Vocabulary::kNumReservedTags) {
    throw DataError("the SLM needs at least one POS tag");
  }
  if (predictor_.config().event_space_size != vocab_.num_words() - 1 ||
      tagger_.config().event_space_size != vocab_.num_tags() - Vocabulary::kNumReservedTags ||
      parser_.config().event_space_size != NumParserEvents(vocab_.num_labels())) {
    throw DataError("SLM component does not match the vocabulary");
  }
}

DIConfig SlmModel::PredictorConfig(const Vocabulary& vocab, std::vector<double> edges) {
  DIConfig c;
  c.order_lengths = {2, 1, 0};
  c.event_space_size = vocab.num_words() - 1;
  c.bucket_edges = std::move(edges);
  return c;
}

DIConfig SlmModel::TaggerConfig(const Vocabulary& vocab, std::vector<double> edges) {
  DIConfig c;
  c.order_lengths = {3, 2, 1};
  c.event_space_size = vocab.num_tags() - Vocabulary::kNumReservedTags;
  c.bucket_edges = std::move(edges);
  return c;
}

DIConfig SlmModel::ParserConfig(const Vocabulary& vocab, std::vector<double> edges) {
  if (vocab.num_labels() <= Vocabulary::kNumReservedLabels) {
    throw DataError("the SLM needs at least one non-terminal label");
  }
  DIConfig c;
  c.order_lengths = {2, 1, 0};
  c.event_space_size = NumParserEvents(vocab.num_labels());
  c.bucket_edges = std::move(edges);
  return c;
}

Context SlmModel::PredictorContext(const WordParsePrefix& prefix) {
  return Context{HeadKey(prefix.h0()), HeadKey(prefix.h1())};
}

Context SlmModel::TaggerContext(const WordParsePrefix& prefix, WordId word) {
  return Context{word, HeadCategory(prefix.h0()), HeadCategory(prefix.h1())};
}

Context SlmModel::ParserContext(const WordParsePrefix& prefix) {
  return Context{HeadKey(prefix.h0()), HeadKey(prefix.h1())};
}

double SlmModel::PredictorLogProb(const WordParsePrefix& prefix, WordId word) const {
  if (word <= Vocabulary::kBos || word >= vocab_.num_words()) {
    throw DataError("word id outside the SLM vocabulary");
  }
  return predictor_.LogProb(PredictorContext(prefix), word - 1);
}

void SlmModel::TaggerLogProbs(const WordParsePrefix& prefix, WordId word,
                              std::vector<double>& out) const {
  out.resize(tagger_.event_space_size());
  tagger_.Distribution(TaggerContext(prefix, word), out);
  for (double& p : out) p = std::log(p);
}

double SlmModel::TaggerLogProb(const WordParsePrefix& prefix, WordId word, TagId tag) const {
  if (tag < Vocabulary::kNumReservedTags || tag >= vocab_.num_tags()) {
    throw DataError("tag id outside the SLM tag set");
  }
  return tagger_.LogProb(TaggerContext(prefix, word), tag - Vocabulary::kNumReservedTags);
}

double SlmModel::ParserLogProb(const WordParsePrefix& prefix, ParserAction action,
                               bool right_branching_only) const {
  auto legal = LegalActions(prefix, num_labels(), right_branching_only);
  auto it = std::find(legal.begin(), legal.end(), action);
  if (it == legal.end()) throw DataError("illegal parser move " + action.ToString(vocab_));
  std::vector<double> lp;
  LegalLogProbs(*this, prefix, legal, lp);
  return lp[it - legal.begin()];
}

std::string SlmModel::Serialize() const {
  std::string out = "slmtk-slm 1\n";
  out += "vocab-checksum " + HexDigest(vocab_.Checksum()) + "\n";
  out += vocab_.Serialize();
  out += predictor_.Serialize("predictor");
  out += tagger_.Serialize("tagger");
  out += parser_.Serialize("parser");
  return out;
}

SlmModel SlmModel::Parse(std::string_view text) {
  size_t pos = 0;
  auto next_line = [&]() {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) throw DataError("truncated SLM model");
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != "slmtk-slm 1") throw DataError("not an slmtk SLM model");
  auto ck = SplitWhitespace(next_line());
  if (ck.size() != 2 || ck[0] != "vocab-checksum") throw DataError("SLM model: missing checksum");
  size_t vocab_begin = pos;
  size_t dim = text.find("\ndimodel ", pos);
  if (dim == std::string_view::npos) throw DataError("SLM model: missing DI sections");
  ++dim;
  Vocabulary vocab = Vocabulary::Parse(text.substr(vocab_begin, dim - vocab_begin));
  if (HexDigest(vocab.Checksum()) != ck[1]) throw DataError("SLM model: vocabulary checksum mismatch");
  pos = dim;
  DIModel parts[3];
  const char* roles[3] = {"predictor", "tagger", "parser"};
  for (int i = 0; i < 3; ++i) {
    std::string role;
    parts[i] = DIModel::Parse(text, pos, &role);
    if (role != roles[i]) throw DataError("SLM model: expected " + std::string(roles[i]) + " section");
  }
  return SlmModel(std::move(vocab), std::move(parts[0]), std::move(parts[1]), std::move(parts[2]));
}

namespace {

// Replays a derivation, calling visit(kind, prefix, ...) for every step.
template <class OnWord, class OnTag, class OnMove>
void Replay(int32_t num_labels, const Sentence& sentence, const Derivation& derivation,
            bool right_branching_only, OnWord on_word, OnTag on_tag, OnMove on_move) {
  size_t n = sentence.size();
  if (derivation.tags.size() != n + 1 || derivation.actions.size() != n + 1) {
    throw DataError("derivation length does not match the sentence");
  }
  WordParsePrefix p;
  for (size_t k = 0; k <= n; ++k) {
    WordId w = k < n ? sentence.tokens[k] : Vocabulary::kEos;
    TagId tag = derivation.tags[k];
    on_word(p, w);
    if (w == Vocabulary::kEos) {
      if (tag != Vocabulary::kEosTag) throw DataError("</s> must carry the <se> tag");
    } else {
      if (tag < Vocabulary::kNumReservedTags) throw DataError("reserved tag on a sentence word");
      on_tag(p, w, tag);
    }
    p = Shift(p, w, tag);
    const auto& moves = derivation.actions[k];
    for (size_t i = 0; i < moves.size(); ++i) {
      if (!p.final && moves[i].is_null() && i + 1 != moves.size()) {
        throw DataError("parser moves after null");
      }
      auto legal = LegalActions(p, num_labels, right_branching_only);
      if (std::find(legal.begin(), legal.end(), moves[i]) == legal.end()) {
        throw DataError("illegal parser move at position " + std::to_string(k + 1));
      }
      on_move(p, moves[i], legal);
      p = ApplyAction(p, moves[i]);
    }
    if (!p.final && (moves.empty() || !moves.back().is_null())) {
      throw DataError("parser moves must end with null before </s>");
    }
  }
  if (!p.complete()) throw DataError("derivation does not complete the tree");
}

}  // namespace

double JointLogProb(const SlmModel& model, const Sentence& sentence, const Derivation& derivation,
                    bool right_branching_only) {
  double lp = 0.0;
  std::vector<double> moves;
  Replay(
      model.num_labels(), sentence, derivation, right_branching_only,
      [&](const WordParsePrefix& p, WordId w) { lp += model.PredictorLogProb(p, w); },
      [&](const WordParsePrefix& p, WordId w, TagId t) {
        if (t >= model.vocab().num_tags()) throw DataError("tag id outside the SLM tag set");
        lp += model.TaggerLogProb(p, w, t);
      },
      [&](const WordParsePrefix& p, ParserAction a, const std::vector<ParserAction>& legal) {
        LegalLogProbs(model, p, legal, moves);
        lp += moves[std::find(legal.begin(), legal.end(), a) - legal.begin()];
      });
  return std::isnan(lp) ? kLogZero : lp;
}

Derivation ExtractDerivation(const AnnotatedParse& parse) {
  ValidateParse(parse);
  const auto& nodes = parse.nodes;
  std::vector<int32_t> first(nodes.size()), last(nodes.size());
  int32_t num_leaves = 0;
  // Post-order spans over leaf positions (1-based).
  std::vector<std::pair<int32_t, bool>> stack{{parse.root, false}};
  Derivation d;
  while (!stack.empty()) {
    auto [id, expanded] = stack.back();
    stack.pop_back();
    const ParseNode& node = nodes[id];
    if (node.is_leaf()) {
      first[id] = last[id] = ++num_leaves;
      d.tags.push_back(node.symbol);
      continue;
    }
    if (expanded) {
      first[id] = first[node.left];
      last[id] = last[node.right];
      continue;
    }
    stack.push_back({id, true});
    stack.push_back({node.right, false});
    stack.push_back({node.left, false});
  }
  d.tags.push_back(Vocabulary::kEosTag);
  d.actions.assign(num_leaves + 1, {});
  // Nodes closing at each position, innermost (latest start) first.
  std::vector<std::vector<int32_t>> closing(num_leaves + 1);
  for (size_t id = 0; id < nodes.size(); ++id) {
    if (!nodes[id].is_leaf()) closing[last[id]].push_back(static_cast<int32_t>(id));
  }
  auto move_for = [&](int32_t id) {
    return nodes[id].head_child == 0 ? ParserAction::AdjoinLeft(nodes[id].symbol)
                                     : ParserAction::AdjoinRight(nodes[id].symbol);
  };
  for (int32_t r = 1; r <= num_leaves; ++r) {
    auto& ids = closing[r];
    std::sort(ids.begin(), ids.end(), [&](int32_t a, int32_t b) { return first[a] > first[b]; });
    auto& out = r < num_leaves ? d.actions[r - 1] : d.actions[num_leaves];
    if (r == num_leaves) out.push_back(ParserAction::AdjoinLeft(Vocabulary::kEndLabel));
    for (int32_t id : ids) out.push_back(move_for(id));
    if (r < num_leaves) out.push_back(ParserAction::Null());
  }
  d.actions[num_leaves - 1].push_back(ParserAction::Null());
  d.actions[num_leaves].push_back(ParserAction::AdjoinRight(Vocabulary::kTopLabel));
  return d;
}

void ComponentObservations::Append(const ComponentObservations& other) {
  predictor.insert(predictor.end(), other.predictor.begin(), other.predictor.end());
  tagger.insert(tagger.end(), other.tagger.begin(), other.tagger.end());
  parser.insert(parser.end(), other.parser.begin(), other.parser.end());
}

ComponentObservations DerivationObservations(int32_t num_labels, const Sentence& sentence,
                                             const Derivation& derivation, double weight) {
  ComponentObservations out;
  Replay(
      num_labels, sentence, derivation, false,
      [&](const WordParsePrefix& p, WordId w) {
        out.predictor.push_back({SlmModel::PredictorContext(p), w - 1, weight});
      },
      [&](const WordParsePrefix& p, WordId w, TagId t) {
        out.tagger.push_back({SlmModel::TaggerContext(p, w), t - Vocabulary::kNumReservedTags, weight});
      },
      [&](const WordParsePrefix& p, ParserAction a, const std::vector<ParserAction>& legal) {
        if (legal.size() > 1) out.parser.push_back({SlmModel::ParserContext(p), a.Event(), weight});
      });
  return out;
}

SlmModel InitFromTreebank(const Vocabulary& vocab, const std::vector<AnnotatedParse>& parses,
                          const SlmTrainOptions& options) {
  if (parses.empty()) throw DataError("treebank is empty");
  std::vector<bool> heldout = HeldOutMask(parses.size(), options.split);
  ComponentObservations dev, held;
  for (size_t i = 0; i < parses.size(); ++i) {
    Sentence s = parses[i].Leaves();
    for (WordId w : s.tokens) {
      if (w >= vocab.num_words()) throw DataError("treebank word outside the vocabulary");
    }
    for (TagId t : parses[i].Tags()) {
      if (t < Vocabulary::kNumReservedTags || t >= vocab.num_tags()) {
        throw DataError("treebank tag outside the tag set");
      }
    }
    auto obs = DerivationObservations(vocab.num_labels(), s, ExtractDerivation(parses[i]), 1.0);
    (heldout[i] ? held : dev).Append(obs);
  }
  return TrainFromObservations(vocab, dev, held, options);
}

void SearchOptions::Validate() const {
  if (!(beam > 0.0)) throw ConfigError("beam must be positive");
  if (capacity < 1) throw ConfigError("stack capacity must be at least 1");
}

StackSet StackSet::Initial() {
  StackSet s;
  s.entries.emplace_back();
  return s;
}

double StackSet::LogMass() const {
  std::vector<double> lp;
  lp.reserve(entries.size());
  for (const auto& e : entries) lp.push_back(e.logprob);
  return LogSumExp(lp);
}

std::vector<double> StackSet::Weights() const {
  double mass = LogMass();
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(std::exp(e.logprob - mass));
  return out;
}

double PrefixWordLogProb(const SlmModel& model, const StackSet& stack, WordId word) {
  std::vector<double> joint;
  joint.reserve(stack.entries.size());
  for (const auto& e : stack.entries) joint.push_back(e.logprob + model.PredictorLogProb(e, word));
  return LogSumExp(joint) - stack.LogMass();
}

AdvanceResult AdvanceStack(const SlmModel& model, const StackSet& stack, WordId word,
                           const SearchOptions& options) {
  options.Validate();
  if (stack.entries.empty()) throw SearchFailure("empty stack");
  AdvanceResult r;
  r.next.position = stack.position + 1;
  std::vector<double> joint;
  std::vector<double> tag_lp;
  std::vector<Candidate> cands;
  for (size_t i = 0; i < stack.entries.size(); ++i) {
    const auto& e = stack.entries[i];
    if (e.final) throw DataError("word predicted after </s>");
    double base = e.logprob + model.PredictorLogProb(e, word);
    joint.push_back(base);
    if (base == kLogZero) continue;
    if (word == Vocabulary::kEos) {
      cands.push_back({base, static_cast<int32_t>(i), -1 - Vocabulary::kEosTag});
      continue;
    }
    model.TaggerLogProbs(e, word, tag_lp);
    for (size_t t = 0; t < tag_lp.size(); ++t) {
      if (tag_lp[t] == kLogZero) continue;
      TagId tag = static_cast<TagId>(t) + Vocabulary::kNumReservedTags;
      cands.push_back({base + tag_lp[t], static_cast<int32_t>(i), -1 - tag});
    }
  }
  r.word_logprob = LogSumExp(joint) - stack.LogMass();
  std::vector<WordParsePrefix> level;
  for (const auto& c : SelectCandidates(std::move(cands), stack.entries, options)) {
    level.push_back(Shift(stack.entries[c.parent], word, -1 - c.code));
    level.back().logprob = c.logprob;
  }
  Prune(level, options);
  std::vector<WordParsePrefix> done;
  std::vector<double> move_lp;
  std::vector<Candidate> nulls;
  while (!level.empty()) {
    cands.clear();
    nulls.clear();
    for (size_t i = 0; i < level.size(); ++i) {
      const auto& q = level[i];
      if (q.complete()) {
        done.push_back(q);
        continue;
      }
      auto legal = LegalActions(q, model.num_labels(), options.right_branching_only);
      LegalLogProbs(model, q, legal, move_lp);
      for (size_t k = 0; k < legal.size(); ++k) {
        if (move_lp[k] == kLogZero) continue;
        ++r.expansions;
        Candidate c{q.logprob + move_lp[k], static_cast<int32_t>(i), legal[k].Code()};
        (legal[k].is_null() ? nulls : cands).push_back(c);
      }
    }
    for (const auto& c : SelectCandidates(std::move(nulls), level, options)) {
      done.push_back(ApplyAction(level[c.parent], ParserAction::FromCode(c.code)));
      done.back().logprob = c.logprob;
    }
    std::vector<WordParsePrefix> next_level;
    for (const auto& c : SelectCandidates(std::move(cands), level, options)) {
      next_level.push_back(ApplyAction(level[c.parent], ParserAction::FromCode(c.code)));
      next_level.back().logprob = c.logprob;
    }
    Prune(next_level, options);
    level = std::move(next_level);
  }
  Prune(done, options);
  if (done.empty()) {
    throw SearchFailure("no parse survives at position " + std::to_string(r.next.position));
  }
  r.next.entries = std::move(done);
  return r;
}

SearchResult MultiStackSearch(const SlmModel& model, const Sentence& sentence,
                              const SearchOptions& options) {
  ValidateSentence(sentence);
  SearchResult result;
  result.stacks.push_back(StackSet::Initial());
  for (size_t k = 0; k <= sentence.size(); ++k) {
    WordId w = k < sentence.size() ? sentence.tokens[k] : Vocabulary::kEos;
    AdvanceResult r = AdvanceStack(model, result.stacks.back(), w, options);
    result.word_logprobs.push_back(r.word_logprob);
    result.expansions += r.expansions;
    result.stacks.push_back(std::move(r.next));
  }
  return result;
}

std::vector<ScoredDerivation> NBestParses(const SlmModel& model, const Sentence& sentence,
                                          int n, const SearchOptions& options) {
  if (n < 1) throw ConfigError("N-best size must be at least 1");
  SearchResult search = MultiStackSearch(model, sentence, options);
  const auto& complete = search.stacks.back().entries;
  size_t keep = std::min(complete.size(), static_cast<size_t>(n));
  std::vector<double> lps;
  for (size_t i = 0; i < keep; ++i) lps.push_back(complete[i].logprob);
  double mass = LogSumExp(lps);
  std::vector<ScoredDerivation> out;
  for (size_t i = 0; i < keep; ++i) {
    out.push_back({Derivation::FromTrace(complete[i].trace, sentence.size()), complete[i].logprob,
                   std::exp(complete[i].logprob - mass)});
  }
  return out;
}

PerplexityReport SlmPerplexity(const SlmModel& model, const std::vector<Sentence>& corpus,
                               const SearchOptions& options, int workers) {
  std::vector<double> lp(corpus.size());
  ParallelFor(corpus.size(), workers, [&](size_t i) {
    try {
      SearchResult r = MultiStackSearch(model, corpus[i], options);
      double sum = 0.0;
      for (double x : r.word_logprobs) sum += x;
      lp[i] = sum;
    } catch (const SearchFailure& e) {
      throw SearchFailure("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
  });
  PerplexityReport report;
  for (size_t i = 0; i < corpus.size(); ++i) {
    report.logprob += lp[i];
    report.tokens += static_cast<double>(corpus[i].size() + 1);
  }
  report.perplexity = report.tokens > 0 ? std::exp(-report.logprob / report.tokens) : 0.0;
  return report;
}

SlmModel EmReestimate(const SlmModel& model, const std::vector<Sentence>& corpus, int n,
                      const SearchOptions& search, const SlmTrainOptions& train,
                      ReestimateReport* report, int workers) {
  if (corpus.empty()) throw DataError("re-estimation corpus is empty");
  std::vector<std::vector<ScoredDerivation>> nbest(corpus.size());
  std::vector<char> failed(corpus.size(), 0);
  ParallelFor(corpus.size(), workers, [&](size_t i) {
    try {
      nbest[i] = NBestParses(model, corpus[i], n, search);
    } catch (const SearchFailure&) {
      failed[i] = 1;
    }
  });
  std::vector<bool> heldout = HeldOutMask(corpus.size(), train.split);
  ComponentObservations dev, held;
  ReestimateReport r;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (failed[i]) {
      ++r.skipped;
      std::cerr << "WARNING: no parse for sentence " << (i + 1) << ", skipped\n";
      continue;
    }
    ++r.sentences;
    for (const auto& sd : nbest[i]) {
      auto obs = DerivationObservations(model.num_labels(), corpus[i], sd.derivation, sd.posterior);
      (heldout[i] ? held : dev).Append(obs);
    }
  }
  if (r.sentences == 0) throw SearchFailure("no sentence could be parsed");
  if (report) *report = r;
  return TrainFromObservations(model.vocab(), dev, held, train);
}

namespace {

struct SlmState : LMState {
  StackSet stack;
  bool ended = false;
};

}  // namespace

SlmLanguageModel::SlmLanguageModel(const SlmModel& model, SearchOptions options)
    : model_(model), options_(options) {
  options_.Validate();
}

LMStatePtr SlmLanguageModel::Start() const {
  auto s = std::make_shared<SlmState>();
  s->stack = StackSet::Initial();
  return s;
}

double SlmLanguageModel::Score(const LMStatePtr& state, WordId word, LMStatePtr* next) const {
  const auto* s = dynamic_cast<const SlmState*>(state.get());
  if (!s) throw std::logic_error("foreign LM state passed to the SLM");
  if (s->ended) throw DataError("word scored after </s>");
  if (word <= Vocabulary::kBos || word >= model_.vocab().num_words()) {
    throw DataError("word id outside the SLM vocabulary");
  }
  if (!next) return PrefixWordLogProb(model_, s->stack, word);
  AdvanceResult r = AdvanceStack(model_, s->stack, word, options_);
  auto n = std::make_shared<SlmState>();
  n->stack = std::move(r.next);
  n->ended = word == Vocabulary::kEos;
  *next = std::move(n);
  return r.word_logprob;
}

}  // namespace slmtk
