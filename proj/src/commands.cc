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

#include "slmtk/commands.h"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "slmtk/astar.h"
#include "slmtk/eval.h"
#include "slmtk/lattice.h"
#include "slmtk/ngram.h"
#include "slmtk/parallel.h"
#include "slmtk/slm.h"
#include "slmtk/toydata.h"

namespace slmtk {

namespace {

namespace fs = std::filesystem;

// Flat key=value files: every key belongs to the subcommand being run.
class FlatConfig : public CLI::ConfigBase {
 public:
  explicit FlatConfig(std::string section) : section_(std::move(section)) {}
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigBase::from_config(input);
    for (auto& item : items) {
      if (item.parents.empty() && item.name != "++" && item.name != "--") item.parents = {section_};
    }
    return items;
  }

 private:
  std::string section_;
};

class Report {
 public:
  template <class T>
  void Add(const std::string& key, const T& value) {
    if constexpr (std::is_floating_point_v<T>) {
      text_ += key + "\t" + FormatDouble(value) + "\n";
    } else if constexpr (std::is_arithmetic_v<T>) {
      text_ += key + "\t" + std::to_string(value) + "\n";
    } else {
      text_ += key + "\t" + std::string(value) + "\n";
    }
  }
  const std::string& str() const { return text_; }

 private:
  std::string text_;
};

void Emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    WriteFileAtomic(path, text);
  }
}

std::string FileChecksum(const std::string& path) { return HexDigest(Fnv1a64(ReadFile(path))); }

// <output>.run.meta: command, hash of the resolved configuration and
// checksums of the models it read.
void WriteRunMeta(const std::string& output, const std::string& command, const std::string& config,
                  const std::vector<std::pair<std::string, std::string>>& models) {
  if (output.empty() || output == "-") return;
  Report meta;
  meta.Add("command", command);
  meta.Add("config_hash", HexDigest(Fnv1a64(config)));
  for (const auto& [name, path] : models) {
    if (!path.empty()) meta.Add(name + "_checksum", FileChecksum(path));
  }
  WriteFileAtomic(output + ".run.meta", meta.str());
}

std::string Join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<double> BucketEdges(int buckets) {
  if (buckets < 1 || buckets > 62) throw ConfigError("buckets must lie in [1, 62]");
  std::vector<double> edges;
  for (int i = 0; i < buckets; ++i) edges.push_back(std::ldexp(1.0, i));
  return edges;
}

OovPolicy ParseOov(const std::string& s) {
  if (s == "open") return OovPolicy::kOpen;
  if (s == "closed") return OovPolicy::kClosed;
  throw ConfigError("oov must be open or closed");
}

std::vector<Sentence> LoadCorpus(const std::string& path, const Vocabulary& vocab, OovPolicy policy) {
  auto raw = ReadCorpusFile(path);
  std::vector<Sentence> out;
  for (size_t i = 0; i < raw.size(); ++i) {
    try {
      out.push_back(vocab.MapSentence(raw[i], policy));
    } catch (const DataError& e) {
      throw DataError(path + ": sentence " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path + ": corpus is empty");
  return out;
}

struct VocabArgs {
  std::string vocab_in;
  std::string vocab_out;
  int64_t vocab_size = 50000;
  int64_t min_count = 1;

  void Add(CLI::App* app) {
    app->add_option("--vocab", vocab_in, "Existing vocabulary file to use instead of building one");
    app->add_option("--vocab-out", vocab_out, "Write the vocabulary to this file");
    app->add_option("--vocab-size", vocab_size, "Maximum number of regular words")
        ->check(CLI::PositiveNumber);
    app->add_option("--min-count", min_count, "Minimum count of a vocabulary word")
        ->check(CLI::PositiveNumber);
  }
};

struct TrainArgs {
  double heldout_fraction = 0.1;
  uint64_t seed = 0;
  int buckets = 21;
  int max_iterations = 100;

  void Add(CLI::App* app) {
    app->add_option("--heldout-fraction", heldout_fraction, "Share of sentences held out for weights")
        ->check(CLI::Range(0.0, 1.0));
    app->add_option("--seed", seed, "Seed of the held-out split");
    app->add_option("--buckets", buckets, "Number of power-of-two count bins for weight tying");
    app->add_option("--em-iterations", max_iterations, "Cap on weight-estimation iterations");
  }
  SplitOptions Split() const {
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
      throw ConfigError("heldout-fraction must lie in (0, 1)");
    }
    return {heldout_fraction, seed};
  }
  EstimateOptions Estimate() const {
    if (max_iterations < 1) throw ConfigError("em-iterations must be at least 1");
    EstimateOptions e;
    e.max_iterations = max_iterations;
    return e;
  }
};

void AddSearch(CLI::App* app, SearchOptions& s) {
  app->add_option("--beam", s.beam, "Log-probability beam of the SLM stacks");
  app->add_option("--capacity", s.capacity, "Maximum entries per SLM stack level");
  app->add_flag("--merge-duplicates", s.merge_duplicates, "Merge stack entries with equal heads");
}

void AddRescore(CLI::App* app, RescoreParams& p) {
  app->add_option("--lm-weight", p.lm_weight, "Language model weight");
  app->add_option("--log-ip", p.log_ip, "Insertion penalty per link");
  app->add_option("--log-comp", p.log_comp, "Lookahead compensation per link");
  app->add_option("--log-final", p.log_final, "Lookahead term for a non-empty suffix");
  app->add_option("--stack-capacity", p.stack_capacity, "A* stack capacity");
}

// Trigram, SLM or their interpolation, as selected by the options.
struct LmArgs {
  std::string ngram_path;
  std::string slm_path;
  double lambda = -1.0;
  SearchOptions search;

  void Add(CLI::App* app) {
    app->add_option("--ngram", ngram_path, "Trigram model file");
    app->add_option("--slm", slm_path, "SLM model file");
    app->add_option("--lambda", lambda, "Trigram weight in the interpolation")->check(CLI::Range(0.0, 1.0));
    AddSearch(app, search);
  }
};

class LmBundle {
 public:
  explicit LmBundle(const LmArgs& args) {
    args.search.Validate();
    lambda_ = args.lambda;
    if (lambda_ < 0.0) {
      if (!args.ngram_path.empty() && !args.slm_path.empty()) {
        throw ConfigError("--lambda is required when both --ngram and --slm are given");
      }
      lambda_ = args.slm_path.empty() ? 1.0 : 0.0;
    }
    if (lambda_ > 0.0 && args.ngram_path.empty()) throw ConfigError("--ngram is required for lambda > 0");
    if (lambda_ < 1.0 && args.slm_path.empty()) throw ConfigError("--slm is required for lambda < 1");
    if (!args.ngram_path.empty()) {
      ngram_ = std::make_unique<NgramModel>(Load<NgramModel>(args.ngram_path));
    }
    if (!args.slm_path.empty()) {
      slm_model_ = std::make_unique<SlmModel>(Load<SlmModel>(args.slm_path));
      slm_ = std::make_unique<SlmLanguageModel>(*slm_model_, args.search);
    }
    if (ngram_ && slm_model_ &&
        ngram_->vocab().WordChecksum() != slm_model_->vocab().WordChecksum()) {
      throw DataError("trigram and SLM vocabularies differ");
    }
    if (ngram_ && slm_) {
      mix_ = std::make_unique<InterpolatedLM>(*ngram_, *slm_, lambda_);
    }
  }

  const LanguageModel& lm() const {
    if (mix_) return *mix_;
    if (ngram_) return *ngram_;
    return *slm_;
  }
  const Vocabulary& vocab() const { return ngram_ ? ngram_->vocab() : slm_model_->vocab(); }
  double lambda() const { return lambda_; }
  const NgramModel* ngram() const { return ngram_.get(); }
  const SlmLanguageModel* slm() const { return slm_.get(); }

 private:
  template <class M>
  static M Load(const std::string& path) {
    try {
      return M::Parse(ReadFile(path));
    } catch (const DataError& e) {
      throw DataError(path + ": " + e.what());
    }
  }

  double lambda_ = 1.0;
  std::unique_ptr<NgramModel> ngram_;
  std::unique_ptr<SlmModel> slm_model_;
  std::unique_ptr<SlmLanguageModel> slm_;
  std::unique_ptr<InterpolatedLM> mix_;
};

Vocabulary ResolveVocabulary(const VocabArgs& args,
                             const std::vector<std::vector<std::string>>& corpus) {
  if (!args.vocab_in.empty()) {
    try {
      return Vocabulary::Parse(ReadFile(args.vocab_in));
    } catch (const DataError& e) {
      throw DataError(args.vocab_in + ": " + e.what());
    }
  }
  return BuildVocabulary(corpus, args.vocab_size, args.min_count);
}

std::vector<std::string> LatticeFiles(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a lattice directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".lat") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir + ": no .lat files");
  return files;
}

std::string UttId(const std::string& path) { return fs::path(path).stem().string(); }

struct Transcript {
  std::string id;
  std::vector<std::string> words;
};

// `id<TAB>score<TAB>words` lines as written by the rescoring commands.
std::vector<Transcript> ReadTranscripts(const std::string& path) {
  std::vector<Transcript> out;
  size_t line_no = 0;
  for (const auto& line : SplitChar(ReadFile(path), '\n')) {
    ++line_no;
    if (SplitWhitespace(line).empty()) continue;
    auto cols = SplitChar(line, '\t');
    if (cols.size() != 3) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected id<TAB>score<TAB>words");
    }
    out.push_back({cols[0], SplitWhitespace(cols[2])});
  }
  return out;
}

std::map<std::string, std::vector<std::string>> LoadReferences(const std::string& path) {
  std::map<std::string, std::vector<std::string>> out;
  try {
    for (auto& [id, words] : ParseReferenceFile(ReadFile(path))) out[id] = std::move(words);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  return out;
}

const std::vector<std::string>& ReferenceFor(const std::map<std::string, std::vector<std::string>>& refs,
                                             const std::string& id) {
  auto it = refs.find(id);
  if (it == refs.end()) throw DataError("no reference for utterance " + id);
  return it->second;
}

struct ScoredUtterances {
  Report report;
  std::string detail;
  std::vector<int64_t> errors;
  WerCounts total;
};

ScoredUtterances ScoreTranscripts(const std::vector<Transcript>& hyps,
                                  const std::map<std::string, std::vector<std::string>>& refs) {
  ScoredUtterances s;
  WerCounts& total = s.total;
  s.detail = "utt\tS\tI\tD\tN\n";
  for (const auto& h : hyps) {
    WerCounts w = Wer(h.words, ReferenceFor(refs, h.id));
    total += w;
    s.errors.push_back(w.errors());
    s.detail += h.id + "\t" + std::to_string(w.substitutions) + "\t" + std::to_string(w.insertions) +
                "\t" + std::to_string(w.deletions) + "\t" + std::to_string(w.reference_length) + "\n";
  }
  s.report.Add("utterances", static_cast<int64_t>(hyps.size()));
  s.report.Add("substitutions", total.substitutions);
  s.report.Add("insertions", total.insertions);
  s.report.Add("deletions", total.deletions);
  s.report.Add("reference_words", total.reference_length);
  s.report.Add("wer", total.wer());
  return s;
}

struct RunContext {
  CLI::App* app = nullptr;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  std::string config;
};

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured language model toolkit", "slmtk"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Flat key=value file; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads for per-utterance work")->check(CLI::PositiveNumber);

  std::function<void(const RunContext&)> action;
  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->allow_config_extras(CLI::config_extras_mode::error);
    sub->footer(
        "Global options:\n"
        "  --config TEXT               Flat key=value file; command-line flags override it\n"
        "  --workers INT:POSITIVE      Worker threads for per-utterance work");
    return sub;
  };

  // train-ngram
  struct {
    std::string corpus, output, report;
    VocabArgs vocab;
    TrainArgs train;
  } tn;
  {
    auto* sub = command("train-ngram", "Train a deleted-interpolation trigram");
    sub->add_option("--corpus", tn.corpus, "Training text, one sentence per line")->required();
    sub->add_option("-o,--output", tn.output, "Model file")->required();
    sub->add_option("--report", tn.report, "Training report (TSV)");
    tn.vocab.Add(sub);
    tn.train.Add(sub);
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        auto raw = ReadCorpusFile(tn.corpus);
        Vocabulary vocab = ResolveVocabulary(tn.vocab, raw);
        auto corpus = LoadCorpus(tn.corpus, vocab, OovPolicy::kOpen);
        NgramTrainOptions opts;
        opts.split = tn.train.Split();
        opts.estimate = tn.train.Estimate();
        opts.bucket_edges = BucketEdges(tn.train.buckets);
        EMReport em;
        NgramModel model = NgramModel::Train(vocab, corpus, opts, &em);
        WriteFileAtomic(tn.output, model.Serialize());
        if (!tn.vocab.vocab_out.empty()) WriteFileAtomic(tn.vocab.vocab_out, vocab.Serialize());
        PerplexityReport ppl = Perplexity(model, corpus, workers);
        Report r;
        r.Add("sentences", static_cast<int64_t>(corpus.size()));
        r.Add("vocabulary", static_cast<int64_t>(vocab.num_words()));
        r.Add("em_iterations", static_cast<int64_t>(em.iterations));
        r.Add("heldout_events", em.heldout_events);
        r.Add("heldout_loglik_per_event", em.loglik_per_event.empty() ? 0.0 : em.loglik_per_event.back());
        r.Add("train_tokens", ppl.tokens);
        r.Add("train_logprob", ppl.logprob);
        r.Add("train_perplexity", ppl.perplexity);
        Emit(tn.report, r.str(), *ctx.out);
        WriteRunMeta(tn.output, "train-ngram", ctx.config, {{"ngram", tn.output}});
      };
    });
  }

  // train-slm
  struct {
    std::string treebank, output, report;
    VocabArgs vocab;
    TrainArgs train;
  } ts;
  {
    auto* sub = command("train-slm", "Initialize an SLM from a binarized, head-annotated treebank");
    sub->add_option("--treebank", ts.treebank, "One tree per line")->required();
    sub->add_option("-o,--output", ts.output, "Model file")->required();
    sub->add_option("--report", ts.report, "Training report (TSV)");
    ts.vocab.Add(sub);
    ts.train.Add(sub);
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        auto trees = ReadTreebankFile(ts.treebank);
        if (trees.empty()) throw DataError(ts.treebank + ": treebank is empty");
        std::vector<std::vector<std::string>> words(trees.size());
        for (size_t i = 0; i < trees.size(); ++i) CollectWords(trees[i], words[i]);
        Vocabulary vocab = ResolveVocabulary(ts.vocab, words);
        std::vector<AnnotatedParse> parses;
        for (size_t i = 0; i < trees.size(); ++i) {
          try {
            parses.push_back(InternTree(trees[i], vocab, OovPolicy::kOpen, true));
          } catch (const DataError& e) {
            throw DataError(ts.treebank + ": tree " + std::to_string(i + 1) + ": " + e.what());
          }
        }
        SlmTrainOptions opts;
        opts.split = ts.train.Split();
        opts.estimate = ts.train.Estimate();
        opts.bucket_edges = BucketEdges(ts.train.buckets);
        SlmModel model = InitFromTreebank(vocab, parses, opts);
        WriteFileAtomic(ts.output, model.Serialize());
        if (!ts.vocab.vocab_out.empty()) WriteFileAtomic(ts.vocab.vocab_out, vocab.Serialize());
        Report r;
        r.Add("trees", static_cast<int64_t>(parses.size()));
        r.Add("vocabulary", static_cast<int64_t>(vocab.num_words()));
        r.Add("tags", static_cast<int64_t>(vocab.num_tags() - Vocabulary::kNumReservedTags));
        r.Add("labels", static_cast<int64_t>(vocab.num_labels() - Vocabulary::kNumReservedLabels));
        r.Add("predictor_contexts", static_cast<int64_t>(model.predictor().NumContexts(0)));
        r.Add("tagger_contexts", static_cast<int64_t>(model.tagger().NumContexts(0)));
        r.Add("parser_contexts", static_cast<int64_t>(model.parser().NumContexts(0)));
        Emit(ts.report, r.str(), *ctx.out);
        WriteRunMeta(ts.output, "train-slm", ctx.config, {{"slm", ts.output}});
      };
    });
  }

  // reestimate-slm
  struct {
    std::string model, corpus, output, report;
    int nbest = 10;
    int iterations = 1;
    SearchOptions search;
    TrainArgs train;
  } re;
  {
    auto* sub = command("reestimate-slm", "N-best EM re-estimation of an SLM on plain text");
    sub->add_option("--model", re.model, "Input SLM model")->required();
    sub->add_option("--corpus", re.corpus, "Training text")->required();
    sub->add_option("-o,--output", re.output, "Re-estimated model file")->required();
    sub->add_option("--report", re.report, "Report (TSV)");
    sub->add_option("--nbest", re.nbest, "Parses per sentence")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", re.iterations, "EM iterations")->check(CLI::PositiveNumber);
    AddSearch(sub, re.search);
    re.train.Add(sub);
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        re.search.Validate();
        SlmModel model = SlmModel::Parse(ReadFile(re.model));
        auto corpus = LoadCorpus(re.corpus, model.vocab(), OovPolicy::kOpen);
        SlmTrainOptions opts;
        opts.split = re.train.Split();
        opts.estimate = re.train.Estimate();
        opts.bucket_edges = model.predictor().config().bucket_edges;
        Report r;
        r.Add("sentences", static_cast<int64_t>(corpus.size()));
        r.Add("iteration_0_perplexity", SlmPerplexity(model, corpus, re.search, workers).perplexity);
        for (int it = 1; it <= re.iterations; ++it) {
          ReestimateReport rr;
          model = EmReestimate(model, corpus, re.nbest, re.search, opts, &rr, workers);
          std::string key = "iteration_" + std::to_string(it);
          r.Add(key + "_skipped", static_cast<int64_t>(rr.skipped));
          r.Add(key + "_perplexity", SlmPerplexity(model, corpus, re.search, workers).perplexity);
        }
        WriteFileAtomic(re.output, model.Serialize());
        Emit(re.report, r.str(), *ctx.out);
        WriteRunMeta(re.output, "reestimate-slm", ctx.config, {{"slm_in", re.model}, {"slm", re.output}});
      };
    });
  }

  // ppl
  struct {
    LmArgs lm;
    std::string corpus, report, detail, oov = "open";
  } pp;
  {
    auto* sub = command("ppl", "Perplexity of a trigram, an SLM or their interpolation");
    pp.lm.Add(sub);
    sub->add_option("--corpus", pp.corpus, "Test text")->required();
    sub->add_option("--report", pp.report, "Report (TSV)");
    sub->add_option("--detail", pp.detail, "Per-sentence log-probabilities (TSV)");
    sub->add_option("--oov", pp.oov, "open or closed");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        LmBundle lms(pp.lm);
        auto corpus = LoadCorpus(pp.corpus, lms.vocab(), ParseOov(pp.oov));
        auto lps = CorpusLogProbs(lms.lm(), corpus, workers);
        PerplexityReport ppl = PerplexityFromLogProbs(lps);
        Report r;
        r.Add("lambda", lms.lambda());
        r.Add("sentences", static_cast<int64_t>(corpus.size()));
        r.Add("tokens", ppl.tokens);
        r.Add("logprob", ppl.logprob);
        r.Add("perplexity", ppl.perplexity);
        Emit(pp.report, r.str(), *ctx.out);
        if (!pp.detail.empty()) {
          std::string d = "sentence\ttokens\tlogprob\n";
          for (size_t i = 0; i < lps.size(); ++i) {
            double sum = 0.0;
            for (double x : lps[i]) sum += x;
            d += std::to_string(i + 1) + "\t" + std::to_string(lps[i].size()) + "\t" + FormatDouble(sum) + "\n";
          }
          WriteFileAtomic(pp.detail, d);
        }
        WriteRunMeta(pp.report, "ppl", ctx.config, {{"ngram", pp.lm.ngram_path}, {"slm", pp.lm.slm_path}});
      };
    });
  }

  // tune-lambda
  struct {
    LmArgs lm;
    std::string corpus, report;
    double step = 0.05;
  } tl;
  {
    auto* sub = command("tune-lambda", "Choose the trigram weight on held-out text");
    sub->add_option("--ngram", tl.lm.ngram_path, "Trigram model file")->required();
    sub->add_option("--slm", tl.lm.slm_path, "SLM model file")->required();
    AddSearch(sub, tl.lm.search);
    sub->add_option("--corpus", tl.corpus, "Held-out text")->required();
    sub->add_option("--step", tl.step, "Coarse grid step");
    sub->add_option("--report", tl.report, "Report (TSV)");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        tl.lm.lambda = 0.5;
        LmBundle lms(tl.lm);
        auto corpus = LoadCorpus(tl.corpus, lms.vocab(), OovPolicy::kOpen);
        auto flatten = [](const std::vector<std::vector<double>>& v) {
          std::vector<double> out;
          for (const auto& s : v) out.insert(out.end(), s.begin(), s.end());
          return out;
        };
        auto a = flatten(CorpusLogProbs(*lms.ngram(), corpus, workers));
        auto b = flatten(CorpusLogProbs(*lms.slm(), corpus, workers));
        LambdaSearch s = TuneLambda(a, b, tl.step);
        Report r;
        r.Add("lambda", s.lambda);
        r.Add("perplexity", s.perplexity);
        r.Add("perplexity_lambda_0", s.grid.front().second);
        r.Add("perplexity_lambda_1", s.grid.back().second);
        for (const auto& [l, p] : s.grid) r.Add("grid_" + FormatDouble(l), p);
        Emit(tl.report, r.str(), *ctx.out);
        WriteRunMeta(tl.report, "tune-lambda", ctx.config, {{"ngram", tl.lm.ngram_path}, {"slm", tl.lm.slm_path}});
      };
    });
  }

  // rescore-lattice
  struct {
    LmArgs lm;
    RescoreParams params;
    std::string lattices, output, diagnostics, oov = "open";
  } rl;
  {
    auto* sub = command("rescore-lattice", "A* rescoring of every lattice in a directory");
    rl.lm.Add(sub);
    AddRescore(sub, rl.params);
    sub->add_option("--lattices", rl.lattices, "Directory of .lat files")->required();
    sub->add_option("-o,--output", rl.output, "Transcripts: id<TAB>score<TAB>words");
    sub->add_option("--diagnostics", rl.diagnostics, "Search diagnostics (TSV)");
    sub->add_option("--oov", rl.oov, "open or closed");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        rl.params.Validate();
        LmBundle lms(rl.lm);
        OovPolicy policy = ParseOov(rl.oov);
        auto files = LatticeFiles(rl.lattices);
        std::vector<AStarResult> results(files.size());
        ParallelFor(files.size(), workers, [&](size_t i) {
          try {
            Lattice lat = ReadLatticeFile(files[i]);
            LmLinkScorer scorer(lat, lms.lm(), LinkWordIds(lat, lms.vocab(), policy));
            SuffixBound bounds(lat, rl.params);
            results[i] = AStarSearch(lat, scorer, rl.params, bounds);
          } catch (const SearchFailure& e) {
            throw SearchFailure(files[i] + ": " + e.what());
          } catch (const DataError& e) {
            std::string what = e.what();
            if (what.rfind(files[i], 0) == 0) throw;
            throw DataError(files[i] + ": " + what);
          }
        });
        std::string text, diag = "utt\tpops\texpansions\tmax_stack\tevictions\tviolations\n";
        for (size_t i = 0; i < files.size(); ++i) {
          const auto& r = results[i];
          const auto& d = r.diagnostics;
          text += UttId(files[i]) + "\t" + FormatDouble(r.f) + "\t" + Join(r.words) + "\n";
          diag += UttId(files[i]) + "\t" + std::to_string(d.pops) + "\t" + std::to_string(d.expansions) +
                  "\t" + std::to_string(d.max_stack) + "\t" + std::to_string(d.evictions) + "\t" +
                  std::to_string(d.violations) + "\n";
        }
        Emit(rl.output, text, *ctx.out);
        if (!rl.diagnostics.empty()) WriteFileAtomic(rl.diagnostics, diag);
        WriteRunMeta(rl.output, "rescore-lattice", ctx.config,
                     {{"ngram", rl.lm.ngram_path}, {"slm", rl.lm.slm_path}});
      };
    });
  }

  // rescore-nbest
  struct {
    LmArgs lm;
    RescoreParams params;
    std::string nbest, output, ranked, oov = "open";
  } rn;
  {
    auto* sub = command("rescore-nbest", "Rerank N-best lists");
    rn.lm.Add(sub);
    AddRescore(sub, rn.params);
    sub->add_option("--nbest", rn.nbest, "N-best file: id<TAB>am<TAB>words")->required();
    sub->add_option("-o,--output", rn.output, "Best hypothesis per utterance");
    sub->add_option("--ranked", rn.ranked, "Every hypothesis in new order: id<TAB>rank<TAB>score<TAB>words");
    sub->add_option("--oov", rn.oov, "open or closed");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        rn.params.Validate();
        LmBundle lms(rn.lm);
        OovPolicy policy = ParseOov(rn.oov);
        std::vector<NBestList> lists;
        try {
          lists = ParseNBestFile(ReadFile(rn.nbest));
        } catch (const DataError& e) {
          throw DataError(rn.nbest + ": " + e.what());
        }
        std::vector<std::vector<RankedHypothesis>> ranked(lists.size());
        ParallelFor(lists.size(), workers, [&](size_t i) {
          try {
            ranked[i] = RescoreNBest(lists[i].hypotheses, lms.lm(), lms.vocab(), policy, rn.params);
          } catch (const SearchFailure& e) {
            throw SearchFailure(lists[i].id + ": " + e.what());
          }
        });
        std::string best, all;
        for (size_t i = 0; i < lists.size(); ++i) {
          const auto& hyps = lists[i].hypotheses;
          const auto& top = ranked[i].front();
          best += lists[i].id + "\t" + FormatDouble(top.f) + "\t" + Join(hyps[top.index].words) + "\n";
          for (size_t k = 0; k < ranked[i].size(); ++k) {
            all += lists[i].id + "\t" + std::to_string(k + 1) + "\t" + FormatDouble(ranked[i][k].f) + "\t" +
                   Join(hyps[ranked[i][k].index].words) + "\n";
          }
        }
        Emit(rn.output, best, *ctx.out);
        if (!rn.ranked.empty()) WriteFileAtomic(rn.ranked, all);
        WriteRunMeta(rn.output, "rescore-nbest", ctx.config,
                     {{"ngram", rn.lm.ngram_path}, {"slm", rn.lm.slm_path}});
      };
    });
  }

  // oracle-wer
  struct {
    std::string lattices, references, report, detail;
  } ow;
  {
    auto* sub = command("oracle-wer", "Lowest WER reachable in each lattice");
    sub->add_option("--lattices", ow.lattices, "Directory of .lat files")->required();
    sub->add_option("--references", ow.references, "Reference file: id words...")->required();
    sub->add_option("--report", ow.report, "Report (TSV)");
    sub->add_option("--detail", ow.detail, "Per-utterance oracle paths: id<TAB>errors<TAB>words");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        auto refs = LoadReferences(ow.references);
        auto files = LatticeFiles(ow.lattices);
        std::vector<OracleResult> results(files.size());
        std::vector<std::vector<std::string>> words(files.size());
        ParallelFor(files.size(), workers, [&](size_t i) {
          Lattice lat = ReadLatticeFile(files[i]);
          results[i] = OracleWer(lat, ReferenceFor(refs, UttId(files[i])));
          words[i] = PathWords(lat, results[i].path);
        });
        int64_t errors = 0, length = 0;
        std::string detail;
        for (size_t i = 0; i < files.size(); ++i) {
          errors += results[i].errors;
          length += results[i].reference_length;
          detail += UttId(files[i]) + "\t" + std::to_string(results[i].errors) + "\t" + Join(words[i]) + "\n";
        }
        Report r;
        r.Add("utterances", static_cast<int64_t>(files.size()));
        r.Add("errors", errors);
        r.Add("reference_words", length);
        r.Add("oracle_wer", static_cast<double>(errors) / static_cast<double>(length));
        Emit(ow.report, r.str(), *ctx.out);
        if (!ow.detail.empty()) WriteFileAtomic(ow.detail, detail);
        WriteRunMeta(ow.report, "oracle-wer", ctx.config, {});
      };
    });
  }

  // wer
  struct {
    std::string hyp, references, report, detail;
  } we;
  {
    auto* sub = command("wer", "Word error rate of a transcript file");
    sub->add_option("--hyp", we.hyp, "Transcripts: id<TAB>score<TAB>words")->required();
    sub->add_option("--references", we.references, "Reference file: id words...")->required();
    sub->add_option("--report", we.report, "Report (TSV)");
    sub->add_option("--detail", we.detail, "Per-utterance S/I/D counts (TSV)");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        auto scored = ScoreTranscripts(ReadTranscripts(we.hyp), LoadReferences(we.references));
        Emit(we.report, scored.report.str(), *ctx.out);
        if (!we.detail.empty()) WriteFileAtomic(we.detail, scored.detail);
        WriteRunMeta(we.report, "wer", ctx.config, {});
      };
    });
  }

  // sign-test
  struct {
    std::string baseline, system, references, report;
  } st;
  {
    auto* sub = command("sign-test", "Paired sign test between two transcript files");
    sub->add_option("--baseline", st.baseline, "Baseline transcripts")->required();
    sub->add_option("--system", st.system, "System transcripts")->required();
    sub->add_option("--references", st.references, "Reference file: id words...")->required();
    sub->add_option("--report", st.report, "Report (TSV)");
    sub->callback([&]() {
      action = [&](const RunContext& ctx) {
        auto refs = LoadReferences(st.references);
        auto base = ReadTranscripts(st.baseline);
        auto sys = ReadTranscripts(st.system);
        if (base.size() != sys.size()) throw DataError("baseline and system cover different utterances");
        for (size_t i = 0; i < base.size(); ++i) {
          if (base[i].id != sys[i].id) throw DataError("utterance order differs at " + base[i].id);
        }
        auto b = ScoreTranscripts(base, refs);
        auto s = ScoreTranscripts(sys, refs);
        SignTestResult t = SignTest(b.errors, s.errors);
        Report r;
        r.Add("utterances", static_cast<int64_t>(base.size()));
        r.Add("baseline_wer", b.total.wer());
        r.Add("system_wer", s.total.wer());
        r.Add("wins", t.wins);
        r.Add("losses", t.losses);
        r.Add("ties", t.ties);
        r.Add("p_value", t.p_value);
        if (!t.note.empty()) r.Add("note", t.note);
        Emit(st.report, r.str(), *ctx.out);
        WriteRunMeta(st.report, "sign-test", ctx.config, {});
      };
    });
  }

  // make-toy
  struct {
    std::string dir;
    ToyOptions toy;
  } mt;
  {
    auto* sub = command("make-toy", "Generate the synthetic toy corpus, treebank and lattices");
    sub->add_option("-o,--output-dir", mt.dir, "Output directory")->required();
    sub->add_option("--seed", mt.toy.seed, "Generator seed");
    sub->add_option("--train", mt.toy.train_sentences, "Training sentences");
    sub->add_option("--heldout", mt.toy.heldout_sentences, "Held-out sentences");
    sub->add_option("--test", mt.toy.test_sentences, "Test utterances");
    sub->add_option("--nbest", mt.toy.nbest, "Hypotheses per N-best list");
    sub->callback([&]() {
      action = [&](const RunContext&) { WriteToyData(GenerateToyData(mt.toy), mt.dir); };
    });
  }

  std::string section;
  for (size_t i = 1; i < args.size() && section.empty(); ++i) {
    for (const CLI::App* sub : app.get_subcommands({})) {
      if (sub->get_name() == args[i]) section = args[i];
    }
  }
  app.config_formatter(std::make_shared<FlatConfig>(section));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  RunContext ctx{&app, &out, &err, app.config_to_str(true, false)};
  try {
    if (!action) throw ConfigError("no command given");
    action(ctx);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SearchFailure& e) {
    err << "search failure: " << e.what() << "\n";
    return kExitSearch;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace slmtk
