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

#include "slmtk/astar.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

namespace slmtk {

void RescoreParams::Validate() const {
  if (!(lm_weight > 0.0)) throw ConfigError("lm_weight must be positive");
  if (!(log_ip >= 0.0)) throw ConfigError("log_ip must be non-negative");
  if (std::isnan(log_comp) || std::isnan(log_final)) throw ConfigError("log_comp/log_final must be numbers");
  if (stack_capacity < 1) throw ConfigError("stack_capacity must be at least 1");
}

SuffixBound::SuffixBound(const Lattice& lattice, const RescoreParams& params)
    : h_(lattice.num_nodes(), kLogZero),
      final_(lattice.final()),
      final_term_(params.lm_weight * params.log_final) {
  params.Validate();
  h_[final_] = 0.0;
  const auto& topo = lattice.topological_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    int32_t v = *it;
    if (v == final_) continue;
    for (int32_t j : lattice.out_links(v)) {
      const auto& l = lattice.link(j);
      double term = l.am + params.lm_weight * (l.lm + params.log_comp) - params.log_ip;
      h_[v] = std::max(h_[v], term + h_[l.end]);
    }
  }
}

double SuffixBound::operator()(int32_t node) const {
  return node == final_ ? 0.0 : h_.at(node) + final_term_;
}

LmLinkScorer::LmLinkScorer(const Lattice& lattice, const LanguageModel& lm,
                           std::vector<WordId> word_ids)
    : lattice_(lattice), lm_(lm), word_ids_(std::move(word_ids)) {
  if (static_cast<int32_t>(word_ids_.size()) != lattice_.num_links()) {
    throw std::logic_error("one word id per link expected");
  }
}

double LmLinkScorer::Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const {
  WordId w = word_ids_.at(link);
  if (w == Vocabulary::kBos) {
    if (next) *next = state;
    return 0.0;
  }
  return lm_.Score(state, w, next);
}

double FirstPassLinkScorer::Score(const LMStatePtr& state, int32_t link, LMStatePtr* next) const {
  if (next) *next = state;
  return lattice_.link(link).lm;
}

double PathScore(const Lattice& lattice, const LinkScorer& scorer, const LatticePath& path,
                 const RescoreParams& params) {
  LMStatePtr state = scorer.Start();
  double f = 0.0;
  for (int32_t j : path) {
    LMStatePtr next;
    double lm = scorer.Score(state, j, &next);
    f += lattice.link(j).am + params.lm_weight * lm - params.log_ip;
    state = std::move(next);
  }
  return f;
}

namespace {

struct Entry {
  double f = 0.0;
  double g = 0.0;
  int32_t node = 0;
  LatticePath links;
  LMStatePtr state;
};

// Best first: higher g, then longer prefix, then smaller link ids.
struct EntryOrder {
  bool operator()(const Entry& a, const Entry& b) const {
    if (a.g != b.g) return a.g > b.g;
    if (a.links.size() != b.links.size()) return a.links.size() > b.links.size();
    return a.links < b.links;
  }
};

}  // namespace

AStarResult AStarSearch(const Lattice& lattice, const LinkScorer& scorer, const RescoreParams& params,
                        const SuffixBound& bounds) {
  params.Validate();
  std::set<Entry, EntryOrder> stack;
  AStarResult result;
  auto& diag = result.diagnostics;
  stack.insert(Entry{0.0, bounds(lattice.initial()), lattice.initial(), {}, scorer.Start()});
  diag.max_stack = 1;
  while (!stack.empty()) {
    Entry top = std::move(stack.extract(stack.begin()).value());
    ++diag.pops;
    diag.popped_g.push_back(top.g);
    if (top.node == lattice.final()) {
      result.path = std::move(top.links);
      result.f = top.f;
      result.words = PathWords(lattice, result.path);
      return result;
    }
    for (int32_t j : lattice.out_links(top.node)) {
      const auto& l = lattice.link(j);
      Entry e;
      double lm = scorer.Score(top.state, j, &e.state);
      if (lm > l.lm + params.log_comp) ++diag.violations;
      e.f = top.f + l.am + params.lm_weight * lm - params.log_ip;
      e.node = l.end;
      e.g = e.f + bounds(e.node);
      e.links = top.links;
      e.links.push_back(j);
      ++diag.expansions;
      stack.insert(std::move(e));
      if (stack.size() > static_cast<size_t>(params.stack_capacity)) {
        stack.erase(std::prev(stack.end()));
        ++diag.evictions;
      }
      diag.max_stack = std::max(diag.max_stack, stack.size());
    }
  }
  throw SearchFailure("A* stack exhausted after " + std::to_string(diag.pops) + " pops, " +
                      std::to_string(diag.expansions) + " expansions, " +
                      std::to_string(diag.evictions) + " evictions");
}

AdmissibilityReport CheckAdmissibility(const Lattice& lattice, const LinkScorer& scorer,
                                       const RescoreParams& params,
                                       const AdmissibilityOptions& options) {
  AdmissibilityReport report;
  auto check = [&](const LatticePath& prefix, const LMStatePtr& state, LMStatePtr* next) {
    int32_t j = prefix.back();
    double exact = scorer.Score(state, j, next);
    double estimate = lattice.link(j).lm + params.log_comp;
    ++report.instances;
    if (estimate < exact) {
      ++report.violations;
      if (report.examples.size() < options.max_reported) {
        report.examples.push_back({prefix, exact, estimate});
      }
    }
  };
  if (options.samples == 0) {
    struct Frame {
      int32_t node;
      size_t next;
      LMStatePtr state;
    };
    LatticePath prefix;
    std::vector<Frame> stack{{lattice.initial(), 0, scorer.Start()}};
    while (!stack.empty()) {
      Frame& top = stack.back();
      const auto& outs = lattice.out_links(top.node);
      if (top.next < outs.size()) {
        int32_t j = outs[top.next++];
        prefix.push_back(j);
        LMStatePtr next;
        check(prefix, top.state, &next);
        stack.push_back({lattice.link(j).end, 0, std::move(next)});
      } else {
        stack.pop_back();
        if (!prefix.empty()) prefix.pop_back();
      }
    }
    return report;
  }
  std::mt19937_64 rng(options.seed);
  for (size_t s = 0; s < options.samples; ++s) {
    LatticePath prefix;
    LMStatePtr state = scorer.Start();
    int32_t v = lattice.initial();
    while (v != lattice.final()) {
      const auto& outs = lattice.out_links(v);
      int32_t j = outs[rng() % outs.size()];
      prefix.push_back(j);
      LMStatePtr next;
      check(prefix, state, &next);
      state = std::move(next);
      v = lattice.link(j).end;
    }
  }
  return report;
}

std::vector<RankedHypothesis> RescoreNBest(const std::vector<NBestHypothesis>& list,
                                           const LanguageModel& lm, const Vocabulary& vocab,
                                           OovPolicy policy, const RescoreParams& params) {
  params.Validate();
  if (list.empty()) throw DataError("empty N-best list");
  std::vector<RankedHypothesis> out;
  for (size_t i = 0; i < list.size(); ++i) {
    Sentence s = vocab.MapSentence(list[i].words, policy);
    double f = list[i].am;
    for (double lp : SentenceLogProbs(lm, s)) f += params.lm_weight * lp - params.log_ip;
    out.push_back({i, f});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedHypothesis& a, const RankedHypothesis& b) { return a.f > b.f; });
  return out;
}

Lattice NBestPrefixTree(const std::vector<NBestHypothesis>& list) {
  if (list.empty()) throw DataError("empty N-best list");
  std::vector<double> times{0.0};
  std::vector<LatticeLink> links;
  std::map<std::pair<int32_t, std::string>, int32_t> child;
  std::vector<int32_t> leaves;
  std::vector<int32_t> depth{0};
  for (const auto& h : list) {
    int32_t v = 0;
    for (const auto& w : h.words) {
      auto [it, inserted] = child.emplace(std::make_pair(v, w), 0);
      if (inserted) {
        it->second = static_cast<int32_t>(times.size());
        depth.push_back(depth[v] + 1);
        times.push_back(static_cast<double>(depth.back()));
        links.push_back({v, it->second, w, 0.0, 0.0});
      }
      v = it->second;
    }
    leaves.push_back(v);
  }
  int32_t final = static_cast<int32_t>(times.size());
  int32_t max_depth = *std::max_element(depth.begin(), depth.end());
  times.push_back(static_cast<double>(max_depth + 1));
  for (size_t i = 0; i < list.size(); ++i) {
    links.push_back({leaves[i], final, std::string(Vocabulary::kEosString), list[i].am, 0.0});
  }
  return Lattice::Build(std::move(times), std::move(links));
}

}  // namespace slmtk
