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

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slmtk/common.h"

namespace slmtk {

// Conditioning context of up to four integer components, ordered so that
// each back-off order keeps a prefix of it.
struct Context {
  static constexpr int kMaxSize = 4;
  std::array<int64_t, kMaxSize> values{};
  int size = 0;

  Context() = default;
  Context(std::initializer_list<int64_t> init);
  Context Prefix(int length) const;
  bool operator==(const Context& other) const;
  bool operator<(const Context& other) const;
};

struct ContextHash {
  size_t operator()(const Context& c) const;
};

struct Observation {
  Context context;
  int32_t event = 0;
  double weight = 1.0;
};

struct HeldOutSplit {
  std::vector<Observation> development;
  std::vector<Observation> heldout;
};

struct DIConfig {
  // Context prefix length used by each back-off order, most specific first,
  // strictly decreasing. {2, 1, 0} is a trigram chain.
  std::vector<int> order_lengths;
  int32_t event_space_size = 0;
  // Lower edges of the count bins used to tie mixture weights.
  std::vector<double> bucket_edges = DefaultBucketEdges();

  static std::vector<double> DefaultBucketEdges();
  void Validate() const;
  bool operator==(const DIConfig&) const = default;
};

struct EstimateOptions {
  int max_iterations = 100;
  double tolerance = 1e-7;  // nats per held-out event
};

struct EMReport {
  // Average held-out log-likelihood per event before the first update
  // and after each iteration.
  std::vector<double> loglik_per_event;
  int iterations = 0;
  double heldout_events = 0.0;
};

// Deleted-interpolation conditional distribution: a flat mixture of relative
// frequencies at successively coarser contexts plus a uniform floor. The
// mixture weights are tied by bucket, where a bucket is the pair (deepest
// order whose context has been seen, count bin of that context); orders more
// specific than the deepest seen one do not take part.
class DIModel {
 public:
  using BucketKey = std::pair<int, int>;  // (deepest seen order, count bin)

  DIModel() = default;
  explicit DIModel(DIConfig config);

  const DIConfig& config() const { return config_; }
  int num_orders() const { return static_cast<int>(config_.order_lengths.size()); }
  int32_t event_space_size() const { return config_.event_space_size; }

  // Adds `weight` to (context, event) at every back-off order. Throws
  // ConfigError on negative weight; zero weight leaves the model unchanged.
  void Accumulate(const Context& context, int32_t event, double weight = 1.0);
  void AccumulateAll(std::span<const Observation> observations);

  // EM over bucketed mixture weights on the held-out observations with the
  // counts currently in the model. Throws DataError on empty held-out data.
  EMReport EstimateWeights(std::span<const Observation> heldout,
                           const EstimateOptions& options = {});

  double Prob(const Context& context, int32_t event) const;
  double LogProb(const Context& context, int32_t event) const;
  // Probabilities of every event for one context; out.size() must equal the
  // event space size.
  void Distribution(const Context& context, std::span<double> out) const;

  // Mixture weights for a bucket: one per order from the bucket's deepest
  // order down, then the uniform weight.
  std::vector<double> Weights(BucketKey key) const;
  void SetWeights(BucketKey key, std::vector<double> weights);
  BucketKey BucketFor(const Context& context) const;
  const std::map<BucketKey, std::vector<double>>& estimated_weights() const { return weights_; }

  // Raw counts at one order, for inspection and tests.
  double ContextCount(int order, const Context& context) const;
  double EventCount(int order, const Context& context, int32_t event) const;
  size_t NumContexts(int order) const { return counts_.at(order).size(); }

  // Totals are kept equal to the event-ordered sum of their events so that
  // a trained model and its reloaded copy agree bit for bit.
  void RecomputeTotals();

  std::string Serialize(std::string_view role) const;
  // Parses one serialized model starting at `pos`; advances `pos` past it.
  static DIModel Parse(std::string_view text, size_t& pos, std::string* role = nullptr);

  bool SameCounts(const DIModel& other, double tolerance) const;
  bool SameWeights(const DIModel& other, double tolerance) const;

 private:
  struct ContextCounts {
    double total = 0.0;
    std::unordered_map<int32_t, double> events;
  };
  using OrderCounts = std::unordered_map<Context, ContextCounts, ContextHash>;

  int CountBin(double count) const;
  // Deepest seen order, or num_orders() if none; fills per-order entries.
  int Lookup(const Context& context, std::array<const ContextCounts*, Context::kMaxSize + 1>& found) const;
  std::vector<double> DefaultWeights(int deepest) const;

  DIConfig config_;
  std::vector<OrderCounts> counts_;
  std::map<BucketKey, std::vector<double>> weights_;
};

struct SplitOptions {
  double heldout_fraction = 0.1;
  uint64_t seed = 0;
};

// Deterministic per-sentence held-out assignment. At least one item lands on
// each side whenever n >= 2.
std::vector<bool> HeldOutMask(size_t n, const SplitOptions& options);

// Counts development data, estimates weights on held-out data, then folds
// the held-out counts in. Throws DataError if either side is empty.
DIModel TrainDeletedInterpolation(const DIConfig& config, const HeldOutSplit& split,
                                  const EstimateOptions& options = {},
                                  EMReport* report = nullptr);

}  // namespace slmtk
