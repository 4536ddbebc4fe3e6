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

#include "slmtk/di_model.h"

#include <algorithm>
#include <cmath>

namespace slmtk {

Context::Context(std::initializer_list<int64_t> init) {
  if (init.size() > kMaxSize) throw ConfigError("context too long");
  for (int64_t v : init) values[size++] = v;
}

Context Context::Prefix(int length) const {
  Context c;
  c.size = std::min(length, size);
  for (int i = 0; i < c.size; ++i) c.values[i] = values[i];
  return c;
}

bool Context::operator==(const Context& other) const {
  if (size != other.size) return false;
  for (int i = 0; i < size; ++i) {
    if (values[i] != other.values[i]) return false;
  }
  return true;
}

bool Context::operator<(const Context& other) const {
  return std::lexicographical_compare(values.begin(), values.begin() + size, other.values.begin(),
                                      other.values.begin() + other.size);
}

size_t ContextHash::operator()(const Context& c) const {
  uint64_t h = 0x9e3779b97f4a7c15ULL ^ static_cast<uint64_t>(c.size);
  for (int i = 0; i < c.size; ++i) {
    uint64_t x = static_cast<uint64_t>(c.values[i]) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    h ^= x;
  }
  return static_cast<size_t>(h);
}

std::vector<double> DIConfig::DefaultBucketEdges() {
  std::vector<double> edges;
  for (int i = 0; i <= 20; ++i) edges.push_back(std::ldexp(1.0, i));
  return edges;
}

void DIConfig::Validate() const {
  if (order_lengths.empty()) throw ConfigError("DI model needs at least one back-off order");
  if (static_cast<int>(order_lengths.size()) > Context::kMaxSize + 1) {
    throw ConfigError("too many back-off orders");
  }
  for (size_t i = 0; i < order_lengths.size(); ++i) {
    if (order_lengths[i] < 0 || order_lengths[i] > Context::kMaxSize) {
      throw ConfigError("bad back-off order length");
    }
    if (i > 0 && order_lengths[i] >= order_lengths[i - 1]) {
      throw ConfigError("back-off orders must strictly shrink the context");
    }
  }
  if (event_space_size <= 0) throw ConfigError("event space must be non-empty");
  if (bucket_edges.empty()) throw ConfigError("at least one bucket edge is required");
  for (size_t i = 1; i < bucket_edges.size(); ++i) {
    if (!(bucket_edges[i] > bucket_edges[i - 1])) throw ConfigError("bucket edges must increase");
  }
}

DIModel::DIModel(DIConfig config) : config_(std::move(config)) {
  config_.Validate();
  counts_.resize(config_.order_lengths.size());
}

void DIModel::Accumulate(const Context& context, int32_t event, double weight) {
  if (!(weight >= 0.0)) throw ConfigError("accumulate weight must be non-negative");
  if (event < 0 || event >= config_.event_space_size) {
    throw DataError("event " + std::to_string(event) + " outside the event space");
  }
  if (context.size < config_.order_lengths.front()) throw DataError("context too short for model");
  if (weight == 0.0) return;
  for (int o = 0; o < num_orders(); ++o) {
    ContextCounts& cc = counts_[o][context.Prefix(config_.order_lengths[o])];
    cc.total += weight;
    cc.events[event] += weight;
  }
}

void DIModel::AccumulateAll(std::span<const Observation> observations) {
  for (const auto& obs : observations) Accumulate(obs.context, obs.event, obs.weight);
}

void DIModel::RecomputeTotals() {
  for (auto& order : counts_) {
    for (auto& [ctx, cc] : order) {
      std::vector<std::pair<int32_t, double>> sorted(cc.events.begin(), cc.events.end());
      std::sort(sorted.begin(), sorted.end());
      double total = 0.0;
      for (const auto& [e, c] : sorted) total += c;
      cc.total = total;
    }
  }
}

int DIModel::CountBin(double count) const {
  const auto& edges = config_.bucket_edges;
  // Bin 0 holds fractional totals below the first edge.
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), count) - edges.begin());
}

int DIModel::Lookup(const Context& context,
                    std::array<const ContextCounts*, Context::kMaxSize + 1>& found) const {
  int deepest = num_orders();
  for (int o = num_orders() - 1; o >= 0; --o) {
    const auto& order = counts_[o];
    auto it = order.find(context.Prefix(config_.order_lengths[o]));
    if (it != order.end() && it->second.total > 0.0) {
      found[o] = &it->second;
      deepest = o;
    } else {
      found[o] = nullptr;
      // Coarser contexts are counted whenever finer ones are, so nothing
      // more specific can be seen either.
      for (int p = o - 1; p >= 0; --p) found[p] = nullptr;
      break;
    }
  }
  return deepest;
}

std::vector<double> DIModel::DefaultWeights(int deepest) const {
  int n = num_orders() - deepest + 1;
  return std::vector<double>(n, 1.0 / n);
}

std::vector<double> DIModel::Weights(BucketKey key) const {
  auto it = weights_.find(key);
  if (it != weights_.end()) return it->second;
  return DefaultWeights(key.first);
}

void DIModel::SetWeights(BucketKey key, std::vector<double> weights) {
  if (key.first < 0 || key.first > num_orders()) throw ConfigError("bad bucket order");
  if (static_cast<int>(weights.size()) != num_orders() - key.first + 1) {
    throw ConfigError("weight vector size does not match bucket");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
  weights_[key] = std::move(weights);
}

DIModel::BucketKey DIModel::BucketFor(const Context& context) const {
  std::array<const ContextCounts*, Context::kMaxSize + 1> found{};
  int d = Lookup(context, found);
  return {d, d < num_orders() ? CountBin(found[d]->total) : 0};
}

double DIModel::Prob(const Context& context, int32_t event) const {
  std::array<const ContextCounts*, Context::kMaxSize + 1> found{};
  int d = Lookup(context, found);
  BucketKey key{d, d < num_orders() ? CountBin(found[d]->total) : 0};
  auto wit = weights_.find(key);
  std::vector<double> fallback;
  const std::vector<double>* w = nullptr;
  if (wit != weights_.end()) {
    w = &wit->second;
  } else {
    fallback = DefaultWeights(d);
    w = &fallback;
  }
  double p = 0.0;
  for (int o = d; o < num_orders(); ++o) {
    const ContextCounts* cc = found[o];
    auto eit = cc->events.find(event);
    if (eit != cc->events.end()) p += (*w)[o - d] * eit->second / cc->total;
  }
  p += w->back() / config_.event_space_size;
  // Rounding can lift a mixture of certain events just above 1.
  return std::min(p, 1.0);
}

double DIModel::LogProb(const Context& context, int32_t event) const {
  double p = Prob(context, event);
  return p > 0.0 ? std::log(p) : kLogZero;
}

void DIModel::Distribution(const Context& context, std::span<double> out) const {
  if (static_cast<int32_t>(out.size()) != config_.event_space_size) {
    throw ConfigError("distribution buffer has the wrong size");
  }
  std::array<const ContextCounts*, Context::kMaxSize + 1> found{};
  int d = Lookup(context, found);
  std::vector<double> w = Weights({d, d < num_orders() ? CountBin(found[d]->total) : 0});
  std::fill(out.begin(), out.end(), w.back() / config_.event_space_size);
  for (int o = d; o < num_orders(); ++o) {
    const ContextCounts* cc = found[o];
    for (const auto& [e, c] : cc->events) out[e] += w[o - d] * c / cc->total;
  }
}

EMReport DIModel::EstimateWeights(std::span<const Observation> heldout,
                                  const EstimateOptions& options) {
  RecomputeTotals();
  struct Bucket {
    std::vector<double> weights;
    std::vector<double> obs_weight;
    std::vector<double> components;  // row-major, weights.size() per observation
  };
  std::map<BucketKey, Bucket> buckets;
  double total_weight = 0.0;
  for (const auto& obs : heldout) {
    if (obs.weight < 0.0) throw ConfigError("held-out weight must be non-negative");
    if (obs.weight == 0.0) continue;
    if (obs.event < 0 || obs.event >= config_.event_space_size) {
      throw DataError("held-out event outside the event space");
    }
    std::array<const ContextCounts*, Context::kMaxSize + 1> found{};
    int d = Lookup(obs.context, found);
    BucketKey key{d, d < num_orders() ? CountBin(found[d]->total) : 0};
    auto [it, inserted] = buckets.try_emplace(key);
    Bucket& b = it->second;
    if (inserted) b.weights = Weights(key);
    for (int o = d; o < num_orders(); ++o) {
      auto eit = found[o]->events.find(obs.event);
      b.components.push_back(eit == found[o]->events.end() ? 0.0 : eit->second / found[o]->total);
    }
    b.components.push_back(1.0 / config_.event_space_size);
    b.obs_weight.push_back(obs.weight);
    total_weight += obs.weight;
  }
  if (total_weight <= 0.0) throw DataError("held-out data is empty");

  auto loglik = [&]() {
    double ll = 0.0;
    for (const auto& [key, b] : buckets) {
      const size_t k = b.weights.size();
      for (size_t i = 0; i < b.obs_weight.size(); ++i) {
        double mix = 0.0;
        for (size_t j = 0; j < k; ++j) mix += b.weights[j] * b.components[i * k + j];
        ll += b.obs_weight[i] * std::log(mix);
      }
    }
    return ll / total_weight;
  };

  EMReport report;
  report.heldout_events = total_weight;
  report.loglik_per_event.push_back(loglik());
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (auto& [key, b] : buckets) {
      const size_t k = b.weights.size();
      if (k == 1) continue;
      std::vector<double> posterior(k, 0.0);
      double mass = 0.0;
      for (size_t i = 0; i < b.obs_weight.size(); ++i) {
        double mix = 0.0;
        for (size_t j = 0; j < k; ++j) mix += b.weights[j] * b.components[i * k + j];
        for (size_t j = 0; j < k; ++j) {
          posterior[j] += b.obs_weight[i] * b.weights[j] * b.components[i * k + j] / mix;
        }
        mass += b.obs_weight[i];
      }
      for (size_t j = 0; j < k; ++j) b.weights[j] = posterior[j] / mass;
    }
    ++report.iterations;
    double ll = loglik();
    double prev = report.loglik_per_event.back();
    report.loglik_per_event.push_back(ll);
    if (ll < prev - 1e-9 * std::max(1.0, std::abs(prev))) {
      throw std::logic_error("EM decreased the held-out log-likelihood");
    }
    if (ll - prev < options.tolerance) break;
  }
  for (auto& [key, b] : buckets) weights_[key] = b.weights;
  return report;
}

double DIModel::ContextCount(int order, const Context& context) const {
  const auto& m = counts_.at(order);
  auto it = m.find(context.Prefix(config_.order_lengths[order]));
  return it == m.end() ? 0.0 : it->second.total;
}

double DIModel::EventCount(int order, const Context& context, int32_t event) const {
  const auto& m = counts_.at(order);
  auto it = m.find(context.Prefix(config_.order_lengths[order]));
  if (it == m.end()) return 0.0;
  auto eit = it->second.events.find(event);
  return eit == it->second.events.end() ? 0.0 : eit->second;
}

std::string DIModel::Serialize(std::string_view role) const {
  std::string out = "dimodel 1 " + std::string(role) + "\n";
  out += "orders " + std::to_string(num_orders());
  for (int l : config_.order_lengths) out += " " + std::to_string(l);
  out += "\nevents " + std::to_string(config_.event_space_size) + "\n";
  out += "edges " + std::to_string(config_.bucket_edges.size());
  for (double e : config_.bucket_edges) out += " " + FormatDouble(e);
  out += "\nweights " + std::to_string(weights_.size()) + "\n";
  for (const auto& [key, w] : weights_) {
    out += std::to_string(key.first) + " " + std::to_string(key.second);
    for (double x : w) out += " " + FormatDouble(x);
    out += "\n";
  }
  for (int o = 0; o < num_orders(); ++o) {
    std::vector<const std::pair<const Context, ContextCounts>*> entries;
    size_t records = 0;
    for (const auto& entry : counts_[o]) {
      entries.push_back(&entry);
      records += entry.second.events.size();
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto* a, const auto* b) { return a->first < b->first; });
    out += "counts " + std::to_string(o) + " " + std::to_string(records) + "\n";
    for (const auto* entry : entries) {
      std::string prefix;
      for (int i = 0; i < entry->first.size; ++i) {
        prefix += std::to_string(entry->first.values[i]);
        prefix += ' ';
      }
      std::vector<std::pair<int32_t, double>> events(entry->second.events.begin(),
                                                     entry->second.events.end());
      std::sort(events.begin(), events.end());
      for (const auto& [e, c] : events) {
        out += prefix + std::to_string(e) + " " + FormatDouble(c) + "\n";
      }
    }
  }
  out += "end\n";
  return out;
}

namespace {

std::string_view NextLine(std::string_view text, size_t& pos) {
  if (pos >= text.size()) throw DataError("truncated DI model");
  size_t end = text.find('\n', pos);
  if (end == std::string_view::npos) end = text.size();
  std::string_view line = text.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

std::vector<std::string> ExpectFields(std::string_view line, std::string_view tag, size_t min) {
  auto f = SplitWhitespace(line);
  if (f.size() < min || f[0] != tag) {
    throw DataError("DI model: expected '" + std::string(tag) + "' line, got '" +
                    std::string(line) + "'");
  }
  return f;
}

}  // namespace

DIModel DIModel::Parse(std::string_view text, size_t& pos, std::string* role) {
  auto header = ExpectFields(NextLine(text, pos), "dimodel", 3);
  if (header[1] != "1") throw DataError("unsupported DI model version " + header[1]);
  if (role) *role = header[2];
  DIConfig config;
  auto orders = ExpectFields(NextLine(text, pos), "orders", 2);
  int64_t k = ParseInt(orders[1], "order count");
  if (static_cast<int64_t>(orders.size()) != k + 2) throw DataError("DI model: bad orders line");
  for (int64_t i = 0; i < k; ++i) {
    config.order_lengths.push_back(static_cast<int>(ParseInt(orders[i + 2], "order length")));
  }
  auto events = ExpectFields(NextLine(text, pos), "events", 2);
  config.event_space_size = static_cast<int32_t>(ParseInt(events[1], "event space"));
  auto edges = ExpectFields(NextLine(text, pos), "edges", 2);
  int64_t ne = ParseInt(edges[1], "edge count");
  if (static_cast<int64_t>(edges.size()) != ne + 2) throw DataError("DI model: bad edges line");
  config.bucket_edges.clear();
  for (int64_t i = 0; i < ne; ++i) config.bucket_edges.push_back(ParseDouble(edges[i + 2], "edge"));
  DIModel model(std::move(config));

  auto wl = ExpectFields(NextLine(text, pos), "weights", 2);
  int64_t nw = ParseInt(wl[1], "weight count");
  for (int64_t i = 0; i < nw; ++i) {
    auto f = SplitWhitespace(NextLine(text, pos));
    if (f.size() < 3) throw DataError("DI model: bad weight line");
    BucketKey key{static_cast<int>(ParseInt(f[0], "bucket order")),
                  static_cast<int>(ParseInt(f[1], "bucket bin"))};
    std::vector<double> w;
    for (size_t j = 2; j < f.size(); ++j) w.push_back(ParseDouble(f[j], "weight"));
    if (key.first < 0 || key.first > model.num_orders() ||
        static_cast<int>(w.size()) != model.num_orders() - key.first + 1) {
      throw DataError("DI model: weight vector does not match its bucket");
    }
    model.weights_[key] = std::move(w);
  }
  for (int o = 0; o < model.num_orders(); ++o) {
    auto cl = ExpectFields(NextLine(text, pos), "counts", 3);
    if (ParseInt(cl[1], "order") != o) throw DataError("DI model: count sections out of order");
    int64_t records = ParseInt(cl[2], "record count");
    const int len = model.config_.order_lengths[o];
    for (int64_t r = 0; r < records; ++r) {
      auto f = SplitWhitespace(NextLine(text, pos));
      if (static_cast<int>(f.size()) != len + 2) throw DataError("DI model: bad count record");
      Context ctx;
      ctx.size = len;
      for (int i = 0; i < len; ++i) ctx.values[i] = ParseInt(f[i], "context");
      int64_t event = ParseInt(f[len], "event");
      double c = ParseDouble(f[len + 1], "count");
      if (event < 0 || event >= model.config_.event_space_size || !(c > 0.0)) {
        throw DataError("DI model: bad count record");
      }
      ContextCounts& cc = model.counts_[o][ctx];
      cc.events[static_cast<int32_t>(event)] += c;
    }
  }
  if (SplitWhitespace(NextLine(text, pos)) != std::vector<std::string>{"end"}) {
    throw DataError("DI model: missing 'end'");
  }
  model.RecomputeTotals();
  return model;
}

bool DIModel::SameCounts(const DIModel& other, double tolerance) const {
  if (!(config_ == other.config_)) return false;
  for (int o = 0; o < num_orders(); ++o) {
    if (counts_[o].size() != other.counts_[o].size()) return false;
    for (const auto& [ctx, cc] : counts_[o]) {
      auto it = other.counts_[o].find(ctx);
      if (it == other.counts_[o].end()) return false;
      if (cc.events.size() != it->second.events.size()) return false;
      for (const auto& [e, c] : cc.events) {
        auto eit = it->second.events.find(e);
        if (eit == it->second.events.end() || std::abs(eit->second - c) > tolerance) return false;
      }
    }
  }
  return true;
}

bool DIModel::SameWeights(const DIModel& other, double tolerance) const {
  if (weights_.size() != other.weights_.size()) return false;
  for (const auto& [key, w] : weights_) {
    auto it = other.weights_.find(key);
    if (it == other.weights_.end() || it->second.size() != w.size()) return false;
    for (size_t i = 0; i < w.size(); ++i) {
      if (std::abs(w[i] - it->second[i]) > tolerance) return false;
    }
  }
  return true;
}

std::vector<bool> HeldOutMask(size_t n, const SplitOptions& options) {
  if (!(options.heldout_fraction > 0.0 && options.heldout_fraction < 1.0)) {
    throw ConfigError("held-out fraction must lie in (0, 1)");
  }
  std::vector<bool> mask(n, false);
  size_t count = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t x = options.seed * 0x9e3779b97f4a7c15ULL + i + 0x632be59bd9b4e019ULL;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    double u = static_cast<double>(x >> 11) * 0x1.0p-53;
    mask[i] = u < options.heldout_fraction;
    count += mask[i];
  }
  if (n >= 2 && count == 0) mask[n - 1] = true;
  if (n >= 2 && count == n) mask[0] = false;
  return mask;
}

DIModel TrainDeletedInterpolation(const DIConfig& config, const HeldOutSplit& split,
                                  const EstimateOptions& options, EMReport* report) {
  if (split.development.empty()) throw DataError("development data is empty");
  DIModel model(config);
  model.AccumulateAll(split.development);
  EMReport r = model.EstimateWeights(split.heldout, options);
  model.AccumulateAll(split.heldout);
  model.RecomputeTotals();
  if (report) *report = std::move(r);
  return model;
}

}  // namespace slmtk
