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

#include "slmtk/lattice.h"

#include <algorithm>
#include <limits>
#include <queue>

namespace slmtk {

namespace {

std::string LineError(size_t line, const std::string& what) {
  return "lattice line " + std::to_string(line) + ": " + what;
}

}  // namespace

bool IsBoundaryWord(std::string_view word) {
  return word == Vocabulary::kBosString || word == Vocabulary::kEosString;
}

Lattice Lattice::Build(std::vector<double> times, std::vector<LatticeLink> links) {
  const int32_t n = static_cast<int32_t>(times.size());
  if (n < 2 || links.empty()) throw DataError("lattice needs at least two nodes and one link");
  for (double t : times) {
    if (!(t >= 0.0)) throw DataError("negative or undefined node time");
  }
  std::vector<int32_t> indeg(n, 0), outdeg(n, 0);
  for (size_t j = 0; j < links.size(); ++j) {
    const auto& l = links[j];
    if (l.start < 0 || l.start >= n || l.end < 0 || l.end >= n) {
      throw DataError("link " + std::to_string(j) + " refers to a missing node");
    }
    if (l.word.empty() || l.word == "!NULL" || l.word == "<eps>") {
      throw DataError("link " + std::to_string(j) + " has no word; epsilon links are not supported");
    }
    if (times[l.start] > times[l.end]) {
      throw DataError("link " + std::to_string(j) + " ends before it starts");
    }
    ++outdeg[l.start];
    ++indeg[l.end];
  }
  std::vector<int32_t> initials, finals;
  for (int32_t v = 0; v < n; ++v) {
    if (indeg[v] == 0 && outdeg[v] == 0) {
      throw DataError("node " + std::to_string(v) + " is dangling");
    }
    if (indeg[v] == 0) initials.push_back(v);
    if (outdeg[v] == 0) finals.push_back(v);
  }
  if (initials.empty() || finals.empty()) throw DataError("lattice contains a cycle");

  // Merge multiple initial/final nodes; merged nodes are dropped.
  if (initials.size() > 1 || finals.size() > 1) {
    std::vector<int32_t> remap(n, -1);
    std::vector<double> new_times;
    int32_t source = -1, sink = -1;
    auto min_time = [&](const std::vector<int32_t>& ids) {
      double t = std::numeric_limits<double>::infinity();
      for (int32_t v : ids) t = std::min(t, times[v]);
      return t;
    };
    auto max_time = [&](const std::vector<int32_t>& ids) {
      double t = 0.0;
      for (int32_t v : ids) t = std::max(t, times[v]);
      return t;
    };
    bool merge_initial = initials.size() > 1;
    bool merge_final = finals.size() > 1;
    if (merge_initial) {
      source = 0;
      new_times.push_back(min_time(initials));
    }
    for (int32_t v = 0; v < n; ++v) {
      bool dropped = (merge_initial && indeg[v] == 0) || (merge_final && outdeg[v] == 0);
      if (dropped) continue;
      remap[v] = static_cast<int32_t>(new_times.size());
      new_times.push_back(times[v]);
    }
    if (merge_final) {
      sink = static_cast<int32_t>(new_times.size());
      new_times.push_back(max_time(finals));
    }
    for (auto& l : links) {
      l.start = merge_initial && indeg[l.start] == 0 ? source : remap[l.start];
      l.end = merge_final && outdeg[l.end] == 0 ? sink : remap[l.end];
    }
    return Build(std::move(new_times), std::move(links));
  }

  Lattice lat;
  lat.times_ = std::move(times);
  lat.links_ = std::move(links);
  lat.out_.assign(n, {});
  lat.in_.assign(n, {});
  for (int32_t j = 0; j < lat.num_links(); ++j) {
    lat.out_[lat.links_[j].start].push_back(j);
    lat.in_[lat.links_[j].end].push_back(j);
  }
  lat.initial_ = initials[0];
  lat.final_ = finals[0];
  std::priority_queue<int32_t, std::vector<int32_t>, std::greater<>> ready;
  ready.push(lat.initial_);
  std::vector<int32_t> remaining = indeg;
  while (!ready.empty()) {
    int32_t v = ready.top();
    ready.pop();
    lat.topo_.push_back(v);
    for (int32_t j : lat.out_[v]) {
      if (--remaining[lat.links_[j].end] == 0) ready.push(lat.links_[j].end);
    }
  }
  if (static_cast<int32_t>(lat.topo_.size()) != n) throw DataError("lattice contains a cycle");
  return lat;
}

std::string Lattice::Serialize() const {
  std::string out = "N=" + std::to_string(num_nodes()) + " L=" + std::to_string(num_links()) + "\n";
  for (int32_t v = 0; v < num_nodes(); ++v) {
    out += "I=" + std::to_string(v) + " t=" + FormatDouble(times_[v]) + "\n";
  }
  for (int32_t j = 0; j < num_links(); ++j) {
    const auto& l = links_[j];
    out += "J=" + std::to_string(j) + " S=" + std::to_string(l.start) + " E=" +
           std::to_string(l.end) + " W=" + l.word + " a=" + FormatDouble(l.am) +
           " n=" + FormatDouble(l.lm) + "\n";
  }
  return out;
}

Lattice ParseLattice(std::string_view text) {
  int64_t num_nodes = -1, num_links = -1;
  std::vector<double> times;
  std::vector<LatticeLink> links;
  std::vector<char> node_seen, link_seen;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    auto fields = SplitWhitespace(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& f : fields) {
      size_t eq = f.find('=');
      if (eq == std::string::npos || eq == 0) throw DataError(LineError(line_no, "expected key=value, got '" + f + "'"));
      kv.emplace_back(f.substr(0, eq), f.substr(eq + 1));
    }
    auto get = [&](const char* key) -> const std::string& {
      for (const auto& [k, v] : kv) {
        if (k == key) return v;
      }
      throw DataError(LineError(line_no, std::string("missing field ") + key));
    };
    auto expect_keys = [&](std::initializer_list<const char*> keys) {
      if (kv.size() != keys.size()) throw DataError(LineError(line_no, "unexpected number of fields"));
      for (const char* k : keys) get(k);
    };
    try {
      const std::string& kind = kv[0].first;
      if (kind == "N") {
        if (num_nodes >= 0) throw DataError("duplicate header");
        expect_keys({"N", "L"});
        num_nodes = ParseInt(get("N"), "node count");
        num_links = ParseInt(get("L"), "link count");
        if (num_nodes < 0 || num_links < 0) throw DataError("negative count");
        times.assign(num_nodes, 0.0);
        links.assign(num_links, {});
        node_seen.assign(num_nodes, 0);
        link_seen.assign(num_links, 0);
      } else if (kind == "I") {
        if (num_nodes < 0) throw DataError("node before header");
        expect_keys({"I", "t"});
        int64_t id = ParseInt(get("I"), "node id");
        if (id < 0 || id >= num_nodes) throw DataError("node id out of range");
        if (node_seen[id]) throw DataError("duplicate node id");
        node_seen[id] = 1;
        times[id] = ParseDouble(get("t"), "time");
      } else if (kind == "J") {
        if (num_nodes < 0) throw DataError("link before header");
        expect_keys({"J", "S", "E", "W", "a", "n"});
        int64_t id = ParseInt(get("J"), "link id");
        if (id < 0 || id >= num_links) throw DataError("link id out of range");
        if (link_seen[id]) throw DataError("duplicate link id");
        link_seen[id] = 1;
        LatticeLink& l = links[id];
        int64_t s = ParseInt(get("S"), "start node");
        int64_t e = ParseInt(get("E"), "end node");
        if (s < 0 || s >= num_nodes || e < 0 || e >= num_nodes) throw DataError("link node out of range");
        l.start = static_cast<int32_t>(s);
        l.end = static_cast<int32_t>(e);
        l.word = get("W");
        l.am = ParseDouble(get("a"), "acoustic score");
        l.lm = ParseDouble(get("n"), "LM score");
      } else {
        throw DataError("unknown record " + kind);
      }
    } catch (const DataError& e) {
      std::string what = e.what();
      if (what.rfind("lattice line", 0) == 0) throw;
      throw DataError(LineError(line_no, what));
    }
  }
  if (num_nodes < 0) throw DataError("lattice: missing N= L= header");
  if (std::find(node_seen.begin(), node_seen.end(), 0) != node_seen.end()) {
    throw DataError("lattice: node ids are not dense");
  }
  if (std::find(link_seen.begin(), link_seen.end(), 0) != link_seen.end()) {
    throw DataError("lattice: link ids are not dense");
  }
  return Lattice::Build(std::move(times), std::move(links));
}

Lattice ReadLatticeFile(const std::string& path) {
  try {
    return ParseLattice(ReadFile(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<LatticePath> EnumeratePaths(const Lattice& lattice, size_t max_paths) {
  std::vector<LatticePath> out;
  LatticePath current;
  // Explicit DFS: (node, index of next out-link to try).
  std::vector<std::pair<int32_t, size_t>> stack{{lattice.initial(), 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node == lattice.final()) {
      if (out.size() == max_paths) {
        throw DataError("lattice has more than " + std::to_string(max_paths) + " paths");
      }
      out.push_back(current);
    }
    const auto& outs = lattice.out_links(node);
    if (next < outs.size()) {
      int32_t j = outs[next++];
      current.push_back(j);
      stack.push_back({lattice.link(j).end, 0});
    } else {
      stack.pop_back();
      if (!current.empty()) current.pop_back();
    }
  }
  return out;
}

std::vector<std::string> PathWords(const Lattice& lattice, const LatticePath& path) {
  std::vector<std::string> out;
  for (int32_t j : path) {
    const auto& w = lattice.link(j).word;
    if (!IsBoundaryWord(w)) out.push_back(w);
  }
  return out;
}

std::vector<WordId> LinkWordIds(const Lattice& lattice, const Vocabulary& vocab, OovPolicy policy) {
  std::vector<WordId> out;
  out.reserve(lattice.num_links());
  for (const auto& l : lattice.links()) {
    if (l.word == Vocabulary::kBosString) {
      out.push_back(Vocabulary::kBos);
    } else if (l.word == Vocabulary::kEosString) {
      out.push_back(Vocabulary::kEos);
    } else {
      out.push_back(vocab.MapWord(l.word, policy));
    }
  }
  return out;
}

OracleResult OracleWer(const Lattice& lattice, const std::vector<std::string>& reference) {
  if (reference.empty()) throw DataError("empty reference");
  const size_t m = reference.size();
  constexpr int64_t kInf = std::numeric_limits<int64_t>::max() / 4;
  // back[v][j]: link entering v (or -1 for a deletion step inside v) and the
  // reference position it came from.
  struct Back {
    int32_t link = -2;
    int32_t from = -1;
  };
  const int32_t n = lattice.num_nodes();
  std::vector<std::vector<int64_t>> cost(n, std::vector<int64_t>(m + 1, kInf));
  std::vector<std::vector<Back>> back(n, std::vector<Back>(m + 1));
  for (size_t j = 0; j <= m; ++j) {
    cost[lattice.initial()][j] = static_cast<int64_t>(j);
    back[lattice.initial()][j] = {-1, static_cast<int32_t>(j) - 1};
  }
  back[lattice.initial()][0] = {-2, -1};
  for (int32_t v : lattice.topological_order()) {
    if (v != lattice.initial()) {
      for (int32_t j : lattice.in_links(v)) {
        const auto& l = lattice.link(j);
        const auto& cu = cost[l.start];
        bool skip = IsBoundaryWord(l.word);
        for (size_t r = 0; r <= m; ++r) {
          int64_t best = kInf;
          int32_t from = -1;
          if (skip) {
            best = cu[r];
            from = static_cast<int32_t>(r);
          } else {
            if (cu[r] + 1 < best) {
              best = cu[r] + 1;
              from = static_cast<int32_t>(r);
            }
            if (r > 0) {
              int64_t c = cu[r - 1] + (l.word == reference[r - 1] ? 0 : 1);
              if (c < best) {
                best = c;
                from = static_cast<int32_t>(r) - 1;
              }
            }
          }
          if (best < cost[v][r]) {
            cost[v][r] = best;
            back[v][r] = {j, from};
          }
        }
      }
      for (size_t r = 1; r <= m; ++r) {
        if (cost[v][r - 1] + 1 < cost[v][r]) {
          cost[v][r] = cost[v][r - 1] + 1;
          back[v][r] = {-1, static_cast<int32_t>(r) - 1};
        }
      }
    }
  }
  OracleResult result;
  result.errors = cost[lattice.final()][m];
  result.reference_length = static_cast<int64_t>(m);
  result.wer = static_cast<double>(result.errors) / static_cast<double>(m);
  int32_t v = lattice.final();
  int32_t r = static_cast<int32_t>(m);
  while (!(v == lattice.initial() && r <= 0)) {
    const Back& b = back[v][r];
    if (b.link == -1) {
      r = b.from;
    } else if (b.link >= 0) {
      result.path.push_back(b.link);
      v = lattice.link(b.link).start;
      r = b.from;
    } else {
      break;
    }
  }
  std::reverse(result.path.begin(), result.path.end());
  return result;
}

}  // namespace slmtk
