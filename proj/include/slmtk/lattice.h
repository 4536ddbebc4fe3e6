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
#include <string_view>
#include <vector>

#include "slmtk/common.h"
#include "slmtk/vocabulary.h"

namespace slmtk {

struct LatticeLink {
  int32_t start = 0;
  int32_t end = 0;
  std::string word;
  double am = 0.0;  // acoustic log-likelihood
  double lm = 0.0;  // first-pass LM log-probability
  bool operator==(const LatticeLink&) const = default;
};

// Word lattice: an acyclic graph with one initial and one final node in
// which every node lies on a complete path. Links leaving the initial node
// come first in topological order; ties are broken by node id.
class Lattice {
 public:
  Lattice() = default;

  // Validates and indexes. Several initial (final) nodes are merged into a
  // new one by moving their links onto it; the result is renumbered with the
  // new initial node first and the new final node last.
  static Lattice Build(std::vector<double> times, std::vector<LatticeLink> links);

  int32_t num_nodes() const { return static_cast<int32_t>(times_.size()); }
  int32_t num_links() const { return static_cast<int32_t>(links_.size()); }
  int32_t initial() const { return initial_; }
  int32_t final() const { return final_; }
  double time(int32_t node) const { return times_.at(node); }
  const LatticeLink& link(int32_t id) const { return links_.at(id); }
  const std::vector<LatticeLink>& links() const { return links_; }
  const std::vector<int32_t>& out_links(int32_t node) const { return out_.at(node); }
  const std::vector<int32_t>& in_links(int32_t node) const { return in_.at(node); }
  const std::vector<int32_t>& topological_order() const { return topo_; }

  std::string Serialize() const;
  bool operator==(const Lattice& other) const {
    return times_ == other.times_ && links_ == other.links_;
  }

 private:
  std::vector<double> times_;
  std::vector<LatticeLink> links_;
  std::vector<std::vector<int32_t>> out_;
  std::vector<std::vector<int32_t>> in_;
  std::vector<int32_t> topo_;
  int32_t initial_ = -1;
  int32_t final_ = -1;
};

// Reads the `N= L=` / `I= t=` / `J= S= E= W= a= n=` text format. Errors name
// the offending line.
Lattice ParseLattice(std::string_view text);
Lattice ReadLatticeFile(const std::string& path);

// True for <s> and </s>, which carry no word for scoring purposes.
bool IsBoundaryWord(std::string_view word);

using LatticePath = std::vector<int32_t>;  // link ids from the initial node

// Every complete path in depth-first, link-id order. Throws DataError when
// there are more than `max_paths`.
std::vector<LatticePath> EnumeratePaths(const Lattice& lattice, size_t max_paths);

// Non-boundary words along a path.
std::vector<std::string> PathWords(const Lattice& lattice, const LatticePath& path);

// Word ids of every link under `vocab`; boundary words map to <s>/</s>.
std::vector<WordId> LinkWordIds(const Lattice& lattice, const Vocabulary& vocab, OovPolicy policy);

struct OracleResult {
  int64_t errors = 0;
  int64_t reference_length = 0;
  double wer = 0.0;
  LatticePath path;
};

// Lowest edit distance between any complete path and `reference`.
OracleResult OracleWer(const Lattice& lattice, const std::vector<std::string>& reference);

}  // namespace slmtk
