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

#include "slmtk/astar.h"
#include "slmtk/lattice.h"
#include "slmtk/treebank.h"

namespace slmtk {

struct ToyOptions {
  uint64_t seed = 7;
  int train_sentences = 1500;
  int heldout_sentences = 200;
  int test_sentences = 60;
  int nbest = 10;
  // Probability that a noun phrase takes a prepositional modifier.
  double pp_rate = 0.35;
  // Acoustic noise: confusions win a slot roughly this often.
  double confusion_rate = 0.3;
};

struct ToyUtterance {
  std::string id;
  std::vector<std::string> reference;
  Lattice lattice;
  std::vector<NBestHypothesis> nbest;
};

// Sentences from a small lexicalized grammar with number agreement between
// subject and verb across prepositional modifiers, plus confusion-network
// lattices and N-best lists for the test sentences.
struct ToyData {
  std::vector<RawTree> train_trees;
  std::vector<std::vector<std::string>> train;
  std::vector<std::vector<std::string>> heldout;
  std::vector<ToyUtterance> test;
};

ToyData GenerateToyData(const ToyOptions& options);

// Writes train.txt, train.trees, heldout.txt, test.txt (`id words`),
// test.nbest and lattices/<id>.lat under `dir`.
void WriteToyData(const ToyData& data, const std::string& dir);

// N-best file: `id<TAB>am<TAB>words` lines, hypotheses of one utterance
// adjacent.
struct NBestList {
  std::string id;
  std::vector<NBestHypothesis> hypotheses;
};
std::vector<NBestList> ParseNBestFile(std::string_view text);
std::string FormatNBestFile(const std::vector<NBestList>& lists);

// `id word word ...` reference lines.
std::vector<std::pair<std::string, std::vector<std::string>>> ParseReferenceFile(std::string_view text);

}  // namespace slmtk
