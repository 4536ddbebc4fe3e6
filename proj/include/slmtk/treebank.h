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

#include <string>
#include <string_view>
#include <vector>

#include "slmtk/common.h"
#include "slmtk/vocabulary.h"

namespace slmtk {

// Node of a binary, head-annotated parse. Leaves carry (word, tag);
// internal nodes carry (headword, label) with the headword percolated from
// child `head_child`.
struct ParseNode {
  int32_t left = -1;
  int32_t right = -1;
  WordId word = 0;
  int32_t symbol = 0;  // tag id for leaves, label id for internal nodes
  int8_t head_child = -1;  // 0 = left, 1 = right, -1 for leaves

  bool is_leaf() const { return left < 0; }
  bool operator==(const ParseNode&) const = default;
};

struct AnnotatedParse {
  std::vector<ParseNode> nodes;
  int32_t root = -1;

  Sentence Leaves() const;
  std::vector<TagId> Tags() const;
  int32_t num_internal() const;
  bool operator==(const AnnotatedParse&) const = default;
};

// Throws DataError if the tree is not strictly binary, leaf order is broken,
// or any internal headword differs from its head child's headword.
void ValidateParse(const AnnotatedParse& parse);

// Tree read from a treebank line before interning into a vocabulary.
struct RawTree {
  std::string symbol;  // TAG for leaves, LABEL for internal nodes
  std::string word;    // leaf word or headword
  int head_child = -1;
  std::vector<RawTree> children;
};

// Parses one `(LABEL~head child child)` / `(TAG word)` record. The head
// may carry a `~left` or `~right` suffix when both children share the
// headword. Throws DataError (without line information) on malformed input.
RawTree ParseTreeLine(std::string_view line);

// Every non-blank line is one tree; errors are reported as
// "treebank line N: ...".
std::vector<RawTree> ReadTreebankText(std::string_view text);
std::vector<RawTree> ReadTreebankFile(const std::string& path);

void CollectWords(const RawTree& tree, std::vector<std::string>& out);

// Maps strings to ids. Tags and labels are added when `grow_symbols`,
// otherwise unknown ones are a DataError. Words follow `policy`.
AnnotatedParse InternTree(const RawTree& tree, Vocabulary& vocab, OovPolicy policy,
                          bool grow_symbols);

std::string FormatRawTree(const RawTree& tree);
std::string SerializeParse(const AnnotatedParse& parse, const Vocabulary& vocab);

// Fully right-branching parse; every leaf gets `tag`, every internal node
// `label` with the right child's headword.
AnnotatedParse RightBranchAnnotate(const Sentence& sentence, TagId tag, LabelId label);

}  // namespace slmtk
