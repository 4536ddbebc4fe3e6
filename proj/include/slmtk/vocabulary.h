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
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slmtk/common.h"

namespace slmtk {

// Dense string <-> id bijection with an occurrence count per entry.
class SymbolTable {
 public:
  // Returns the existing id if `symbol` is already present.
  int32_t Add(std::string_view symbol, int64_t count = 0);
  std::optional<int32_t> Find(std::string_view symbol) const;
  const std::string& Symbol(int32_t id) const;
  int64_t Count(int32_t id) const { return counts_.at(id); }
  void AddCount(int32_t id, int64_t delta) { counts_.at(id) += delta; }
  int32_t size() const { return static_cast<int32_t>(symbols_.size()); }

  // One `id<TAB>string<TAB>count` line per entry.
  std::string Serialize() const;
  static SymbolTable Parse(std::string_view text);

  bool operator==(const SymbolTable& other) const {
    return symbols_ == other.symbols_ && counts_ == other.counts_;
  }

 private:
  std::vector<std::string> symbols_;
  std::vector<int64_t> counts_;
  std::unordered_map<std::string, int32_t> index_;
};

enum class OovPolicy { kClosed, kOpen };

// Sentence body; the begin and end markers are implicit.
struct Sentence {
  std::vector<WordId> tokens;
  size_t size() const { return tokens.size(); }
  bool operator==(const Sentence&) const = default;
};

// Word, POS tag and non-terminal label inventories. Ids 0..2 of the word
// table, 0..1 of the tag table and 0..1 of the label table are reserved.
class Vocabulary {
 public:
  static constexpr WordId kBos = 0;
  static constexpr WordId kEos = 1;
  static constexpr WordId kUnk = 2;
  static constexpr int32_t kNumReservedWords = 3;

  static constexpr TagId kBosTag = 0;
  static constexpr TagId kEosTag = 1;
  static constexpr int32_t kNumReservedTags = 2;

  // Root label joining <s> with the rest of the sentence, and the label
  // of the node attaching </s> to the last word.
  static constexpr LabelId kTopLabel = 0;
  static constexpr LabelId kEndLabel = 1;
  static constexpr int32_t kNumReservedLabels = 2;

  static constexpr std::string_view kBosString = "<s>";
  static constexpr std::string_view kEosString = "</s>";
  static constexpr std::string_view kUnkString = "<unk>";

  Vocabulary();

  const SymbolTable& words() const { return words_; }
  const SymbolTable& tags() const { return tags_; }
  const SymbolTable& labels() const { return labels_; }

  WordId AddWord(std::string_view word, int64_t count = 0);
  TagId AddTag(std::string_view tag, int64_t count = 0);
  LabelId AddLabel(std::string_view label, int64_t count = 0);

  int32_t num_words() const { return words_.size(); }
  int32_t num_tags() const { return tags_.size(); }
  int32_t num_labels() const { return labels_.size(); }

  // Closed policy throws DataError on unseen words; open maps them to <unk>.
  WordId MapWord(std::string_view word, OovPolicy policy) const;
  std::optional<TagId> FindTag(std::string_view tag) const { return tags_.Find(tag); }
  std::optional<LabelId> FindLabel(std::string_view label) const { return labels_.Find(label); }
  const std::string& Word(WordId id) const { return words_.Symbol(id); }
  const std::string& Tag(TagId id) const { return tags_.Symbol(id); }
  const std::string& Label(LabelId id) const { return labels_.Symbol(id); }

  Sentence MapSentence(const std::vector<std::string>& tokens, OovPolicy policy) const;
  std::vector<std::string> Words(const Sentence& sentence) const;

  // Checksum over the word strings only; two models can be interpolated
  // whenever their word checksums agree.
  uint64_t WordChecksum() const;
  uint64_t Checksum() const;

  // Three concatenated symbol tables behind `words N`/`tags N`/`labels N`
  // section headers.
  std::string Serialize() const;
  static Vocabulary Parse(std::string_view text);

  bool operator==(const Vocabulary& other) const {
    return words_ == other.words_ && tags_ == other.tags_ && labels_ == other.labels_;
  }

 private:
  SymbolTable words_;
  SymbolTable tags_;
  SymbolTable labels_;
};

// Keeps the `max_size` most frequent words with count >= min_count, in
// (count desc, string asc) order. Throws DataError on an empty corpus.
Vocabulary BuildVocabulary(const std::vector<std::vector<std::string>>& corpus,
                           int64_t max_size, int64_t min_count = 1);

// Whitespace-tokenized corpus, one sentence per non-blank line.
std::vector<std::vector<std::string>> ReadCorpusText(std::string_view text);
std::vector<std::vector<std::string>> ReadCorpusFile(const std::string& path);

void ValidateSentence(const Sentence& sentence);

}  // namespace slmtk
