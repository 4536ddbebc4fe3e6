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

#include "slmtk/vocabulary.h"

#include <algorithm>
#include <map>
#include <sstream>

namespace slmtk {

int32_t SymbolTable::Add(std::string_view symbol, int64_t count) {
  auto it = index_.find(std::string(symbol));
  if (it != index_.end()) {
    counts_[it->second] += count;
    return it->second;
  }
  int32_t id = size();
  symbols_.emplace_back(symbol);
  counts_.push_back(count);
  index_.emplace(std::string(symbol), id);
  return id;
}

std::optional<int32_t> SymbolTable::Find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& SymbolTable::Symbol(int32_t id) const {
  if (id < 0 || id >= size()) throw DataError("symbol id out of range: " + std::to_string(id));
  return symbols_[id];
}

std::string SymbolTable::Serialize() const {
  std::string out;
  for (int32_t i = 0; i < size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += symbols_[i];
    out += '\t';
    out += std::to_string(counts_[i]);
    out += '\n';
  }
  return out;
}

SymbolTable SymbolTable::Parse(std::string_view text) {
  SymbolTable table;
  int line_no = 0;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto fields = SplitChar(line, '\t');
    if (fields.size() != 3) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": expected 3 fields");
    }
    int64_t id = ParseInt(fields[0], "vocabulary id");
    if (id != table.size()) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": ids must be dense");
    }
    if (table.Find(fields[1])) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": duplicate symbol '" +
                      fields[1] + "'");
    }
    table.Add(fields[1], ParseInt(fields[2], "vocabulary count"));
  }
  return table;
}

Vocabulary::Vocabulary() {
  words_.Add(kBosString);
  words_.Add(kEosString);
  words_.Add(kUnkString);
  tags_.Add("<sb>");
  tags_.Add("<se>");
  labels_.Add("<top>");
  labels_.Add("<end>");
}

WordId Vocabulary::AddWord(std::string_view word, int64_t count) {
  return words_.Add(word, count);
}

TagId Vocabulary::AddTag(std::string_view tag, int64_t count) { return tags_.Add(tag, count); }

LabelId Vocabulary::AddLabel(std::string_view label, int64_t count) {
  return labels_.Add(label, count);
}

WordId Vocabulary::MapWord(std::string_view word, OovPolicy policy) const {
  if (auto id = words_.Find(word)) return *id;
  if (policy == OovPolicy::kOpen) return kUnk;
  throw DataError("word not in closed vocabulary: '" + std::string(word) + "'");
}

Sentence Vocabulary::MapSentence(const std::vector<std::string>& tokens,
                                 OovPolicy policy) const {
  Sentence s;
  s.tokens.reserve(tokens.size());
  for (const auto& t : tokens) s.tokens.push_back(MapWord(t, policy));
  ValidateSentence(s);
  return s;
}

std::vector<std::string> Vocabulary::Words(const Sentence& sentence) const {
  std::vector<std::string> out;
  out.reserve(sentence.size());
  for (WordId w : sentence.tokens) out.push_back(Word(w));
  return out;
}

uint64_t Vocabulary::WordChecksum() const {
  std::string all;
  for (int32_t i = 0; i < words_.size(); ++i) {
    all += words_.Symbol(i);
    all += '\n';
  }
  return Fnv1a64(all);
}

uint64_t Vocabulary::Checksum() const { return Fnv1a64(Serialize()); }

std::string Vocabulary::Serialize() const {
  std::string out;
  out += "words " + std::to_string(words_.size()) + "\n" + words_.Serialize();
  out += "tags " + std::to_string(tags_.size()) + "\n" + tags_.Serialize();
  out += "labels " + std::to_string(labels_.size()) + "\n" + labels_.Serialize();
  return out;
}

namespace {

// Reads `<name> <count>` followed by `count` table lines starting at `pos`.
SymbolTable ParseSection(std::string_view text, size_t& pos, std::string_view name) {
  size_t eol = text.find('\n', pos);
  if (eol == std::string_view::npos) throw DataError("truncated vocabulary section");
  auto header = SplitWhitespace(text.substr(pos, eol - pos));
  if (header.size() != 2 || header[0] != name) {
    throw DataError("expected vocabulary section '" + std::string(name) + "'");
  }
  int64_t n = ParseInt(header[1], "section size");
  pos = eol + 1;
  size_t begin = pos;
  for (int64_t i = 0; i < n; ++i) {
    size_t e = text.find('\n', pos);
    if (e == std::string_view::npos) throw DataError("truncated vocabulary section");
    pos = e + 1;
  }
  return SymbolTable::Parse(text.substr(begin, pos - begin));
}

}  // namespace

Vocabulary Vocabulary::Parse(std::string_view text) {
  Vocabulary v;
  size_t pos = 0;
  v.words_ = ParseSection(text, pos, "words");
  v.tags_ = ParseSection(text, pos, "tags");
  v.labels_ = ParseSection(text, pos, "labels");
  if (v.words_.size() < kNumReservedWords || v.words_.Symbol(kBos) != kBosString ||
      v.words_.Symbol(kEos) != kEosString || v.words_.Symbol(kUnk) != kUnkString) {
    throw DataError("vocabulary is missing reserved word entries");
  }
  if (v.tags_.size() < kNumReservedTags || v.labels_.size() < kNumReservedLabels) {
    throw DataError("vocabulary is missing reserved tag/label entries");
  }
  return v;
}

Vocabulary BuildVocabulary(const std::vector<std::vector<std::string>>& corpus,
                           int64_t max_size, int64_t min_count) {
  std::map<std::string, int64_t> counts;
  int64_t total = 0;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      ++total;
      ++counts[tok];
    }
  }
  if (total == 0) throw DataError("cannot build a vocabulary from an empty corpus");
  if (max_size < 0) throw ConfigError("vocabulary max_size must be non-negative");

  std::vector<std::pair<std::string, int64_t>> ranked;
  int64_t unk_count = 0;
  for (auto& [word, count] : counts) {
    if (word == Vocabulary::kBosString || word == Vocabulary::kEosString) {
      throw DataError("sentence marker '" + word + "' inside a corpus sentence");
    }
    if (word == Vocabulary::kUnkString) {
      unk_count += count;
      continue;
    }
    ranked.emplace_back(word, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  int64_t kept = 0;
  for (const auto& [word, count] : ranked) {
    if (kept < max_size && count >= min_count) {
      v.AddWord(word, count);
      ++kept;
    } else {
      unk_count += count;
    }
  }
  v.AddWord(Vocabulary::kUnkString, unk_count);
  v.AddWord(Vocabulary::kEosString, static_cast<int64_t>(corpus.size()));
  return v;
}

std::vector<std::vector<std::string>> ReadCorpusText(std::string_view text) {
  std::vector<std::vector<std::string>> out;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto toks = SplitWhitespace(text.substr(start, end - start));
    if (!toks.empty()) out.push_back(std::move(toks));
    start = end + 1;
  }
  return out;
}

std::vector<std::vector<std::string>> ReadCorpusFile(const std::string& path) {
  return ReadCorpusText(ReadFile(path));
}

void ValidateSentence(const Sentence& sentence) {
  if (sentence.tokens.empty()) throw DataError("empty sentence");
  for (WordId w : sentence.tokens) {
    if (w == Vocabulary::kBos || w == Vocabulary::kEos) {
      throw DataError("sentence marker inside a sentence body");
    }
    if (w < 0) throw DataError("negative word id");
  }
}

}  // namespace slmtk
