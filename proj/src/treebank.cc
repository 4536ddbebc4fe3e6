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

#include "slmtk/treebank.h"

#include <functional>

namespace slmtk {

Sentence AnnotatedParse::Leaves() const {
  Sentence s;
  std::function<void(int32_t)> walk = [&](int32_t i) {
    const ParseNode& n = nodes.at(i);
    if (n.is_leaf()) {
      s.tokens.push_back(n.word);
      return;
    }
    walk(n.left);
    walk(n.right);
  };
  if (root >= 0) walk(root);
  return s;
}

std::vector<TagId> AnnotatedParse::Tags() const {
  std::vector<TagId> tags;
  std::function<void(int32_t)> walk = [&](int32_t i) {
    const ParseNode& n = nodes.at(i);
    if (n.is_leaf()) {
      tags.push_back(n.symbol);
      return;
    }
    walk(n.left);
    walk(n.right);
  };
  if (root >= 0) walk(root);
  return tags;
}

int32_t AnnotatedParse::num_internal() const {
  int32_t n = 0;
  for (const auto& node : nodes) n += node.is_leaf() ? 0 : 1;
  return n;
}

void ValidateParse(const AnnotatedParse& parse) {
  if (parse.root < 0 || parse.root >= static_cast<int32_t>(parse.nodes.size())) {
    throw DataError("parse has no root");
  }
  std::vector<int> seen(parse.nodes.size(), 0);
  std::function<void(int32_t)> walk = [&](int32_t i) {
    if (i < 0 || i >= static_cast<int32_t>(parse.nodes.size())) {
      throw DataError("parse child index out of range");
    }
    if (seen[i]++) throw DataError("parse node reached twice");
    const ParseNode& n = parse.nodes[i];
    if (n.is_leaf()) {
      if (n.right >= 0 || n.head_child != -1) throw DataError("malformed leaf");
      return;
    }
    if (n.right < 0) throw DataError("internal node is not binary");
    if (n.head_child != 0 && n.head_child != 1) throw DataError("internal node lacks a head child");
    walk(n.left);
    walk(n.right);
    int32_t head = n.head_child == 0 ? n.left : n.right;
    if (parse.nodes[head].word != n.word) {
      throw DataError("headword does not match the head child");
    }
  };
  walk(parse.root);
  for (int s : seen) {
    if (s == 0) throw DataError("parse contains unreachable nodes");
  }
}

namespace {

class TreeLexer {
 public:
  explicit TreeLexer(std::string_view text) : text_(text) {}

  // Next token: "(", ")" or an atom; empty at end of input.
  std::string_view Next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) return {};
    if (text_[pos_] == '(' || text_[pos_] == ')') return text_.substr(pos_++, 1);
    size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')') {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::string_view Peek() {
    size_t saved = pos_;
    auto t = Next();
    pos_ = saved;
    return t;
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
};

RawTree ParseNodeTokens(TreeLexer& lex) {
  if (lex.Next() != "(") throw DataError("expected '('");
  std::string_view head = lex.Next();
  if (head.empty() || head == "(" || head == ")") throw DataError("missing node symbol");
  RawTree tree;
  size_t tilde = head.find('~');
  if (tilde == std::string_view::npos) {
    // Leaf: (TAG word)
    tree.symbol = std::string(head);
    std::string_view word = lex.Next();
    if (word.empty()) throw DataError("unbalanced brackets");
    if (word == "(") throw DataError("leaf '" + tree.symbol + "' has a subtree; internal nodes need LABEL~head");
    if (word == ")") throw DataError("leaf '" + tree.symbol + "' has no word");
    if (word.find('~') != std::string_view::npos) throw DataError("'~' is reserved");
    tree.word = std::string(word);
    std::string_view close = lex.Next();
    if (close.empty()) throw DataError("unbalanced brackets");
    if (close != ")") throw DataError("leaf '" + tree.symbol + "' has more than one word");
    return tree;
  }
  tree.symbol = std::string(head.substr(0, tilde));
  std::string_view rest = head.substr(tilde + 1);
  int forced_head = -1;
  size_t tilde2 = rest.find('~');
  if (tilde2 != std::string_view::npos) {
    std::string_view dir = rest.substr(tilde2 + 1);
    if (dir == "left") {
      forced_head = 0;
    } else if (dir == "right") {
      forced_head = 1;
    } else {
      throw DataError("bad head direction suffix '" + std::string(dir) + "'");
    }
    rest = rest.substr(0, tilde2);
  }
  if (tree.symbol.empty() || rest.empty()) throw DataError("malformed LABEL~head '" + std::string(head) + "'");
  tree.word = std::string(rest);
  while (true) {
    std::string_view t = lex.Peek();
    if (t.empty()) throw DataError("unbalanced brackets");
    if (t == ")") {
      lex.Next();
      break;
    }
    if (t != "(") throw DataError("bare word '" + std::string(t) + "' inside node " + tree.symbol);
    tree.children.push_back(ParseNodeTokens(lex));
  }
  if (tree.children.size() != 2) {
    throw DataError("node " + tree.symbol + " has " + std::to_string(tree.children.size()) +
                    " children; only binary nodes are allowed");
  }
  bool left_match = tree.children[0].word == tree.word;
  bool right_match = tree.children[1].word == tree.word;
  if (forced_head >= 0) {
    if (!(forced_head == 0 ? left_match : right_match)) {
      throw DataError("head '" + tree.word + "' does not match the marked child of " + tree.symbol);
    }
    tree.head_child = forced_head;
  } else if (left_match && right_match) {
    throw DataError("head '" + tree.word + "' matches both children of " + tree.symbol +
                    "; mark it with ~left or ~right");
  } else if (left_match) {
    tree.head_child = 0;
  } else if (right_match) {
    tree.head_child = 1;
  } else {
    throw DataError("head '" + tree.word + "' matches no child of " + tree.symbol);
  }
  return tree;
}

}  // namespace

RawTree ParseTreeLine(std::string_view line) {
  TreeLexer lex(line);
  RawTree tree = ParseNodeTokens(lex);
  if (!lex.Next().empty()) throw DataError("trailing tokens after tree (unbalanced brackets)");
  return tree;
}

std::vector<RawTree> ReadTreebankText(std::string_view text) {
  std::vector<RawTree> out;
  size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (SplitWhitespace(line).empty()) continue;
    try {
      out.push_back(ParseTreeLine(line));
    } catch (const DataError& e) {
      throw DataError("treebank line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<RawTree> ReadTreebankFile(const std::string& path) {
  return ReadTreebankText(ReadFile(path));
}

void CollectWords(const RawTree& tree, std::vector<std::string>& out) {
  if (tree.children.empty()) {
    out.push_back(tree.word);
    return;
  }
  for (const auto& c : tree.children) CollectWords(c, out);
}

namespace {

int32_t InternNode(const RawTree& t, Vocabulary& vocab, OovPolicy policy, bool grow,
                   AnnotatedParse& parse) {
  ParseNode node;
  if (t.children.empty()) {
    node.word = vocab.MapWord(t.word, policy);
    if (node.word == Vocabulary::kBos || node.word == Vocabulary::kEos) {
      throw DataError("sentence marker used as a treebank leaf");
    }
    auto tag = vocab.FindTag(t.symbol);
    if (tag && *tag < Vocabulary::kNumReservedTags) throw DataError("reserved tag '" + t.symbol + "'");
    if (!tag) {
      if (!grow) throw DataError("unknown tag '" + t.symbol + "'");
      tag = vocab.AddTag(t.symbol);
    }
    node.symbol = *tag;
  } else {
    auto label = vocab.FindLabel(t.symbol);
    if (label && *label < Vocabulary::kNumReservedLabels) {
      throw DataError("reserved label '" + t.symbol + "'");
    }
    if (!label) {
      if (!grow) throw DataError("unknown label '" + t.symbol + "'");
      label = vocab.AddLabel(t.symbol);
    }
    node.symbol = *label;
    node.head_child = static_cast<int8_t>(t.head_child);
    node.left = InternNode(t.children[0], vocab, policy, grow, parse);
    node.right = InternNode(t.children[1], vocab, policy, grow, parse);
    node.word = parse.nodes[t.head_child == 0 ? node.left : node.right].word;
  }
  parse.nodes.push_back(node);
  return static_cast<int32_t>(parse.nodes.size()) - 1;
}

void SerializeNode(const AnnotatedParse& parse, int32_t i, const Vocabulary& vocab,
                   std::string& out) {
  const ParseNode& n = parse.nodes[i];
  out += '(';
  if (n.is_leaf()) {
    out += vocab.Tag(n.symbol);
    out += ' ';
    out += vocab.Word(n.word);
  } else {
    out += vocab.Label(n.symbol);
    out += '~';
    out += vocab.Word(n.word);
    if (parse.nodes[n.left].word == parse.nodes[n.right].word) {
      out += n.head_child == 0 ? "~left" : "~right";
    }
    out += ' ';
    SerializeNode(parse, n.left, vocab, out);
    out += ' ';
    SerializeNode(parse, n.right, vocab, out);
  }
  out += ')';
}

void FormatRawNode(const RawTree& t, std::string& out) {
  out += '(';
  out += t.symbol;
  if (t.children.empty()) {
    out += ' ';
    out += t.word;
  } else {
    out += '~';
    out += t.word;
    if (t.children.size() == 2 && t.children[0].word == t.children[1].word) {
      out += t.head_child == 0 ? "~left" : "~right";
    }
    for (const auto& c : t.children) {
      out += ' ';
      FormatRawNode(c, out);
    }
  }
  out += ')';
}

}  // namespace

std::string FormatRawTree(const RawTree& tree) {
  std::string out;
  FormatRawNode(tree, out);
  return out;
}

AnnotatedParse InternTree(const RawTree& tree, Vocabulary& vocab, OovPolicy policy,
                          bool grow_symbols) {
  AnnotatedParse parse;
  parse.root = InternNode(tree, vocab, policy, grow_symbols, parse);
  return parse;
}

std::string SerializeParse(const AnnotatedParse& parse, const Vocabulary& vocab) {
  std::string out;
  SerializeNode(parse, parse.root, vocab, out);
  return out;
}

AnnotatedParse RightBranchAnnotate(const Sentence& sentence, TagId tag, LabelId label) {
  ValidateSentence(sentence);
  AnnotatedParse parse;
  const int n = static_cast<int>(sentence.size());
  ParseNode last;
  last.word = sentence.tokens[n - 1];
  last.symbol = tag;
  parse.nodes.push_back(last);
  int32_t spine = 0;
  for (int i = n - 2; i >= 0; --i) {
    ParseNode leaf;
    leaf.word = sentence.tokens[i];
    leaf.symbol = tag;
    parse.nodes.push_back(leaf);
    ParseNode inner;
    inner.left = static_cast<int32_t>(parse.nodes.size()) - 1;
    inner.right = spine;
    inner.head_child = 1;
    inner.word = parse.nodes[spine].word;
    inner.symbol = label;
    parse.nodes.push_back(inner);
    spine = static_cast<int32_t>(parse.nodes.size()) - 1;
  }
  parse.root = spine;
  return parse;
}

}  // namespace slmtk
