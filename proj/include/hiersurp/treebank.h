#ifndef HIERSURP_TREEBANK_H_
#define HIERSURP_TREEBANK_H_

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hiersurp/common.h"

namespace hiersurp {

// Labeled constituency tree. A node without children is a terminal and its
// label is the surface string; every other node is a nonterminal.
struct Tree {
  std::string label;
  std::vector<Tree> children;

  static Tree leaf(std::string text) { return Tree{std::move(text), {}}; }
  static Tree node(std::string label, std::vector<Tree> children) {
    return Tree{std::move(label), std::move(children)};
  }

  bool is_terminal() const { return children.empty(); }

  friend bool operator==(const Tree&, const Tree&) = default;
};

class TreeParseError : public DataError {
 public:
  TreeParseError(const std::string& what, std::size_t line)
      : DataError(what + " at line " + std::to_string(line)), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class UnbalancedBrackets : public TreeParseError {
 public:
  explicit UnbalancedBrackets(std::size_t line)
      : TreeParseError("unbalanced brackets", line) {}
};

class EmptyLabel : public TreeParseError {
 public:
  explicit EmptyLabel(std::size_t line)
      : TreeParseError("missing constituent label", line) {}
};

// "(X)" - a constituent without children.
class EmptyConstituent : public TreeParseError {
 public:
  explicit EmptyConstituent(std::size_t line)
      : TreeParseError("constituent without children", line) {}
};

class NormalizedToEmpty : public DataError {
 public:
  NormalizedToEmpty() : DataError("tree yield is empty after normalization") {}
};

// Parses one tree per non-blank line. Line numbers in errors are 1-based.
std::vector<Tree> parse_bracketed(std::string_view text);

// Parses a single bracketed tree; `line` is used for error reporting only.
Tree parse_tree(std::string_view text, std::size_t line = 1);

std::string to_bracketed(const Tree& tree);

std::vector<std::string> yield_terminals(const Tree& tree);

std::size_t count_terminals(const Tree& tree);
std::size_t count_internal(const Tree& tree);

struct NormalizationConfig {
  std::string tag_delimiter = "-";
  std::set<std::string> trace_tokens = {"*T*", "*pro*", "*"};
};

// Deletes trace terminals and the nodes they leave empty, then strips
// function tags. Throws NormalizedToEmpty if nothing survives.
Tree normalize(const Tree& tree, const NormalizationConfig& config = {});

struct SourcedTree {
  std::string source = "default";
  Tree tree;
};

struct CorpusSplit {
  std::vector<SourcedTree> train;
  std::vector<SourcedTree> validation;
  std::vector<SourcedTree> test;
};

struct SplitRatios {
  double validation = 0.05;
  double test = 0.05;
};

// Per-source partition. Validation and test take floor(n * ratio) sentences
// each; the remainder goes to train. Partitions keep corpus order.
CorpusSplit split_corpus(const std::vector<SourcedTree>& trees,
                         std::uint64_t seed, const SplitRatios& ratios = {});

// Treebank file: one tree per line, optionally prefixed by "source<TAB>".
std::vector<SourcedTree> read_treebank(const std::string& path);
std::vector<SourcedTree> parse_treebank(std::string_view text);
void write_treebank(const std::string& path,
                    const std::vector<SourcedTree>& trees);

}  // namespace hiersurp

#endif  // HIERSURP_TREEBANK_H_
