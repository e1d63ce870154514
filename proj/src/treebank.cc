#include "hiersurp/treebank.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace hiersurp {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

class BracketReader {
 public:
  BracketReader(std::string_view text, std::size_t line)
      : text_(text), line_(line) {}

  Tree read_root() {
    skip_space();
    if (!consume('(')) throw UnbalancedBrackets(line_);
    Tree tree = read_constituent();
    skip_space();
    // Anything after the root closes is a second tree or a stray bracket.
    if (pos_ != text_.size()) throw UnbalancedBrackets(line_);
    return tree;
  }

 private:
  // Called just after '('.
  Tree read_constituent() {
    skip_space();
    if (at_end()) throw UnbalancedBrackets(line_);
    if (peek() == '(' || peek() == ')') throw EmptyLabel(line_);
    Tree node{read_symbol(), {}};
    for (;;) {
      skip_space();
      if (at_end()) throw UnbalancedBrackets(line_);
      const char c = peek();
      if (c == ')') {
        ++pos_;
        break;
      }
      if (c == '(') {
        ++pos_;
        node.children.push_back(read_constituent());
      } else {
        node.children.push_back(Tree::leaf(read_symbol()));
      }
    }
    if (node.children.empty()) throw EmptyConstituent(line_);
    return node;
  }

  std::string read_symbol() {
    const std::size_t start = pos_;
    while (!at_end() && !is_space(peek()) && peek() != '(' && peek() != ')') {
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (!at_end() && is_space(peek())) ++pos_;
  }
  bool consume(char c) {
    if (!at_end() && peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  std::string_view text_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

void append_bracketed(const Tree& t, std::string& out) {
  if (t.is_terminal()) {
    out += t.label;
    return;
  }
  out += '(';
  out += t.label;
  for (const Tree& c : t.children) {
    out += ' ';
    append_bracketed(c, out);
  }
  out += ')';
}

void collect_yield(const Tree& t, std::vector<std::string>& out) {
  if (t.is_terminal()) {
    out.push_back(t.label);
    return;
  }
  for (const Tree& c : t.children) collect_yield(c, out);
}

bool is_trace(const std::string& token, const NormalizationConfig& config) {
  if (config.trace_tokens.count(token)) return true;
  // Indexed traces such as "*T*-1".
  const std::size_t cut = token.rfind(config.tag_delimiter);
  if (cut == std::string::npos || cut == 0 || config.tag_delimiter.empty()) {
    return false;
  }
  const std::string index = token.substr(cut + config.tag_delimiter.size());
  if (index.empty() ||
      !std::all_of(index.begin(), index.end(),
                   [](unsigned char ch) { return std::isdigit(ch); })) {
    return false;
  }
  return config.trace_tokens.count(token.substr(0, cut)) > 0;
}

std::string strip_function_tag(const std::string& label,
                               const std::string& delimiter) {
  if (delimiter.empty()) return label;
  // Labels that begin with the delimiter (e.g. "-NONE-") are kept whole.
  const std::size_t cut = label.find(delimiter, 1);
  if (cut == std::string::npos || label.rfind(delimiter, 0) == 0) return label;
  return label.substr(0, cut);
}

// Returns false when the subtree vanishes.
bool normalize_into(const Tree& in, const NormalizationConfig& config,
                    Tree& out) {
  if (in.is_terminal()) {
    if (is_trace(in.label, config)) return false;
    out = in;
    return true;
  }
  out.label = strip_function_tag(in.label, config.tag_delimiter);
  out.children.clear();
  for (const Tree& c : in.children) {
    Tree kept;
    if (normalize_into(c, config, kept)) out.children.push_back(std::move(kept));
  }
  return !out.children.empty();
}

}  // namespace

Tree parse_tree(std::string_view text, std::size_t line) {
  return BracketReader(text, line).read_root();
}

std::vector<Tree> parse_bracketed(std::string_view text) {
  std::vector<Tree> trees;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(start, end - start);
    if (!is_blank(line)) trees.push_back(parse_tree(line, line_no));
    start = end + 1;
  }
  return trees;
}

std::string to_bracketed(const Tree& tree) {
  std::string out;
  append_bracketed(tree, out);
  return out;
}

std::vector<std::string> yield_terminals(const Tree& tree) {
  std::vector<std::string> out;
  collect_yield(tree, out);
  return out;
}

std::size_t count_terminals(const Tree& tree) {
  if (tree.is_terminal()) return 1;
  std::size_t n = 0;
  for (const Tree& c : tree.children) n += count_terminals(c);
  return n;
}

std::size_t count_internal(const Tree& tree) {
  if (tree.is_terminal()) return 0;
  std::size_t n = 1;
  for (const Tree& c : tree.children) n += count_internal(c);
  return n;
}

Tree normalize(const Tree& tree, const NormalizationConfig& config) {
  Tree out;
  if (!normalize_into(tree, config, out)) throw NormalizedToEmpty();
  return out;
}

CorpusSplit split_corpus(const std::vector<SourcedTree>& trees,
                         std::uint64_t seed, const SplitRatios& ratios) {
  // Sources in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    auto [it, inserted] = by_source.try_emplace(trees[i].source);
    if (inserted) order.push_back(trees[i].source);
    it->second.push_back(i);
  }

  // 0 = train, 1 = validation, 2 = test
  std::vector<int> assignment(trees.size(), 0);
  for (std::size_t s = 0; s < order.size(); ++s) {
    std::vector<std::size_t> idx = by_source[order[s]];
    Rng rng(mix_seed(seed, s));
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[rng.index(i)]);
    }
    const auto n = static_cast<double>(idx.size());
    const auto n_valid = static_cast<std::size_t>(n * ratios.validation + 1e-9);
    const auto n_test = static_cast<std::size_t>(n * ratios.test + 1e-9);
    for (std::size_t k = 0; k < n_valid; ++k) assignment[idx[k]] = 1;
    for (std::size_t k = n_valid; k < n_valid + n_test; ++k) {
      assignment[idx[k]] = 2;
    }
  }

  CorpusSplit split;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    switch (assignment[i]) {
      case 0: split.train.push_back(trees[i]); break;
      case 1: split.validation.push_back(trees[i]); break;
      default: split.test.push_back(trees[i]); break;
    }
  }
  return split;
}

std::vector<SourcedTree> parse_treebank(std::string_view text) {
  std::vector<SourcedTree> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (is_blank(line)) continue;
    SourcedTree entry;
    const std::size_t tab = line.find('\t');
    if (tab != std::string_view::npos) {
      entry.source = std::string(line.substr(0, tab));
      line = line.substr(tab + 1);
    }
    entry.tree = parse_tree(line, line_no);
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<SourcedTree> read_treebank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open treebank " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_treebank(buf.str());
}

void write_treebank(const std::string& path,
                    const std::vector<SourcedTree>& trees) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write treebank " + path);
  for (const SourcedTree& t : trees) {
    out << t.source << '\t' << to_bracketed(t.tree) << '\n';
  }
}

}  // namespace hiersurp
