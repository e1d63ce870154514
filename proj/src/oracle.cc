#include "hiersurp/oracle.h"

#include <charconv>
#include <sstream>

namespace hiersurp {
namespace {

constexpr int kUnreachable = 1 << 28;

bool is_complete(ElemKind k) {
  return k == ElemKind::kTerminal || k == ElemKind::kConstituent;
}

// Fewest actions that complete the derivation after taking `kind` from `s`.
int min_completion_after(const ShapeSummary& s, ActionKind kind,
                         Strategy strategy) {
  const int r = s.sentence_length - s.words_consumed;
  const int o = s.open_count;
  const bool td = strategy == Strategy::kTopDown;
  switch (kind) {
    case ActionKind::kGen: {
      const int r2 = r - 1;
      if (o == 0) {
        if (td) return kUnreachable;
        // Left corner: a lone word at the bottom still needs a parent.
        return r2 == 0 ? 2 : r2 + 2;
      }
      return r2 + o;
    }
    case ActionKind::kOpen:
      if (td && r == 0) return kUnreachable;
      return r + o + 1;
    case ActionKind::kReduce: {
      const int o2 = o - 1;
      if (o2 == 0) {
        if (r == 0) return 0;
        return td ? kUnreachable : r + 2;
      }
      return r + o2;
    }
  }
  return kUnreachable;
}

bool within_budget(const ShapeSummary& s, ActionKind kind, Strategy strategy,
                   const Limits& limits) {
  const int rest = min_completion_after(s, kind, strategy);
  if (rest >= kUnreachable) return false;
  return s.actions_taken + 1 + rest <= limits.max_actions;
}

template <typename LabelId, typename TermId>
void build_actions(const Tree& t, Strategy strategy, LabelId& label_id,
                   TermId& term_id, std::vector<Action>& out) {
  if (t.is_terminal()) {
    out.push_back(Action::gen(term_id(t.label)));
    return;
  }
  const int label = label_id(t.label);
  if (strategy == Strategy::kTopDown) {
    out.push_back(Action::open(label));
    for (const Tree& c : t.children) {
      build_actions(c, strategy, label_id, term_id, out);
    }
  } else {
    build_actions(t.children.front(), strategy, label_id, term_id, out);
    out.push_back(Action::open(label));
    for (std::size_t i = 1; i < t.children.size(); ++i) {
      build_actions(t.children[i], strategy, label_id, term_id, out);
    }
  }
  out.push_back(Action::reduce());
}

}  // namespace

SymbolTable::SymbolTable(const std::vector<std::string>& symbols) {
  for (const auto& s : symbols) intern(s);
}

int SymbolTable::intern(std::string_view symbol) {
  auto it = index_.find(std::string(symbol));
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(symbols_.size());
  symbols_.emplace_back(symbol);
  index_.emplace(symbols_.back(), id);
  return id;
}

int SymbolTable::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  return it == index_.end() ? -1 : it->second;
}

int SymbolTable::at(std::string_view symbol) const {
  const int id = find(symbol);
  if (id < 0) throw DataError("unknown symbol '" + std::string(symbol) + "'");
  return id;
}

const std::string& SymbolTable::str(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw DataError("symbol id " + std::to_string(id) + " out of range");
  }
  return symbols_[id];
}

std::string_view strategy_name(Strategy s) {
  return s == Strategy::kTopDown ? "td" : "lc";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "td" || name == "top-down" || name == "topdown") {
    return Strategy::kTopDown;
  }
  if (name == "lc" || name == "left-corner" || name == "leftcorner") {
    return Strategy::kLeftCorner;
  }
  throw UsageError("unknown strategy '" + std::string(name) + "'");
}

LegalActions legal_actions(const ShapeSummary& s, Strategy strategy,
                           const Limits& limits) {
  LegalActions legal;
  const int r = s.sentence_length - s.words_consumed;
  const int o = s.open_count;
  const bool empty = s.stack_size == 0;
  const bool open_room = o + 1 <= limits.max_open_nonterminals;

  if (strategy == Strategy::kTopDown) {
    legal.open = r > 0 && (empty || o > 0) && open_room &&
                 within_budget(s, ActionKind::kOpen, strategy, limits);
    legal.gen = r > 0 && o > 0 &&
                within_budget(s, ActionKind::kGen, strategy, limits);
  } else {
    legal.gen = r > 0 && (empty || o > 0) &&
                within_budget(s, ActionKind::kGen, strategy, limits);
    // One parent per completed subtree: a subtree that is already the first
    // child of an open constituent cannot take a second parent.
    legal.open = !empty && is_complete(s.top) && !s.top_above_open &&
                 open_room &&
                 within_budget(s, ActionKind::kOpen, strategy, limits);
  }
  legal.reduce = o > 0 && s.top != ElemKind::kOpen &&
                 within_budget(s, ActionKind::kReduce, strategy, limits);
  legal.finish = s.stack_size == 1 && o == 0 && r == 0 &&
                 s.bottom == ElemKind::kConstituent;
  return legal;
}

Derivation::Derivation(Strategy strategy, int sentence_length, Limits limits)
    : strategy_(strategy), limits_(limits) {
  shape_.sentence_length = sentence_length;
}

void Derivation::apply(const Action& action) {
  const std::size_t pos = static_cast<std::size_t>(shape_.actions_taken);
  const bool td = strategy_ == Strategy::kTopDown;
  switch (action.kind) {
    case ActionKind::kGen:
      if (shape_.words_consumed >= shape_.sentence_length) {
        throw IllFormed(pos, "GEN beyond the end of the sentence");
      }
      // Left corner may start with a bare word; otherwise a word needs an
      // open parent.
      if (shape_.open_count == 0 && (td || !stack_.empty())) {
        throw IllFormed(pos, "GEN outside any open constituent");
      }
      stack_.push_back(ElemKind::kTerminal);
      ++shape_.words_consumed;
      break;
    case ActionKind::kOpen:
      if (td) {
        if (!stack_.empty() && shape_.open_count == 0) {
          throw IllFormed(pos, "OPEN after the root is complete");
        }
        stack_.push_back(ElemKind::kOpen);
      } else {
        if (stack_.empty() || !is_complete(stack_.back())) {
          throw IllFormed(pos, "OPEN without a completed left corner");
        }
        stack_.insert(stack_.end() - 1, ElemKind::kOpen);
      }
      ++shape_.open_count;
      break;
    case ActionKind::kReduce: {
      if (shape_.open_count == 0) {
        throw IllFormed(pos, "REDUCE with no open constituent");
      }
      if (stack_.back() == ElemKind::kOpen) {
        throw IllFormed(pos, "REDUCE of a constituent without children");
      }
      while (stack_.back() != ElemKind::kOpen) stack_.pop_back();
      stack_.back() = ElemKind::kConstituent;
      --shape_.open_count;
      break;
    }
  }
  ++shape_.actions_taken;
  shape_.stack_size = static_cast<int>(stack_.size());
  shape_.top = stack_.empty() ? ElemKind::kNone : stack_.back();
  shape_.top_above_open =
      stack_.size() >= 2 && stack_[stack_.size() - 2] == ElemKind::kOpen;
  shape_.bottom = stack_.empty() ? ElemKind::kNone : stack_.front();
}

bool Derivation::complete() const {
  return stack_.size() == 1 && stack_.front() == ElemKind::kConstituent &&
         shape_.words_consumed == shape_.sentence_length;
}

ActionSequence tree_to_actions(const Tree& tree, Strategy strategy,
                               SymbolTable& labels, SymbolTable& terminals) {
  if (tree.is_terminal()) throw DataError("a bare terminal is not a tree");
  ActionSequence seq{strategy, {}};
  auto label_id = [&](const std::string& x) { return labels.intern(x); };
  auto term_id = [&](const std::string& x) { return terminals.intern(x); };
  build_actions(tree, strategy, label_id, term_id, seq.actions);
  return seq;
}

ActionSequence tree_to_actions_fixed(const Tree& tree, Strategy strategy,
                                     const SymbolTable& labels,
                                     const SymbolTable& terminals) {
  if (tree.is_terminal()) throw DataError("a bare terminal is not a tree");
  ActionSequence seq{strategy, {}};
  auto label_id = [&](const std::string& x) { return labels.at(x); };
  auto term_id = [&](const std::string& x) { return terminals.at(x); };
  build_actions(tree, strategy, label_id, term_id, seq.actions);
  return seq;
}

std::size_t count_gen(const ActionSequence& seq) {
  std::size_t n = 0;
  for (const Action& a : seq.actions) n += a.kind == ActionKind::kGen;
  return n;
}

Tree actions_to_tree(const ActionSequence& seq, const SymbolTable& labels,
                     const SymbolTable& terminals) {
  Derivation derivation(seq.strategy, static_cast<int>(count_gen(seq)));
  struct Frame {
    bool open;
    Tree tree;
  };
  std::vector<Frame> stack;
  for (std::size_t i = 0; i < seq.actions.size(); ++i) {
    const Action& a = seq.actions[i];
    derivation.apply(a);
    switch (a.kind) {
      case ActionKind::kGen:
        if (a.id < 0 || static_cast<std::size_t>(a.id) >= terminals.size()) {
          throw IllFormed(i, "terminal id out of range");
        }
        stack.push_back({false, Tree::leaf(terminals.str(a.id))});
        break;
      case ActionKind::kOpen: {
        if (a.id < 0 || static_cast<std::size_t>(a.id) >= labels.size()) {
          throw IllFormed(i, "label id out of range");
        }
        Frame f{true, Tree::node(labels.str(a.id), {})};
        if (seq.strategy == Strategy::kLeftCorner) {
          f.tree.children.push_back(std::move(stack.back().tree));
          stack.pop_back();
        }
        stack.push_back(std::move(f));
        break;
      }
      case ActionKind::kReduce: {
        std::size_t j = stack.size();
        while (!stack[j - 1].open) --j;
        Frame& parent = stack[j - 1];
        for (std::size_t k = j; k < stack.size(); ++k) {
          parent.tree.children.push_back(std::move(stack[k].tree));
        }
        stack.resize(j);
        parent.open = false;
        break;
      }
    }
  }
  if (!derivation.complete()) {
    throw IllFormed(seq.actions.size(), "incomplete derivation");
  }
  return std::move(stack.front().tree);
}

std::string format_actions(const ActionSequence& seq, const SymbolTable& labels) {
  std::string out;
  for (std::size_t i = 0; i < seq.actions.size(); ++i) {
    if (i) out += ' ';
    const Action& a = seq.actions[i];
    switch (a.kind) {
      case ActionKind::kOpen: out += "NT(" + labels.str(a.id) + ")"; break;
      case ActionKind::kGen: out += "GEN(" + std::to_string(a.id) + ")"; break;
      case ActionKind::kReduce: out += "REDUCE"; break;
    }
  }
  return out;
}

ActionSequence parse_actions(std::string_view line, Strategy strategy,
                             SymbolTable& labels) {
  ActionSequence seq{strategy, {}};
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) {
    if (tok == "REDUCE") {
      seq.actions.push_back(Action::reduce());
    } else if (tok.size() > 4 && tok.rfind("NT(", 0) == 0 && tok.back() == ')') {
      seq.actions.push_back(Action::open(labels.intern(tok.substr(3, tok.size() - 4))));
    } else if (tok.size() > 5 && tok.rfind("GEN(", 0) == 0 && tok.back() == ')') {
      int id = 0;
      const char* first = tok.data() + 4;
      const char* last = tok.data() + tok.size() - 1;
      auto [p, ec] = std::from_chars(first, last, id);
      if (ec != std::errc() || p != last) throw DataError("bad action token " + tok);
      seq.actions.push_back(Action::gen(id));
    } else {
      throw DataError("bad action token " + tok);
    }
  }
  return seq;
}

}  // namespace hiersurp
