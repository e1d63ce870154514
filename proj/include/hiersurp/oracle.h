#ifndef HIERSURP_ORACLE_H_
#define HIERSURP_ORACLE_H_

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hiersurp/common.h"
#include "hiersurp/treebank.h"

namespace hiersurp {

// Dense string <-> id mapping for nonterminal labels and terminal symbols.
class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(const std::vector<std::string>& symbols);

  int intern(std::string_view symbol);
  // -1 when absent.
  int find(std::string_view symbol) const;
  int at(std::string_view symbol) const;  // throws DataError when absent
  const std::string& str(int id) const;
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

enum class Strategy { kTopDown, kLeftCorner };

std::string_view strategy_name(Strategy s);  // "td" / "lc"
Strategy parse_strategy(std::string_view name);

enum class ActionKind { kOpen, kGen, kReduce };

// OPEN carries a label id, GEN a terminal id; REDUCE carries nothing.
struct Action {
  ActionKind kind = ActionKind::kReduce;
  int id = -1;

  static Action open(int label) { return {ActionKind::kOpen, label}; }
  static Action gen(int word) { return {ActionKind::kGen, word}; }
  static Action reduce() { return {ActionKind::kReduce, -1}; }

  friend bool operator==(const Action&, const Action&) = default;
};

struct ActionSequence {
  Strategy strategy = Strategy::kTopDown;
  std::vector<Action> actions;

  friend bool operator==(const ActionSequence&, const ActionSequence&) = default;
};

struct Limits {
  int max_open_nonterminals = 100;
  int max_actions = 800;
};

enum class ElemKind { kNone, kOpen, kTerminal, kConstituent };

// What legality needs to know about a partial derivation.
struct ShapeSummary {
  int sentence_length = 0;
  int words_consumed = 0;
  int actions_taken = 0;
  int stack_size = 0;
  int open_count = 0;
  ElemKind top = ElemKind::kNone;
  // The element directly below the top is an open nonterminal.
  bool top_above_open = false;
  ElemKind bottom = ElemKind::kNone;
};

// FINISH is the terminal decision taken once a derivation is complete; it
// never appears in an ActionSequence but is part of the structural
// distribution.
struct LegalActions {
  bool open = false;
  bool gen = false;
  bool reduce = false;
  bool finish = false;

  bool any() const { return open || gen || reduce || finish; }
  bool allows(ActionKind k) const {
    switch (k) {
      case ActionKind::kOpen: return open;
      case ActionKind::kGen: return gen;
      default: return reduce;
    }
  }
  friend bool operator==(const LegalActions&, const LegalActions&) = default;
};

// Actions are legal only if a complete derivation is still reachable within
// the limits afterwards, so no probability mass is lost at dead ends.
LegalActions legal_actions(const ShapeSummary& state, Strategy strategy,
                           const Limits& limits);

class IllFormed : public DataError {
 public:
  IllFormed(std::size_t position, const std::string& reason)
      : DataError("ill-formed action sequence at " + std::to_string(position) +
                  ": " + reason),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Structural replay of a derivation (no tree payload).
class Derivation {
 public:
  Derivation(Strategy strategy, int sentence_length, Limits limits = {});

  LegalActions legal() const { return legal_actions(shape_, strategy_, limits_); }
  // Throws IllFormed when the action is structurally impossible; does not
  // check the limits.
  void apply(const Action& action);
  bool complete() const;
  const ShapeSummary& shape() const { return shape_; }
  Strategy strategy() const { return strategy_; }

 private:
  Strategy strategy_;
  Limits limits_;
  ShapeSummary shape_;
  std::vector<ElemKind> stack_;
};

ActionSequence tree_to_actions(const Tree& tree, Strategy strategy,
                               SymbolTable& labels, SymbolTable& terminals);
// Variant that fails on symbols missing from the tables.
ActionSequence tree_to_actions_fixed(const Tree& tree, Strategy strategy,
                                     const SymbolTable& labels,
                                     const SymbolTable& terminals);

Tree actions_to_tree(const ActionSequence& seq, const SymbolTable& labels,
                     const SymbolTable& terminals);

std::size_t count_gen(const ActionSequence& seq);

// Dump format: "NT(X) GEN(12) REDUCE".
std::string format_actions(const ActionSequence& seq, const SymbolTable& labels);
ActionSequence parse_actions(std::string_view line, Strategy strategy,
                             SymbolTable& labels);

}  // namespace hiersurp

#endif  // HIERSURP_ORACLE_H_
