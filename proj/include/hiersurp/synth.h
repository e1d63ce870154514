#ifndef HIERSURP_SYNTH_H_
#define HIERSURP_SYNTH_H_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hiersurp/common.h"
#include "hiersurp/regress.h"
#include "hiersurp/treebank.h"

namespace hiersurp {

class ImproperGrammar : public DataError {
 public:
  explicit ImproperGrammar(const std::string& what) : DataError("improper grammar: " + what) {}
};

struct Rule {
  std::string lhs;
  std::vector<std::string> rhs;
  double prob = 0.0;
};

// PCFG over nonterminals (every symbol with a rule) and terminals (every
// other symbol). Nonterminals whose name starts with '_' are word classes:
// their rules must rewrite to terminals only and they are spliced out of the
// sampled trees, so words attach directly to phrases.
class Pcfg {
 public:
  // Text format: one "LHS -> RHS... PROB" rule per line; '#' starts a
  // comment. The first LHS is the start symbol. Rule probabilities of each
  // LHS must sum to 1 within 1e-6.
  static Pcfg parse(std::string_view text);

  // Reweights recursive structure: rules whose nonterminal children (word
  // classes excluded) occur only in first position get weight `bias`, all
  // other rules 1 - bias; probabilities are then renormalized per LHS.
  // bias 0.5 leaves the grammar unchanged and bias 1 yields strictly
  // left-branching trees. Throws ImproperGrammar when an LHS loses all mass.
  Pcfg with_left_bias(double bias) const;

  // Throws ImproperGrammar unless every nonterminal terminates with
  // probability 1 (least fixed point of the termination equations).
  void check_proper() const;

  const std::string& start() const { return start_; }
  const std::vector<Rule>& rules() const { return rules_; }
  bool is_nonterminal(const std::string& s) const { return by_lhs_.count(s) > 0; }
  static bool is_word_class(const std::string& s) { return !s.empty() && s[0] == '_'; }
  std::string to_text() const;

  // Samples a tree, retrying (deterministically) when the depth cap or the
  // length bounds are violated. Throws ImproperGrammar after `max_tries`.
  Tree sample(Rng& rng, int min_words = 1, int max_words = 40, int max_depth = 40,
              int max_tries = 10000) const;

 private:
  void index();
  bool expand(const std::string& symbol, Rng& rng, int depth, int max_depth,
              std::vector<Tree>& out, int& words, int max_words) const;

  std::string start_;
  std::vector<Rule> rules_;
  std::map<std::string, std::vector<std::size_t>> by_lhs_;
};

// Head-final grammar with phrases S, VP, PP, NP and Zipfian word classes.
std::string default_grammar_text();

// ---- Reading-time simulation ----

struct RtSimConfig {
  int subjects = 16;
  int sentences_per_article = 10;
  int line_chars = 24;      // characters per display line
  int lines_per_screen = 5;
  int max_segment_words = 2;  // words per segment: 1..max
  double skip_rate = 0.05;       // not fixated
  // log RT = intercept + coefficients * predictors + gamma * surprisal +
  // article + subject + noise.
  double intercept = 5.5;
  double beta_length = 0.03;
  double beta_prev_length = 0.01;
  double beta_freq = -0.02;
  double beta_prev_freq = -0.005;
  double beta_is_first = 0.04;
  double beta_is_last = 0.03;
  double beta_is_second_last = 0.0;
  double beta_screen = 0.0;
  double beta_line = 0.0;
  double beta_segment = -0.0005;
  double gamma = 0.05;
  double sd_article = 0.05;
  double sd_subject = 0.15;
  double sd_noise = 0.2;
};

struct SimSegment {
  std::string id;
  int article = 0;
  int sentence = 0;  // index into the input sentences
  std::vector<std::string> words;
};

// Splits sentences into reading segments of 1..max words; ids are
// "a<article>-s<sentence>-g<index>".
std::vector<SimSegment> segment_sentences(const std::vector<std::vector<std::string>>& sentences,
                                          const RtSimConfig& config, Rng& rng);

// One row per subject and segment. `surprisal` maps segment id to the
// generating surprisal (missing ids contribute 0, e.g. with gamma = 0).
std::vector<RtRow> simulate_reading_times(const std::vector<SimSegment>& segments,
                                          const FrequencyTable& freq,
                                          const std::map<std::string, double>& surprisal,
                                          const RtSimConfig& config, Rng& rng);

// Word -> occurrence count over the yields of `trees`.
FrequencyTable word_counts(const std::vector<Tree>& trees);

}  // namespace hiersurp

#endif  // HIERSURP_SYNTH_H_
