#ifndef HIERSURP_BEAM_H_
#define HIERSURP_BEAM_H_

#include <memory>
#include <span>
#include <vector>

#include "hiersurp/models.h"
#include "hiersurp/oracle.h"
#include "hiersurp/treebank.h"

namespace hiersurp {

class BeamEmpty : public DataError {
 public:
  explicit BeamEmpty(std::size_t word)
      : DataError("no derivation survived at word " + std::to_string(word)),
        word_(word) {}
  std::size_t word() const { return word_; }

 private:
  std::size_t word_;
};

struct BeamConfig {
  int action_beam = 100;
  int word_beam = 10;
  int fast_track = 1;
  // Successors that take the word (or FINISH) collected before the search
  // advances; the collection is then truncated to the word beam.
  int pool_target = 100;
  // Structural expansion rounds allowed per word before giving up.
  int max_structural_steps = 40;

  // Word beam k/10 and fast track k/100 (integer division, minimum 1); the
  // pool target is k.
  static BeamConfig from_action_beam(int k, int max_structural_steps = 40);
};

// Singly linked action history shared between beam items.
struct ActionNode {
  Action action;
  std::shared_ptr<const ActionNode> prev;
};

struct BeamItem {
  RnngState state;
  double log_prob = 0.0;  // joint log probability of the prefix, nats
  std::shared_ptr<const ActionNode> history;
};

struct SearchResult {
  // word_beams[i] holds the items that have just generated word i, best
  // first, truncated to the word beam size.
  std::vector<std::vector<BeamItem>> word_beams;
  // Completed derivations (FINISH taken), best first.
  std::vector<BeamItem> final_beam;
};

// Word-synchronous beam search. Throws BeamEmpty.
SearchResult word_sync_search(const Rnng& model, std::span<const int> ids,
                              const BeamConfig& config);

// I(w_i) = logsumexp(beam i-1) - logsumexp(beam i), with 0 before word 0.
std::vector<double> marginal_surprisals(const SearchResult& result);

// Log of the total probability mass held by each word beam.
std::vector<double> beam_masses(const SearchResult& result);

ActionSequence item_actions(const BeamItem& item, Strategy strategy);

// Highest-scoring complete derivation decoded to a tree. Throws BeamEmpty.
Tree best_parse(const SearchResult& result, Strategy strategy,
                const SymbolTable& labels, const SymbolTable& terminals);

// Number of items whose probability is at least `threshold` times the best.
int relative_beam_count(std::span<const double> log_scores, double threshold);

// Pooled averages over every word beam seen.
class RelativeBeamStats {
 public:
  explicit RelativeBeamStats(std::vector<double> thresholds = {1.0 / 3.8, 1.0 / 5.6});
  void add_beam(std::span<const double> log_scores);
  void add_result(const SearchResult& result);
  const std::vector<double>& thresholds() const { return thresholds_; }
  double mean(std::size_t threshold_index) const;
  long beams() const { return beams_; }

 private:
  std::vector<double> thresholds_;
  std::vector<double> totals_;
  long beams_ = 0;
};

enum class RnngPerplexityMode { kMarginal, kBestDerivation };

struct SentenceSurprisal {
  bool ok = false;  // false when the search failed (BeamEmpty)
  std::vector<double> surprisals;
  std::vector<double> beam_mass;
  double best_derivation_nll = 0.0;
  Tree best_tree;
};

// Searches every sentence, optionally on several threads. Results are
// ordered by sentence index regardless of scheduling. Relative-beam
// statistics are accumulated when `stats` is given.
std::vector<SentenceSurprisal> rnng_surprisals(
    const Rnng& model, const std::vector<std::vector<int>>& sentences,
    const BeamConfig& config, int threads = 1, RelativeBeamStats* stats = nullptr,
    const SymbolTable* labels = nullptr, const SymbolTable* terminals = nullptr);

struct PerplexityReport {
  double perplexity = 0.0;
  long subwords = 0;
  long excluded_sentences = 0;
};

PerplexityReport rnng_perplexity(const std::vector<SentenceSurprisal>& results,
                                 const std::vector<std::vector<int>>& sentences,
                                 RnngPerplexityMode mode = RnngPerplexityMode::kMarginal);

// Per-subword surprisals from the sequential LM (EOS dropped).
std::vector<double> lstm_surprisals(const LstmLm& model, std::span<const int> ids);

PerplexityReport lstm_perplexity(const LstmLm& model,
                                 const std::vector<std::vector<int>>& sentences);

}  // namespace hiersurp

#endif  // HIERSURP_BEAM_H_
