#ifndef HIERSURP_MODELS_H_
#define HIERSURP_MODELS_H_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hiersurp/autodiff.h"
#include "hiersurp/oracle.h"

namespace hiersurp {

class EmptyCorpus : public DataError {
 public:
  EmptyCorpus() : DataError("training corpus is empty") {}
};

class IllegalActionInSequence : public DataError {
 public:
  explicit IllegalActionInSequence(std::size_t position)
      : DataError("illegal action at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

struct SentenceScores {
  std::vector<double> per_position;  // nats
  double total = 0.0;
};

// ---- Sequential LM ----

struct LstmLmConfig {
  int vocab = 0;  // subword vocabulary size (excluding sentinels)
  int dim = 256;
  int layers = 2;
  double dropout = 0.2;
};

// Inputs are subwords plus BOS; predictions range over subwords plus EOS.
class LstmLm {
 public:
  LstmLm(const LstmLmConfig& config, std::uint64_t init_seed);

  const LstmLmConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  int bos() const { return config_.vocab + 1; }
  int eos() const { return config_.vocab; }
  int output_size() const { return config_.vocab + 1; }

  // Summed NLL over the subwords and EOS.
  Graph::Expr loss(Graph& g, std::span<const int> ids) const;

  // Surprisal of every subword followed by the EOS term (size n + 1).
  SentenceScores score(std::span<const int> ids) const;

  // Full next-token log distributions after each prefix (n + 1 rows).
  std::vector<Vec> log_distributions(std::span<const int> ids) const;

  std::map<std::string, std::string> meta() const;
  static LstmLmConfig config_from_meta(const std::map<std::string, std::string>& meta);

 private:
  std::vector<Graph::Expr> outputs(Graph& g, std::span<const int> ids) const;

  LstmLmConfig config_;
  // Graph ops take mutable tensors for gradient accumulation.
  mutable ParameterSet params_;
};

// ---- Stack-only RNNG ----

struct RnngConfig {
  Strategy strategy = Strategy::kTopDown;
  int vocab = 0;     // subword vocabulary size
  int n_labels = 0;  // nonterminal inventory
  int dim = 256;
  int layers = 2;
  double dropout = 0.3;
  Limits limits;
};

// Persistent stack element used during inference. Every element stores the
// stack-LSTM state after it was pushed, so sharing prefixes is free.
struct StackNode {
  std::shared_ptr<const StackNode> below;  // null for the guard
  Vec input;                               // element encoding
  std::vector<Vec> h, c;                   // per layer
  ElemKind kind = ElemKind::kNone;
  int label = -1;                 // open nonterminals only
  ElemKind bottom = ElemKind::kNone;  // kind of the lowest real element
  int depth = 0;                      // real elements up to and including this
};

struct RnngState {
  std::shared_ptr<const StackNode> top;
  ShapeSummary shape;
};

struct RnngHead {
  Vec hidden;
  Vec action_logp;  // masked log-probabilities over action classes
  LegalActions legal;
};

class Rnng {
 public:
  Rnng(const RnngConfig& config, std::uint64_t init_seed);

  const RnngConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Strategy strategy() const { return config_.strategy; }

  // Action classes: OPEN(label) for label < L, then GEN, REDUCE, FINISH.
  int num_classes() const { return config_.n_labels + 3; }
  int gen_class() const { return config_.n_labels; }
  int reduce_class() const { return config_.n_labels + 1; }
  int finish_class() const { return config_.n_labels + 2; }
  int action_class(const Action& a) const;
  std::vector<char> class_mask(const LegalActions& legal) const;

  // Joint NLL of the derivation (including the closing FINISH decision).
  // Throws IllegalActionInSequence.
  Graph::Expr loss(Graph& g, const ActionSequence& seq) const;

  // Per-action surprisals (structural plus lexical for GEN), with FINISH as
  // the final entry.
  SentenceScores score(const ActionSequence& seq) const;

  // Inference interface used by beam search.
  RnngState initial_state(int sentence_length) const;
  RnngHead head(const RnngState& state) const;
  Vec raw_action_logits(const RnngState& state) const;
  Vec word_log_probs(const RnngHead& head) const;
  RnngState apply(const RnngState& state, const Action& action) const;

  // Building blocks, exposed for testing.
  Graph::Expr compose(Graph& g, int label, std::span<const Graph::Expr> children) const;

  std::map<std::string, std::string> meta() const;
  static RnngConfig config_from_meta(const std::map<std::string, std::string>& meta);

 private:
  struct LayerState {
    std::vector<Graph::Expr> h, c;
  };
  LayerState push_exprs(Graph& g, const LayerState& below, Graph::Expr x) const;
  Graph::Expr hidden_expr(Graph& g, Graph::Expr h_top) const;
  std::shared_ptr<const StackNode> push_node(std::shared_ptr<const StackNode> below,
                                             Vec input, ElemKind kind, int label) const;

  RnngConfig config_;
  mutable ParameterSet params_;
};

std::size_t count_words(const ActionSequence& seq);

// ---- Training ----

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  std::string optimizer = "adam";  // "sgd" or "adam"
  double lr = 0.001;
  double clip = 5.0;
  std::uint64_t seed = 1;
  bool verbose = false;
};

TrainConfig lstm_train_defaults();
TrainConfig rnng_train_defaults();

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;  // per token
  double valid_nll = 0.0;  // per token
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_valid_nll = 0.0;
  double initial_valid_nll = 0.0;
};

// Model-agnostic sentence-level trainer. `loss` builds the summed NLL of one
// example; `tokens` gives its normalizer. After training the parameters hold
// the epoch with the lowest validation NLL. `on_epoch` runs after every
// epoch with the current (not best) parameters, e.g. to write checkpoints.
struct TrainTask {
  ParameterSet* params = nullptr;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
  std::function<Graph::Expr(Graph&, std::size_t index, bool validation)> loss;
  std::function<double(std::size_t index, bool validation)> tokens;
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(const TrainTask& task, const TrainConfig& config);

TrainResult train_lstm(LstmLm& model, const std::vector<std::vector<int>>& train_set,
                       const std::vector<std::vector<int>>& valid_set,
                       const TrainConfig& config,
                       std::function<void(const EpochRecord&)> on_epoch = {});

TrainResult train_rnng(Rnng& model, const std::vector<ActionSequence>& train_set,
                       const std::vector<ActionSequence>& valid_set,
                       const TrainConfig& config,
                       std::function<void(const EpochRecord&)> on_epoch = {});

void write_loss_curve(const std::string& path, const TrainResult& result);

}  // namespace hiersurp

#endif  // HIERSURP_MODELS_H_
