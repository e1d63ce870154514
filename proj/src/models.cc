#include "hiersurp/models.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include "hiersurp/bpe.h"

namespace hiersurp {
namespace {

std::string lstm_w(int l) { return "lstm_w" + std::to_string(l); }
std::string lstm_b(int l) { return "lstm_b" + std::to_string(l); }
std::string stack_w(int l) { return "stack_w" + std::to_string(l); }
std::string stack_b(int l) { return "stack_b" + std::to_string(l); }

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint lacks '" + key + "'");
  return std::stoi(it->second);
}

double meta_double(const std::map<std::string, std::string>& meta,
                   const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint lacks '" + key + "'");
  return std::stod(it->second);
}

}  // namespace

// ---- LstmLm ----

LstmLm::LstmLm(const LstmLmConfig& config, std::uint64_t init_seed) : config_(config) {
  if (config.vocab < 1 || config.dim < 1 || config.layers < 1) {
    throw UsageError("LSTM LM needs positive vocabulary, dimension and depth");
  }
  const int d = config.dim;
  params_.add("emb", {d, config.vocab + 2});
  for (int l = 0; l < config.layers; ++l) {
    params_.add(lstm_w(l), {4 * d, 2 * d});
    params_.add(lstm_b(l), {4 * d});
  }
  params_.add("out_w", {config.vocab + 1, d});
  params_.add("out_b", {config.vocab + 1});

  Rng rng(init_seed);
  params_.initialize("emb", Init::kUniform01, rng);
  for (int l = 0; l < config.layers; ++l) {
    params_.initialize(lstm_w(l), Init::kXavier, rng);
    params_.initialize(lstm_b(l), Init::kForgetBias, rng);
  }
  params_.initialize("out_w", Init::kXavier, rng);
  params_.initialize("out_b", Init::kZero, rng);
}

std::vector<Graph::Expr> LstmLm::outputs(Graph& g, std::span<const int> ids) const {
  const int d = config_.dim;
  std::vector<Graph::Expr> h(config_.layers), c(config_.layers);
  for (int l = 0; l < config_.layers; ++l) {
    h[l] = g.input(Vec::Zero(d));
    c[l] = g.input(Vec::Zero(d));
  }
  std::vector<Graph::Expr> logits;
  logits.reserve(ids.size() + 1);
  for (std::size_t t = 0; t <= ids.size(); ++t) {
    const int token = t == 0 ? bos() : ids[t - 1];
    if (token < 0 || token >= config_.vocab + (t == 0 ? 2 : 0)) {
      throw IdOutOfRange(token, static_cast<std::size_t>(config_.vocab));
    }
    Graph::Expr x = g.dropout(g.lookup(params_.get("emb"), token), config_.dropout);
    for (int l = 0; l < config_.layers; ++l) {
      Graph::Expr hc = g.lstm_cell(params_.get(lstm_w(l)), params_.get(lstm_b(l)), x,
                                   h[l], c[l]);
      h[l] = g.lstm_h(hc);
      c[l] = g.lstm_c(hc);
      x = g.dropout(h[l], config_.dropout);
    }
    logits.push_back(g.affine(params_.get("out_w"), x, &params_.get("out_b")));
  }
  return logits;
}

Graph::Expr LstmLm::loss(Graph& g, std::span<const int> ids) const {
  std::vector<Graph::Expr> logits = outputs(g, ids);
  std::vector<Graph::Expr> terms;
  terms.reserve(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const int target = t < ids.size() ? ids[t] : eos();
    terms.push_back(g.pick_neg_log_softmax(logits[t], target));
  }
  return g.sum(terms);
}

SentenceScores LstmLm::score(std::span<const int> ids) const {
  Graph g(false);
  std::vector<Graph::Expr> logits = outputs(g, ids);
  SentenceScores out;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const int target = t < ids.size() ? ids[t] : eos();
    const double s = -log_softmax(g.value(logits[t]))(target);
    out.per_position.push_back(s);
    out.total += s;
  }
  return out;
}

std::vector<Vec> LstmLm::log_distributions(std::span<const int> ids) const {
  Graph g(false);
  std::vector<Vec> out;
  for (Graph::Expr e : outputs(g, ids)) out.push_back(log_softmax(g.value(e)));
  return out;
}

std::map<std::string, std::string> LstmLm::meta() const {
  return {{"vocab", std::to_string(config_.vocab)},
          {"dim", std::to_string(config_.dim)},
          {"layers", std::to_string(config_.layers)},
          {"dropout", fmt(config_.dropout)}};
}

LstmLmConfig LstmLm::config_from_meta(const std::map<std::string, std::string>& meta) {
  LstmLmConfig c;
  c.vocab = meta_int(meta, "vocab");
  c.dim = meta_int(meta, "dim");
  c.layers = meta_int(meta, "layers");
  c.dropout = meta_double(meta, "dropout");
  return c;
}

// ---- Rnng ----

Rnng::Rnng(const RnngConfig& config, std::uint64_t init_seed) : config_(config) {
  if (config.vocab < 1 || config.n_labels < 1 || config.dim < 1 || config.layers < 1) {
    throw UsageError("RNNG needs positive vocabulary, label set, dimension and depth");
  }
  const int d = config.dim;
  params_.add("word_emb", {d, config.vocab});
  params_.add("nt_emb", {d, config.n_labels});
  params_.add("comp_nt_emb", {d, config.n_labels});
  params_.add("guard", {d});
  for (int l = 0; l < config.layers; ++l) {
    params_.add(stack_w(l), {4 * d, 2 * d});
    params_.add(stack_b(l), {4 * d});
  }
  params_.add("comp_fwd_w", {4 * d, 2 * d});
  params_.add("comp_fwd_b", {4 * d});
  params_.add("comp_bwd_w", {4 * d, 2 * d});
  params_.add("comp_bwd_b", {4 * d});
  params_.add("comp_out_w", {d, 2 * d});
  params_.add("comp_out_b", {d});
  params_.add("head_w", {d, d});
  params_.add("head_b", {d});
  params_.add("action_w", {num_classes(), d});
  params_.add("action_b", {num_classes()});
  params_.add("word_w", {config.vocab, d});
  params_.add("word_b", {config.vocab});

  Rng rng(init_seed);
  for (const char* emb : {"word_emb", "nt_emb", "comp_nt_emb", "guard"}) {
    params_.initialize(emb, Init::kUniform01, rng);
  }
  for (int l = 0; l < config.layers; ++l) {
    params_.initialize(stack_w(l), Init::kXavier, rng);
    params_.initialize(stack_b(l), Init::kForgetBias, rng);
  }
  for (const char* dir : {"fwd", "bwd"}) {
    params_.initialize(std::string("comp_") + dir + "_w", Init::kXavier, rng);
    params_.initialize(std::string("comp_") + dir + "_b", Init::kForgetBias, rng);
  }
  for (const char* w : {"comp_out_w", "head_w", "action_w", "word_w"}) {
    params_.initialize(w, Init::kXavier, rng);
  }
  for (const char* b : {"comp_out_b", "head_b", "action_b", "word_b"}) {
    params_.initialize(b, Init::kZero, rng);
  }
}

int Rnng::action_class(const Action& a) const {
  switch (a.kind) {
    case ActionKind::kOpen:
      if (a.id < 0 || a.id >= config_.n_labels) {
        throw IdOutOfRange(a.id, static_cast<std::size_t>(config_.n_labels));
      }
      return a.id;
    case ActionKind::kGen:
      return gen_class();
    case ActionKind::kReduce:
      return reduce_class();
  }
  return -1;
}

std::vector<char> Rnng::class_mask(const LegalActions& legal) const {
  std::vector<char> mask(num_classes(), 0);
  for (int l = 0; l < config_.n_labels; ++l) mask[l] = legal.open;
  mask[gen_class()] = legal.gen;
  mask[reduce_class()] = legal.reduce;
  mask[finish_class()] = legal.finish;
  return mask;
}

Rnng::LayerState Rnng::push_exprs(Graph& g, const LayerState& below, Graph::Expr x) const {
  LayerState out;
  out.h.resize(config_.layers);
  out.c.resize(config_.layers);
  Graph::Expr in = g.dropout(x, config_.dropout);
  for (int l = 0; l < config_.layers; ++l) {
    Graph::Expr hc = g.lstm_cell(params_.get(stack_w(l)), params_.get(stack_b(l)), in,
                                 below.h[l], below.c[l]);
    out.h[l] = g.lstm_h(hc);
    out.c[l] = g.lstm_c(hc);
    if (l + 1 < config_.layers) in = g.dropout(out.h[l], config_.dropout);
  }
  return out;
}

Graph::Expr Rnng::hidden_expr(Graph& g, Graph::Expr h_top) const {
  Graph::Expr h = g.dropout(h_top, config_.dropout);
  return g.relu(g.affine(params_.get("head_w"), h, &params_.get("head_b")));
}

Graph::Expr Rnng::compose(Graph& g, int label, std::span<const Graph::Expr> children) const {
  const int d = config_.dim;
  auto run = [&](const char* dir, auto begin, auto end) {
    Tensor& w = params_.get(std::string("comp_") + dir + "_w");
    Tensor& b = params_.get(std::string("comp_") + dir + "_b");
    Graph::Expr h = g.input(Vec::Zero(d));
    Graph::Expr c = g.input(Vec::Zero(d));
    Graph::Expr hc = g.lstm_cell(w, b, g.lookup(params_.get("comp_nt_emb"), label), h, c);
    for (auto it = begin; it != end; ++it) {
      hc = g.lstm_cell(w, b, *it, g.lstm_h(hc), g.lstm_c(hc));
    }
    return g.lstm_h(hc);
  };
  Graph::Expr parts[] = {run("fwd", children.begin(), children.end()),
                         run("bwd", children.rbegin(), children.rend())};
  return g.tanh(g.affine(params_.get("comp_out_w"), g.concat(parts),
                         &params_.get("comp_out_b")));
}

Graph::Expr Rnng::loss(Graph& g, const ActionSequence& seq) const {
  struct Elem {
    Graph::Expr input;
    LayerState state;
    ElemKind kind;
    int label;
  };
  const int d = config_.dim;
  const int n_words = static_cast<int>(count_words(seq));
  LayerState empty;
  for (int l = 0; l < config_.layers; ++l) {
    empty.h.push_back(g.input(Vec::Zero(d)));
    empty.c.push_back(g.input(Vec::Zero(d)));
  }
  Graph::Expr guard_in = g.param(params_.get("guard"));
  std::vector<Elem> stack;
  stack.push_back({guard_in, push_exprs(g, empty, guard_in), ElemKind::kNone, -1});

  Derivation deriv(config_.strategy, n_words, config_.limits);
  std::vector<Graph::Expr> terms;
  auto score_step = [&](int cls, const LegalActions& legal) {
    Graph::Expr hidden = hidden_expr(g, stack.back().state.h.back());
    Graph::Expr logits = g.affine(params_.get("action_w"), hidden, &params_.get("action_b"));
    terms.push_back(g.pick_neg_log_softmax(logits, cls, class_mask(legal)));
    return hidden;
  };
  auto push = [&](Graph::Expr input, ElemKind kind, int label) {
    stack.push_back({input, push_exprs(g, stack.back().state, input), kind, label});
  };

  for (std::size_t i = 0; i < seq.actions.size(); ++i) {
    const Action& a = seq.actions[i];
    const LegalActions legal = deriv.legal();
    if (!legal.allows(a.kind)) throw IllegalActionInSequence(i);
    Graph::Expr hidden = score_step(action_class(a), legal);
    try {
      deriv.apply(a);
    } catch (const IllFormed&) {
      throw IllegalActionInSequence(i);
    }
    switch (a.kind) {
      case ActionKind::kGen: {
        if (a.id < 0 || a.id >= config_.vocab) {
          throw IdOutOfRange(a.id, static_cast<std::size_t>(config_.vocab));
        }
        Graph::Expr wl = g.affine(params_.get("word_w"), hidden, &params_.get("word_b"));
        terms.push_back(g.pick_neg_log_softmax(wl, a.id));
        push(g.lookup(params_.get("word_emb"), a.id), ElemKind::kTerminal, -1);
        break;
      }
      case ActionKind::kOpen: {
        Graph::Expr marker = g.lookup(params_.get("nt_emb"), a.id);
        if (config_.strategy == Strategy::kTopDown) {
          push(marker, ElemKind::kOpen, a.id);
        } else {
          Elem child = stack.back();
          stack.pop_back();
          push(marker, ElemKind::kOpen, a.id);
          push(child.input, child.kind, -1);
        }
        break;
      }
      case ActionKind::kReduce: {
        std::vector<Graph::Expr> children;
        while (stack.back().kind != ElemKind::kOpen) {
          children.push_back(stack.back().input);
          stack.pop_back();
        }
        std::reverse(children.begin(), children.end());
        const int label = stack.back().label;
        stack.pop_back();
        push(compose(g, label, children), ElemKind::kConstituent, -1);
        break;
      }
    }
  }
  const LegalActions legal = deriv.legal();
  if (!legal.finish) throw IllegalActionInSequence(seq.actions.size());
  score_step(finish_class(), legal);
  return g.sum(terms);
}

std::shared_ptr<const StackNode> Rnng::push_node(std::shared_ptr<const StackNode> below,
                                                 Vec input, ElemKind kind,
                                                 int label) const {
  Graph g(false);
  const int d = config_.dim;
  LayerState prev;
  for (int l = 0; l < config_.layers; ++l) {
    prev.h.push_back(g.input(below ? below->h[l] : Vec::Zero(d)));
    prev.c.push_back(g.input(below ? below->c[l] : Vec::Zero(d)));
  }
  LayerState next = push_exprs(g, prev, g.input(input));
  auto node = std::make_shared<StackNode>();
  node->input = std::move(input);
  for (int l = 0; l < config_.layers; ++l) {
    node->h.push_back(g.value(next.h[l]));
    node->c.push_back(g.value(next.c[l]));
  }
  node->kind = kind;
  node->label = label;
  if (!below) {
    node->depth = 0;
  } else {
    node->depth = below->depth + 1;
    node->bottom = below->depth == 0 ? kind : below->bottom;
  }
  node->below = std::move(below);
  return node;
}

RnngState Rnng::initial_state(int sentence_length) const {
  RnngState s;
  s.top = push_node(nullptr, params_.get("guard").values, ElemKind::kNone, -1);
  s.shape.sentence_length = sentence_length;
  return s;
}

Vec Rnng::raw_action_logits(const RnngState& state) const {
  Graph g(false);
  Graph::Expr hidden = hidden_expr(g, g.input(state.top->h.back()));
  return g.value(g.affine(params_.get("action_w"), hidden, &params_.get("action_b")));
}

RnngHead Rnng::head(const RnngState& state) const {
  Graph g(false);
  Graph::Expr hidden = hidden_expr(g, g.input(state.top->h.back()));
  Graph::Expr logits = g.affine(params_.get("action_w"), hidden, &params_.get("action_b"));
  RnngHead out;
  out.hidden = g.value(hidden);
  out.legal = legal_actions(state.shape, config_.strategy, config_.limits);
  out.action_logp = masked_log_softmax(g.value(logits), class_mask(out.legal));
  return out;
}

Vec Rnng::word_log_probs(const RnngHead& head) const {
  Graph g(false);
  Graph::Expr wl = g.affine(params_.get("word_w"), g.input(head.hidden), &params_.get("word_b"));
  return log_softmax(g.value(wl));
}

RnngState Rnng::apply(const RnngState& state, const Action& a) const {
  RnngState next = state;
  ShapeSummary& sh = next.shape;
  switch (a.kind) {
    case ActionKind::kGen:
      if (a.id < 0 || a.id >= config_.vocab) {
        throw IdOutOfRange(a.id, static_cast<std::size_t>(config_.vocab));
      }
      next.top = push_node(state.top, params_.get("word_emb").matrix().col(a.id),
                           ElemKind::kTerminal, -1);
      ++sh.words_consumed;
      break;
    case ActionKind::kOpen: {
      Vec marker = params_.get("nt_emb").matrix().col(a.id);
      if (config_.strategy == Strategy::kTopDown) {
        next.top = push_node(state.top, std::move(marker), ElemKind::kOpen, a.id);
      } else {
        const StackNode& child = *state.top;
        auto m = push_node(child.below, std::move(marker), ElemKind::kOpen, a.id);
        next.top = push_node(m, child.input, child.kind, -1);
      }
      ++sh.open_count;
      break;
    }
    case ActionKind::kReduce: {
      Graph g(false);
      std::vector<Graph::Expr> children;
      const StackNode* node = state.top.get();
      while (node->kind != ElemKind::kOpen) {
        children.push_back(g.input(node->input));
        node = node->below.get();
      }
      std::reverse(children.begin(), children.end());
      Vec composed = g.value(compose(g, node->label, children));
      next.top = push_node(node->below, std::move(composed), ElemKind::kConstituent, -1);
      --sh.open_count;
      break;
    }
  }
  ++sh.actions_taken;
  const StackNode& top = *next.top;
  sh.stack_size = top.depth;
  sh.top = top.depth == 0 ? ElemKind::kNone : top.kind;
  sh.top_above_open = top.depth >= 2 && top.below->kind == ElemKind::kOpen;
  sh.bottom = top.depth == 0 ? ElemKind::kNone : top.bottom;
  return next;
}

SentenceScores Rnng::score(const ActionSequence& seq) const {
  SentenceScores out;
  RnngState state = initial_state(static_cast<int>(count_words(seq)));
  for (std::size_t i = 0; i < seq.actions.size(); ++i) {
    const Action& a = seq.actions[i];
    RnngHead h = head(state);
    if (!h.legal.allows(a.kind)) throw IllegalActionInSequence(i);
    double s = -h.action_logp(action_class(a));
    if (a.kind == ActionKind::kGen) s -= word_log_probs(h)(a.id);
    out.per_position.push_back(s);
    out.total += s;
    state = apply(state, a);
  }
  RnngHead h = head(state);
  if (!h.legal.finish) throw IllegalActionInSequence(seq.actions.size());
  const double s = -h.action_logp(finish_class());
  out.per_position.push_back(s);
  out.total += s;
  return out;
}

std::map<std::string, std::string> Rnng::meta() const {
  return {{"strategy", std::string(strategy_name(config_.strategy))},
          {"vocab", std::to_string(config_.vocab)},
          {"labels", std::to_string(config_.n_labels)},
          {"dim", std::to_string(config_.dim)},
          {"layers", std::to_string(config_.layers)},
          {"dropout", fmt(config_.dropout)},
          {"max_open", std::to_string(config_.limits.max_open_nonterminals)},
          {"max_actions", std::to_string(config_.limits.max_actions)}};
}

RnngConfig Rnng::config_from_meta(const std::map<std::string, std::string>& meta) {
  RnngConfig c;
  auto it = meta.find("strategy");
  if (it == meta.end()) throw DataError("checkpoint lacks 'strategy'");
  c.strategy = parse_strategy(it->second);
  c.vocab = meta_int(meta, "vocab");
  c.n_labels = meta_int(meta, "labels");
  c.dim = meta_int(meta, "dim");
  c.layers = meta_int(meta, "layers");
  c.dropout = meta_double(meta, "dropout");
  c.limits.max_open_nonterminals = meta_int(meta, "max_open");
  c.limits.max_actions = meta_int(meta, "max_actions");
  return c;
}

std::size_t count_words(const ActionSequence& seq) { return count_gen(seq); }

// ---- Training ----

TrainConfig lstm_train_defaults() {
  TrainConfig c;
  c.optimizer = "sgd";
  c.lr = 20.0;
  return c;
}

TrainConfig rnng_train_defaults() {
  TrainConfig c;
  c.optimizer = "adam";
  c.lr = 0.001;
  return c;
}

namespace {

double evaluate(const TrainTask& task) {
  double nll = 0.0, tokens = 0.0;
  for (std::size_t i = 0; i < task.n_valid; ++i) {
    Graph g(false);
    nll += g.scalar(task.loss(g, i, true));
    tokens += task.tokens(i, true);
  }
  return tokens > 0 ? nll / tokens : std::numeric_limits<double>::quiet_NaN();
}

std::vector<Vec> snapshot(const ParameterSet& params) {
  std::vector<Vec> out;
  for (std::size_t k = 0; k < params.size(); ++k) out.push_back(params.at(k).values);
  return out;
}

}  // namespace

TrainResult train(const TrainTask& task, const TrainConfig& config) {
  if (task.n_train == 0) throw EmptyCorpus();
  if (config.epochs < 1 || config.batch_size < 1) {
    throw UsageError("epochs and batch size must be positive");
  }
  std::unique_ptr<Optimizer> opt;
  if (config.optimizer == "sgd") {
    opt = std::make_unique<Sgd>(config.lr);
  } else if (config.optimizer == "adam") {
    opt = std::make_unique<Adam>(config.lr);
  } else {
    throw UsageError("unknown optimizer '" + config.optimizer + "'");
  }
  ParameterSet& params = *task.params;
  TrainResult result;
  result.initial_valid_nll = evaluate(task);
  std::vector<Vec> best;
  double best_valid = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(task.n_train);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(epoch_seed);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.index(i)]);
    }
    double epoch_nll = 0.0, epoch_tokens = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      double batch_tokens = 0.0;
      for (std::size_t k = start; k < end; ++k) batch_tokens += task.tokens(order[k], false);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        Graph g(true, mix_seed(epoch_seed, order[k]));
        Graph::Expr l = task.loss(g, order[k], false);
        epoch_nll += g.scalar(l);
        g.backward(g.scale(l, 1.0 / batch_tokens));
      }
      epoch_tokens += batch_tokens;
      clip_grad_norm(params, config.clip);
      opt->step(params);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = epoch_nll / epoch_tokens;
    rec.valid_nll = task.n_valid ? evaluate(task) : rec.train_nll;
    if (!std::isfinite(rec.train_nll)) throw NumericalError("training diverged");
    result.curve.push_back(rec);
    if (config.verbose) {
      std::cerr << "epoch " << epoch << " train " << rec.train_nll << " valid "
                << rec.valid_nll << "\n";
    }
    if (task.on_epoch) task.on_epoch(rec);
    if (rec.valid_nll < best_valid) {
      best_valid = rec.valid_nll;
      best = snapshot(params);
      result.best_epoch = epoch;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params.at(k).values = best[k];
  result.best_valid_nll = best_valid;
  return result;
}

TrainResult train_lstm(LstmLm& model, const std::vector<std::vector<int>>& train_set,
                       const std::vector<std::vector<int>>& valid_set,
                       const TrainConfig& config,
                       std::function<void(const EpochRecord&)> on_epoch) {
  TrainTask task;
  task.params = &model.params();
  task.n_train = train_set.size();
  task.n_valid = valid_set.size();
  task.loss = [&](Graph& g, std::size_t i, bool valid) {
    return model.loss(g, valid ? valid_set[i] : train_set[i]);
  };
  task.tokens = [&](std::size_t i, bool valid) {
    return static_cast<double>((valid ? valid_set[i] : train_set[i]).size() + 1);
  };
  task.on_epoch = std::move(on_epoch);
  return train(task, config);
}

TrainResult train_rnng(Rnng& model, const std::vector<ActionSequence>& train_set,
                       const std::vector<ActionSequence>& valid_set,
                       const TrainConfig& config,
                       std::function<void(const EpochRecord&)> on_epoch) {
  TrainTask task;
  task.params = &model.params();
  task.n_train = train_set.size();
  task.n_valid = valid_set.size();
  task.loss = [&](Graph& g, std::size_t i, bool valid) {
    return model.loss(g, valid ? valid_set[i] : train_set[i]);
  };
  task.tokens = [&](std::size_t i, bool valid) {
    return static_cast<double>(count_words(valid ? valid_set[i] : train_set[i]));
  };
  task.on_epoch = std::move(on_epoch);
  return train(task, config);
}

void write_loss_curve(const std::string& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_nll,valid_nll\n";
  for (const auto& r : result.curve) {
    out << r.epoch << ',' << fmt(r.train_nll) << ',' << fmt(r.valid_nll) << '\n';
  }
}

}  // namespace hiersurp
