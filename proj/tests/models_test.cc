#include "hiersurp/models.h"

#include <cmath>
#include <functional>

#include "doctest.h"
#include "gradcheck.h"
#include "test_util.h"

namespace hiersurp {
namespace {

RnngConfig small_rnng(Strategy s, int vocab, int labels, int dim = 8) {
  RnngConfig c;
  c.strategy = s;
  c.vocab = vocab;
  c.n_labels = labels;
  c.dim = dim;
  c.layers = 2;
  return c;
}

// Encodes a tree whose terminals are already vocabulary ids written as
// decimal strings.
ActionSequence encode(const Tree& t, Strategy s, SymbolTable& labels) {
  SymbolTable terms;
  ActionSequence seq = tree_to_actions(t, s, labels, terms);
  for (Action& a : seq.actions) {
    if (a.kind == ActionKind::kGen) a.id = std::stoi(terms.str(a.id));
  }
  return seq;
}

Tree numbered_tree(Rng& rng, int vocab) {
  Tree t = testing::random_tree(rng, 0, 4);
  std::function<void(Tree&)> renumber = [&](Tree& n) {
    if (n.is_terminal()) {
      n.label = std::to_string(rng.index(vocab));
      return;
    }
    for (Tree& c : n.children) renumber(c);
  };
  renumber(t);
  return t;
}

TEST_CASE("zero-initialized LSTM LM is uniform") {
  LstmLm lm({12, 8, 2, 0.2}, 1);
  lm.params().set_zero();
  std::vector<int> ids{3, 0, 11, 5};
  SentenceScores s = lm.score(ids);
  REQUIRE(s.per_position.size() == 5);
  for (double v : s.per_position) CHECK(v == doctest::Approx(std::log(13.0)));
  CHECK(lm.score(std::vector<int>{4}).total ==
        doctest::Approx(2 * std::log(13.0)));
  CHECK_THROWS_AS(lm.score(std::vector<int>{12}), IdOutOfRange);
}

TEST_CASE("LSTM LM distributions are normalized and match the loss") {
  LstmLm lm({10, 8, 2, 0.2}, 2);
  std::vector<int> ids{1, 2, 9, 9, 0};
  for (const Vec& lp : lm.log_distributions(ids)) {
    CHECK(std::abs(lp.array().exp().sum() - 1.0) < 1e-12);
  }
  Graph g(false);
  CHECK(g.scalar(lm.loss(g, ids)) == doctest::Approx(lm.score(ids).total).epsilon(1e-12));
}

TEST_CASE("LSTM LM gradients") {
  LstmLm lm({6, 5, 2, 0.3}, 3);
  std::vector<int> ids{1, 4, 2};
  auto r = testing::grad_check(lm.params(), [&](Graph& g) { return lm.loss(g, ids); });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("zero-initialized RNNG is uniform over legal actions") {
  const int vocab = 7, labels = 3;
  SymbolTable lab({"S", "NP", "VP"});
  for (Strategy s : {Strategy::kTopDown, Strategy::kLeftCorner}) {
    Rnng m(small_rnng(s, vocab, labels), 1);
    m.params().set_zero();
    ActionSequence seq = encode(parse_tree("(S (NP 1 2) (VP 3))"), s, lab);
    SentenceScores sc = m.score(seq);
    Derivation d(s, 3);
    for (std::size_t i = 0; i < seq.actions.size(); ++i) {
      LegalActions legal = d.legal();
      const int n_legal = (legal.open ? labels : 0) + legal.gen + legal.reduce + legal.finish;
      double expect = std::log(static_cast<double>(n_legal));
      if (seq.actions[i].kind == ActionKind::kGen) expect += std::log(double(vocab));
      CHECK(sc.per_position[i] == doctest::Approx(expect));
      d.apply(seq.actions[i]);
    }
    // A top-down derivation can only finish; left corner may still open.
    CHECK(sc.per_position.back() ==
          doctest::Approx(s == Strategy::kTopDown ? 0.0 : std::log(labels + 1.0)));
  }
}

TEST_CASE("RNNG scores the nested tree under both strategies") {
  SymbolTable lab({"X1", "X2", "X3"});
  for (Strategy s : {Strategy::kTopDown, Strategy::kLeftCorner}) {
    Rnng m(small_rnng(s, 4, 3), 5);
    ActionSequence seq = encode(parse_tree("(X3 (X2 (X1 0 1) 2) 3)"), s, lab);
    SentenceScores sc = m.score(seq);
    CHECK(sc.per_position.size() == seq.actions.size() + 1);
    CHECK(std::isfinite(sc.total));
    ActionSequence wrong = seq;
    wrong.actions.insert(wrong.actions.begin() + 1, Action::reduce());
    CHECK_THROWS_AS(m.score(wrong), IllegalActionInSequence);
  }
}

TEST_CASE("training graph and inference path agree") {
  Rng rng(8);
  SymbolTable lab({"S", "NP", "VP", "PP", "X", "ADJP"});
  for (Strategy s : {Strategy::kTopDown, Strategy::kLeftCorner}) {
    Rnng m(small_rnng(s, 9, 6), 11);
    for (int i = 0; i < 30; ++i) {
      ActionSequence seq = encode(numbered_tree(rng, 9), s, lab);
      Graph g(false);
      const double graph_nll = g.scalar(m.loss(g, seq));
      CHECK(std::abs(graph_nll - m.score(seq).total) < 1e-10);
    }
  }
}

TEST_CASE("stack-only: equal stacks give equal action logits") {
  Rnng td(small_rnng(Strategy::kTopDown, 5, 2), 21);
  Rnng lc(small_rnng(Strategy::kLeftCorner, 5, 2), 21);
  RnngState a = td.initial_state(3);
  for (Action x : {Action::open(1), Action::gen(3), Action::reduce()}) a = td.apply(a, x);
  RnngState b = lc.initial_state(3);
  for (Action x : {Action::gen(3), Action::open(1), Action::reduce()}) b = lc.apply(b, x);
  CHECK(td.raw_action_logits(a) == lc.raw_action_logits(b));

  // Within one strategy: (X (Y w)) reached by different unary orders is a
  // different stack, while a shared prefix gives identical logits.
  RnngState c = lc.initial_state(3);
  for (Action x : {Action::gen(3), Action::open(1), Action::reduce()}) c = lc.apply(c, x);
  CHECK(lc.raw_action_logits(c) == lc.raw_action_logits(b));
  RnngState d = lc.apply(lc.apply(c, Action::open(0)), Action::gen(2));
  RnngState e = td.apply(td.apply(a, Action::open(0)), Action::gen(2));
  CHECK(lc.raw_action_logits(d) != td.raw_action_logits(e));
}

TEST_CASE("compose") {
  Rnng m(small_rnng(Strategy::kTopDown, 4, 2, 6), 3);
  {
    Rnng z(small_rnng(Strategy::kTopDown, 4, 2, 6), 3);
    z.params().set_zero();
    Graph g(false);
    Graph::Expr kids[] = {g.input(Vec::Ones(6))};
    CHECK(g.value(z.compose(g, 1, kids)).isZero());
  }
  ParameterSet extra;
  for (int k = 0; k < 3; ++k) {
    extra.add("child" + std::to_string(k), {6});
  }
  Rng rng(4);
  for (std::size_t k = 0; k < extra.size(); ++k) {
    for (auto& v : extra.at(k).values) v = rng.uniform(-1, 1);
  }
  Tensor proj({1, 6});
  for (auto& v : proj.values) v = rng.uniform(-1, 1);
  auto build = [&](Graph& g) {
    Graph::Expr kids[] = {g.param(extra.get("child0")), g.param(extra.get("child1")),
                          g.param(extra.get("child2"))};
    return g.affine(proj, m.compose(g, 1, kids));
  };
  auto r1 = testing::grad_check(extra, build);
  auto r2 = testing::grad_check(m.params(), build);
  CHECK(r1.max_rel_error < 1e-4);
  CHECK(r2.max_rel_error < 1e-4);
  // Same inputs, different graph position: same output.
  Graph g(false);
  g.input(Vec::Zero(3));
  Graph::Expr kids[] = {g.input(extra.get("child0").values)};
  Graph h(false);
  Graph::Expr kids2[] = {h.input(extra.get("child0").values)};
  CHECK(g.value(m.compose(g, 0, kids)) == h.value(m.compose(h, 0, kids2)));
}

TEST_CASE("RNNG joint loss gradients") {
  SymbolTable lab({"A", "B"});
  for (Strategy s : {Strategy::kTopDown, Strategy::kLeftCorner}) {
    Rnng m(small_rnng(s, 4, 2, 5), 6);
    // Nonzero biases keep the ReLU away from its kink when dropout zeroes
    // a whole input.
    Rng rng(7);
    for (auto& v : m.params().get("head_b").values) v = rng.uniform(-0.5, 0.5);
    ActionSequence seq = encode(parse_tree("(A (B 0 1) (A 2) 3)"), s, lab);
    auto r = testing::grad_check(m.params(), [&](Graph& g) { return m.loss(g, seq); });
    CHECK(r.max_rel_error < 1e-4);
  }
}

// Sums p(tree, sentence) over every sentence of length n and every legal
// derivation by exhaustive search over model states.
double total_mass(const Rnng& m, int n) {
  std::function<double(const RnngState&)> go = [&](const RnngState& st) {
    RnngHead h = m.head(st);
    double mass = 0.0;
    if (h.legal.finish) mass += std::exp(h.action_logp(m.finish_class()));
    if (h.legal.open) {
      for (int l = 0; l < m.config().n_labels; ++l) {
        mass += std::exp(h.action_logp(l)) * go(m.apply(st, Action::open(l)));
      }
    }
    if (h.legal.gen) {
      Vec wl = m.word_log_probs(h);
      for (int w = 0; w < m.config().vocab; ++w) {
        mass += std::exp(h.action_logp(m.gen_class()) + wl(w)) *
                go(m.apply(st, Action::gen(w)));
      }
    }
    if (h.legal.reduce) {
      mass += std::exp(h.action_logp(m.reduce_class())) * go(m.apply(st, Action::reduce()));
    }
    return mass;
  };
  return go(m.initial_state(n));
}

TEST_CASE("joint probability over a bounded toy space sums to one") {
  for (Strategy s : {Strategy::kTopDown, Strategy::kLeftCorner}) {
    RnngConfig c = small_rnng(s, 2, 2, 4);
    c.limits.max_actions = 6;
    Rnng m(c, 9);
    CHECK(total_mass(m, 2) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

std::vector<ActionSequence> toy_corpus(Strategy s, int n, std::uint64_t seed) {
  Rng rng(seed);
  SymbolTable lab({"S", "NP", "VP", "PP", "X", "ADJP"});
  std::vector<ActionSequence> out;
  for (int i = 0; i < n; ++i) {
    // Skewed lexicon so there is something to learn.
    Tree t = testing::random_tree(rng, 0, 3);
    std::function<void(Tree&)> lex = [&](Tree& x) {
      if (x.is_terminal()) {
        x.label = std::to_string(std::min(rng.index(12), rng.index(12)));
        return;
      }
      for (Tree& ch : x.children) lex(ch);
    };
    lex(t);
    out.push_back(encode(t, s, lab));
  }
  return out;
}

TEST_CASE("RNNG training improves on the uniform baseline") {
  auto train_set = toy_corpus(Strategy::kLeftCorner, 200, 1);
  auto valid_set = toy_corpus(Strategy::kLeftCorner, 20, 2);
  RnngConfig c = small_rnng(Strategy::kLeftCorner, 12, 6, 16);
  Rnng m(c, 3);
  Rnng z(c, 3);
  z.params().set_zero();
  double uniform = 0.0, words = 0.0;
  for (const auto& seq : train_set) {
    uniform += z.score(seq).total;
    words += count_words(seq);
  }
  uniform /= words;
  TrainConfig tc = rnng_train_defaults();
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.lr = 0.01;
  TrainResult r = train_rnng(m, train_set, valid_set, tc);
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[0].train_nll < uniform);
  CHECK(r.best_valid_nll <= r.curve[0].valid_nll);

  // Same seed, same parameters after training.
  Rnng m2(c, 3);
  train_rnng(m2, train_set, valid_set, tc);
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    CHECK(m.params().at(k).values == m2.params().at(k).values);
  }
  CHECK_THROWS_AS(train_rnng(m2, {}, valid_set, tc), EmptyCorpus);
}

TEST_CASE("LSTM training with the default optimizer settings") {
  Rng rng(5);
  std::vector<std::vector<int>> train_set, valid_set;
  for (int i = 0; i < 620; ++i) {
    std::vector<int> ids;
    int prev = 0;
    for (int k = 0; k < 6; ++k) {
      prev = (prev * 3 + static_cast<int>(rng.index(3))) % 10;
      ids.push_back(prev);
    }
    (i < 600 ? train_set : valid_set).push_back(ids);
  }
  LstmLm lm({10, 16, 2, 0.2}, 4);
  TrainConfig tc = lstm_train_defaults();
  CHECK(tc.optimizer == "sgd");
  CHECK(tc.lr == 20.0);
  CHECK(tc.batch_size == 64);
  CHECK(tc.epochs == 40);
  tc.epochs = 8;
  TrainResult r = train_lstm(lm, train_set, valid_set, tc);
  CHECK(r.best_valid_nll < r.initial_valid_nll);
  CHECK(r.best_valid_nll <= r.curve[0].valid_nll);
}

TEST_CASE("model checkpoints") {
  Rnng m(small_rnng(Strategy::kLeftCorner, 5, 2), 1);
  const std::string path = "rnng_ckpt_test.bin";
  save_checkpoint(path, "rnng", m.meta(), m.params());
  Checkpoint ck = load_checkpoint(path);
  RnngConfig c = Rnng::config_from_meta(ck.meta);
  CHECK(c.strategy == Strategy::kLeftCorner);
  CHECK(c.dim == 8);
  Rnng back(c, 99);
  restore_parameters(ck, back.params());
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    CHECK(m.params().at(k).values == back.params().at(k).values);
  }
  std::remove(path.c_str());
}

}  // namespace
}  // namespace hiersurp
