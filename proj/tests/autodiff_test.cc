#include "hiersurp/autodiff.h"

#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.h"

namespace hiersurp {
namespace {

using testing::grad_check;

void randomize(ParameterSet& ps, Rng& rng, double scale = 1.0) {
  for (std::size_t k = 0; k < ps.size(); ++k) {
    for (auto& v : ps.at(k).values) v = rng.uniform(-scale, scale);
  }
}

// Reduces a vector to a scalar through a fixed random projection.
Graph::Expr project(Graph& g, ParameterSet& ps, Graph::Expr v) {
  return g.affine(ps.get("proj"), v);
}

TEST_CASE("lstm cell analytic cases") {
  const int h = 4;
  Tensor w({4 * h, 3 + h}), b({4 * h});
  LstmState s = lstm_forward(w, b, Vec::Zero(3), Vec::Zero(h), Vec::Zero(h));
  CHECK(s.h.isZero());
  CHECK(s.c.isZero());

  // With zero weights every gate is sigmoid(0) = 0.5 and the candidate is
  // tanh(0) = 0, so dc'/dc = f = 0.5 and dh/dc = 0.
  ParameterSet ps;
  ps.add("w", {4 * h, 3 + h});
  ps.add("b", {4 * h});
  Tensor& c0 = ps.add("c0", {h});
  c0.values.setConstant(0.3);
  Graph g(true);
  auto hc = g.lstm_cell(ps.get("w"), ps.get("b"), g.input(Vec::Zero(3)),
                        g.input(Vec::Zero(h)), g.param(c0));
  Graph::Expr parts[] = {g.lstm_c(hc)};
  auto one = g.concat(parts);
  Tensor& ones = ps.add("ones", {1, h});
  ones.values.setOnes();
  g.backward(g.affine(ones, one));
  CHECK(c0.grad.isApproxToConstant(0.5));
  // d c'/d a_f = c * f (1 - f) = 0.3 * 0.25.
  CHECK(ps.get("b").grad(h) == doctest::Approx(0.3 * 0.25));
}

TEST_CASE("lstm cell finite differences") {
  Rng rng(1);
  for (int dim : {8, 12}) {
    ParameterSet ps;
    ps.add("w", {4 * dim, dim + dim});
    ps.add("b", {4 * dim});
    ps.add("x", {dim});
    ps.add("h", {dim});
    ps.add("c", {dim});
    ps.add("proj", {1, 2 * dim});
    randomize(ps, rng);
    auto r = grad_check(ps, [&](Graph& g) {
      auto hc = g.lstm_cell(ps.get("w"), ps.get("b"), g.param(ps.get("x")),
                            g.param(ps.get("h")), g.param(ps.get("c")));
      // Second step so gradients flow through h and c.
      auto hc2 = g.lstm_cell(ps.get("w"), ps.get("b"), g.lstm_h(hc), g.lstm_h(hc),
                             g.lstm_c(hc));
      return project(g, ps, hc2);
    });
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("elementwise and structural ops finite differences") {
  Rng rng(2);
  ParameterSet ps;
  const int n = 10;
  ps.add("a", {n});
  ps.add("b", {n});
  ps.add("w", {n, 2 * n});
  ps.add("bias", {n});
  ps.add("emb", {n, 5});
  ps.add("proj", {1, n});
  randomize(ps, rng);
  auto r = grad_check(ps, [&](Graph& g) {
    auto a = g.param(ps.get("a"));
    auto b = g.param(ps.get("b"));
    Graph::Expr parts[] = {g.tanh(a), g.sigmoid(b)};
    auto cat = g.concat(parts);
    auto z = g.affine(ps.get("w"), cat, &ps.get("bias"));
    auto y = g.add(g.relu(z), g.cmult(g.lookup(ps.get("emb"), 3), a));
    y = g.add(y, g.scale(g.lookup(ps.get("emb"), 1), -1.5));
    y = g.dropout(y, 0.3);
    Graph::Expr terms[] = {project(g, ps, y),
                           g.pick_neg_log_softmax(y, 2),
                           g.pick_neg_log_softmax(y, 4, std::vector<char>{1, 0, 1, 1, 1, 0, 0, 1, 1, 0})};
    return g.sum(terms);
  });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("masked log softmax") {
  Vec z = Vec::Zero(5);
  std::vector<char> mask{1, 0, 1, 1, 0};
  Vec lp = masked_log_softmax(z, mask);
  CHECK(lp(0) == doctest::Approx(-std::log(3.0)));
  CHECK(std::isinf(lp(1)));
  std::vector<char> single{0, 0, 0, 1, 0};
  CHECK(masked_log_softmax(z, single)(3) == 0.0);
  CHECK_THROWS_AS(masked_log_softmax(z, std::vector<char>(5, 0)), NoLegalAction);
  CHECK_THROWS_AS(masked_log_softmax(z, std::vector<char>(4, 1)), ShapeMismatch);

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Vec logits(20);
    std::vector<char> legal(20);
    for (int k = 0; k < 20; ++k) {
      logits(k) = rng.uniform(-30, 30);
      legal[k] = rng.bernoulli(0.5);
    }
    legal[trial % 20] = 1;
    Vec out = masked_log_softmax(logits, legal);
    double total = 0.0;
    for (int k = 0; k < 20; ++k) {
      if (legal[k]) total += std::exp(out(k));
      else CHECK(std::exp(out(k)) == 0.0);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("optimizers") {
  ParameterSet ps;
  Tensor& p = ps.add("p", {3});
  p.ensure_grad().setConstant(0.1);
  Sgd(20.0).step(ps);
  CHECK(p.values.isApproxToConstant(-2.0));

  p.values.setZero();
  p.grad.setConstant(0.7);
  Adam adam(0.001);
  adam.step(ps);
  for (double v : p.values) CHECK(v == doctest::Approx(-0.001).epsilon(1e-6));

  ParameterSet zs;
  Tensor& q = zs.add("q", {2});
  q.values << 1.0, -1.0;
  q.ensure_grad().setZero();
  Adam adam2(0.5);
  adam2.step(zs);
  Sgd(3.0).step(zs);
  CHECK(q.values(0) == 1.0);
  CHECK(q.values(1) == -1.0);
}

TEST_CASE("gradient clipping") {
  ParameterSet ps;
  ps.add("a", {2}).ensure_grad() << 3.0, 4.0;
  ps.add("b", {1}).ensure_grad() << 0.0;
  CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(5.0));
  CHECK(ps.get("a").grad(0) == 3.0);
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(ps.get("a").grad.norm() == doctest::Approx(1.0));
}

TEST_CASE("dropout") {
  Vec x = Vec::Ones(100000);
  Graph train(true, 5);
  auto e = train.dropout(train.input(x), 0.0);
  CHECK(train.value(e) == x);
  auto d = train.dropout(train.input(x), 0.3);
  const Vec& y = train.value(d);
  const double kept = (y.array() > 0).cast<double>().sum() / y.size();
  CHECK(std::abs(kept - 0.7) < 0.01);
  CHECK(y.maxCoeff() == doctest::Approx(1.0 / 0.7));
  Graph infer(false, 5);
  CHECK(infer.value(infer.dropout(infer.input(x), 0.5)) == x);
  CHECK_THROWS_AS(train.dropout(train.input(x), 1.0), UsageError);
}

TEST_CASE("initialization") {
  Rng rng(4);
  ParameterSet ps;
  ps.add("emb", {8, 100});
  ps.add("w", {16, 48});
  ps.add("b", {16});
  ps.initialize("emb", Init::kUniform01, rng);
  ps.initialize("w", Init::kXavier, rng);
  ps.initialize("b", Init::kForgetBias, rng);
  CHECK(ps.get("emb").values.cwiseAbs().maxCoeff() <= 0.1);
  CHECK(ps.get("w").values.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 64));
  CHECK(ps.get("b").values.segment(4, 4).isOnes());
  CHECK(ps.get("b").values.head(4).isZero());
  CHECK(ps.count() == 800 + 768 + 16);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(6);
  ParameterSet ps;
  ps.add("w", {3, 4});
  ps.add("b", {4});
  randomize(ps, rng);
  const auto path = std::filesystem::temp_directory_path() / "hiersurp_ckpt_test.bin";
  save_checkpoint(path.string(), "test", {{"dim", "4"}, {"note", "two words"}}, ps);
  Checkpoint ckpt = load_checkpoint(path.string());
  CHECK(ckpt.kind == "test");
  CHECK(ckpt.meta.at("note") == "two words");
  ParameterSet other;
  other.add("w", {3, 4});
  other.add("b", {4});
  restore_parameters(ckpt, other);
  CHECK(other.get("w").values == ps.get("w").values);
  CHECK(other.get("b").values == ps.get("b").values);
  ParameterSet wrong;
  wrong.add("w", {4, 3});
  wrong.add("b", {4});
  CHECK_THROWS_AS(restore_parameters(ckpt, wrong), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("shape errors") {
  ParameterSet ps;
  Tensor& w = ps.add("w", {3, 4});
  Graph g;
  CHECK_THROWS_AS(g.affine(w, g.input(Vec::Zero(3))), ShapeMismatch);
  CHECK_THROWS_AS(g.lookup(w, 4), ShapeMismatch);
}

}  // namespace
}  // namespace hiersurp
