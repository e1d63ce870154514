#include "hiersurp/autodiff.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

namespace hiersurp {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec sigmoid_vec(const Vec& x) { return x.unaryExpr(&sigmoid_scalar); }

}  // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  require(!shape.empty() && shape.size() <= 2, "tensor rank must be 1 or 2");
  std::size_t n = 1;
  for (int d : shape) {
    require(d > 0, "tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  values = Vec::Zero(static_cast<Eigen::Index>(n));
}

Vec& Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad = Vec::Zero(values.size());
  return grad;
}

Tensor& ParameterSet::add(const std::string& name, std::vector<int> shape) {
  if (index_.count(name)) throw Error("duplicate parameter " + name);
  index_[name] = tensors_.size();
  order_.push_back(name);
  tensors_.push_back(std::make_unique<Tensor>(std::move(shape)));
  return *tensors_.back();
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter " + name);
  return *tensors_[it->second];
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter " + name);
  return *tensors_[it->second];
}

void ParameterSet::initialize(const std::string& name, Init init, Rng& rng) {
  Tensor& t = get(name);
  switch (init) {
    case Init::kZero:
      t.values.setZero();
      break;
    case Init::kUniform01:
      for (auto& v : t.values) v = rng.uniform(-0.1, 0.1);
      break;
    case Init::kXavier: {
      const double bound = std::sqrt(6.0 / (t.rows() + t.cols()));
      for (auto& v : t.values) v = rng.uniform(-bound, bound);
      break;
    }
    case Init::kForgetBias: {
      t.values.setZero();
      const Eigen::Index h = t.values.size() / 4;
      t.values.segment(h, h).setOnes();
      break;
    }
  }
}

void ParameterSet::zero_grad() {
  for (auto& t : tensors_) {
    if (t->has_grad()) t->grad.setZero();
  }
}

void ParameterSet::set_zero() {
  for (auto& t : tensors_) t->values.setZero();
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t->size();
  return n;
}

LstmState lstm_forward(const Tensor& w, const Tensor& b, const Vec& x,
                       const Vec& h, const Vec& c) {
  const Eigen::Index hd = h.size();
  require(w.rows() == 4 * hd && w.cols() == x.size() + hd && b.rows() == 4 * hd &&
              c.size() == hd,
          "lstm_cell: inconsistent dimensions");
  const ConstMatMap wm = w.matrix();
  Vec a = b.values;
  a.noalias() += wm.leftCols(x.size()) * x;
  a.noalias() += wm.rightCols(hd) * h;
  const Vec i = sigmoid_vec(a.segment(0, hd));
  const Vec f = sigmoid_vec(a.segment(hd, hd));
  const Vec g = a.segment(2 * hd, hd).array().tanh();
  const Vec o = sigmoid_vec(a.segment(3 * hd, hd));
  LstmState out;
  out.c = f.cwiseProduct(c) + i.cwiseProduct(g);
  out.h = o.cwiseProduct(Vec(out.c.array().tanh()));
  return out;
}

double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

Vec log_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Vec masked_log_softmax(const Vec& logits, std::span<const char> legal) {
  require(static_cast<Eigen::Index>(legal.size()) == logits.size(),
          "masked_log_softmax: mask size differs from logits");
  double m = kNegInf;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    if (legal[k]) m = std::max(m, logits(k));
  }
  if (m == kNegInf) throw NoLegalAction();
  double s = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    if (legal[k]) s += std::exp(logits(k) - m);
  }
  const double lse = m + std::log(s);
  Vec out(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    out(k) = legal[k] ? logits(k) - lse : kNegInf;
  }
  return out;
}

// ---- Graph ----

Graph::Expr Graph::push(Vec value, std::vector<Expr> inputs,
                        std::function<void(Graph&, Expr)> backprop) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<Expr>(nodes_.size() - 1);
}

Vec& Graph::grad_of(Expr e) {
  Node& n = nodes_[e];
  if (n.grad.size() == 0) n.grad = Vec::Zero(n.value.size());
  return n.grad;
}

Graph::Expr Graph::input(Vec value) { return push(std::move(value), {}, nullptr); }

Graph::Expr Graph::param(Tensor& p) {
  require(p.shape.size() == 1, "param: expected a rank-1 tensor");
  Tensor* t = &p;
  return push(p.values, {}, [t](Graph& g, Expr self) {
    t->ensure_grad() += g.nodes_[self].grad;
  });
}

Graph::Expr Graph::lookup(Tensor& table, int index) {
  require(index >= 0 && index < table.cols(), "lookup: index out of range");
  Tensor* t = &table;
  return push(table.matrix().col(index), {}, [t, index](Graph& g, Expr self) {
    t->grad_matrix().col(index) += g.nodes_[self].grad;
  });
}

Graph::Expr Graph::affine(Tensor& w, Expr x, Tensor* b) {
  require(w.cols() == nodes_[x].value.size(), "affine: W columns differ from x");
  if (b) require(b->rows() == w.rows(), "affine: bias size differs from W rows");
  Vec y = b ? b->values : Vec::Zero(w.rows());
  y.noalias() += w.matrix() * nodes_[x].value;
  Tensor* wp = &w;
  return push(std::move(y), {x}, [wp, b, x](Graph& g, Expr self) {
    const Vec& gy = g.nodes_[self].grad;
    wp->grad_matrix().noalias() += gy * g.nodes_[x].value.transpose();
    if (b) b->ensure_grad() += gy;
    g.grad_of(x).noalias() += wp->matrix().transpose() * gy;
  });
}

Graph::Expr Graph::add(Expr a, Expr b) {
  require(nodes_[a].value.size() == nodes_[b].value.size(), "add: size mismatch");
  return push(nodes_[a].value + nodes_[b].value, {a, b}, [a, b](Graph& g, Expr self) {
    const Vec gy = g.nodes_[self].grad;
    g.grad_of(a) += gy;
    g.grad_of(b) += gy;
  });
}

Graph::Expr Graph::concat(std::span<const Expr> parts) {
  Eigen::Index n = 0;
  for (Expr p : parts) n += nodes_[p].value.size();
  Vec y(n);
  Eigen::Index at = 0;
  for (Expr p : parts) {
    y.segment(at, nodes_[p].value.size()) = nodes_[p].value;
    at += nodes_[p].value.size();
  }
  std::vector<Expr> inputs(parts.begin(), parts.end());
  return push(std::move(y), inputs, [](Graph& g, Expr self) {
    Eigen::Index off = 0;
    const std::vector<Expr> ins = g.nodes_[self].inputs;
    for (Expr p : ins) {
      const Eigen::Index len = g.nodes_[p].value.size();
      g.grad_of(p) += g.nodes_[self].grad.segment(off, len);
      off += len;
    }
  });
}

Graph::Expr Graph::tanh(Expr a) {
  Vec y = nodes_[a].value.array().tanh();
  return push(std::move(y), {a}, [a](Graph& g, Expr self) {
    const Vec& y = g.nodes_[self].value;
    const Vec d = g.nodes_[self].grad.array() * (1.0 - y.array().square());
    g.grad_of(a) += d;
  });
}

Graph::Expr Graph::sigmoid(Expr a) {
  return push(sigmoid_vec(nodes_[a].value), {a}, [a](Graph& g, Expr self) {
    const Vec& y = g.nodes_[self].value;
    const Vec d = g.nodes_[self].grad.array() * y.array() * (1.0 - y.array());
    g.grad_of(a) += d;
  });
}

Graph::Expr Graph::relu(Expr a) {
  Vec y = nodes_[a].value.cwiseMax(0.0);
  return push(std::move(y), {a}, [a](Graph& g, Expr self) {
    const Vec& x = g.nodes_[a].value;
    const Vec d = (x.array() > 0.0).select(g.nodes_[self].grad, 0.0);
    g.grad_of(a) += d;
  });
}

Graph::Expr Graph::cmult(Expr a, Expr b) {
  require(nodes_[a].value.size() == nodes_[b].value.size(), "cmult: size mismatch");
  return push(nodes_[a].value.cwiseProduct(nodes_[b].value), {a, b},
              [a, b](Graph& g, Expr self) {
                const Vec gy = g.nodes_[self].grad;
                const Vec ga = gy.cwiseProduct(g.nodes_[b].value);
                const Vec gb = gy.cwiseProduct(g.nodes_[a].value);
                g.grad_of(a) += ga;
                g.grad_of(b) += gb;
              });
}

Graph::Expr Graph::scale(Expr a, double s) {
  return push(nodes_[a].value * s, {a}, [a, s](Graph& g, Expr self) {
    const Vec d = g.nodes_[self].grad * s;
    g.grad_of(a) += d;
  });
}

Graph::Expr Graph::dropout(Expr a, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must be in [0, 1)");
  if (!training_ || rate == 0.0) return a;
  const Eigen::Index n = nodes_[a].value.size();
  Vec mask(n);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index k = 0; k < n; ++k) mask(k) = rng_.bernoulli(rate) ? 0.0 : keep;
  Expr e = push(nodes_[a].value.cwiseProduct(mask), {a}, [a](Graph& g, Expr self) {
    const Vec d = g.nodes_[self].grad.cwiseProduct(g.nodes_[self].aux);
    g.grad_of(a) += d;
  });
  nodes_[e].aux = std::move(mask);
  return e;
}

Graph::Expr Graph::lstm_cell(Tensor& w, Tensor& b, Expr x, Expr h, Expr c) {
  const Vec& xv = nodes_[x].value;
  const Vec& hv = nodes_[h].value;
  const Vec& cv = nodes_[c].value;
  const Eigen::Index hd = hv.size();
  require(w.rows() == 4 * hd && w.cols() == xv.size() + hd && b.rows() == 4 * hd &&
              cv.size() == hd,
          "lstm_cell: inconsistent dimensions");
  const ConstMatMap wm = std::as_const(w).matrix();
  Vec a = b.values;
  a.noalias() += wm.leftCols(xv.size()) * xv;
  a.noalias() += wm.rightCols(hd) * hv;
  // aux holds the activated gates [i; f; g; o] followed by tanh(c').
  Vec aux(5 * hd);
  aux.segment(0, hd) = sigmoid_vec(a.segment(0, hd));
  aux.segment(hd, hd) = sigmoid_vec(a.segment(hd, hd));
  aux.segment(2 * hd, hd) = a.segment(2 * hd, hd).array().tanh();
  aux.segment(3 * hd, hd) = sigmoid_vec(a.segment(3 * hd, hd));
  Vec out(2 * hd);
  out.segment(hd, hd) = aux.segment(hd, hd).cwiseProduct(cv) +
                        aux.segment(0, hd).cwiseProduct(aux.segment(2 * hd, hd));
  aux.segment(4 * hd, hd) = out.segment(hd, hd).array().tanh();
  out.segment(0, hd) = aux.segment(3 * hd, hd).cwiseProduct(aux.segment(4 * hd, hd));

  Tensor* wp = &w;
  Tensor* bp = &b;
  Expr e = push(std::move(out), {x, h, c}, [wp, bp, x, h, c, hd](Graph& g, Expr self) {
    const Node& n = g.nodes_[self];
    const Vec& aux = n.aux;
    const auto i = aux.segment(0, hd).array();
    const auto f = aux.segment(hd, hd).array();
    const auto gg = aux.segment(2 * hd, hd).array();
    const auto o = aux.segment(3 * hd, hd).array();
    const auto tc = aux.segment(4 * hd, hd).array();
    const auto dh = n.grad.segment(0, hd).array();
    const Eigen::ArrayXd dc = n.grad.segment(hd, hd).array() + dh * o * (1.0 - tc.square());
    Vec da(4 * hd);
    da.segment(0, hd) = (dc * gg * i * (1.0 - i)).matrix();
    da.segment(hd, hd) = (dc * g.nodes_[c].value.array() * f * (1.0 - f)).matrix();
    da.segment(2 * hd, hd) = (dc * i * (1.0 - gg.square())).matrix();
    da.segment(3 * hd, hd) = (dh * tc * o * (1.0 - o)).matrix();
    const Vec dcprev = (dc * f).matrix();

    const Vec& xv = g.nodes_[x].value;
    const Vec& hv = g.nodes_[h].value;
    MatMap gw = wp->grad_matrix();
    gw.leftCols(xv.size()).noalias() += da * xv.transpose();
    gw.rightCols(hd).noalias() += da * hv.transpose();
    bp->ensure_grad() += da;
    const ConstMatMap wm = std::as_const(*wp).matrix();
    g.grad_of(x).noalias() += wm.leftCols(xv.size()).transpose() * da;
    g.grad_of(h).noalias() += wm.rightCols(hd).transpose() * da;
    g.grad_of(c) += dcprev;
  });
  nodes_[e].aux = std::move(aux);
  return e;
}

Graph::Expr Graph::lstm_h(Expr hc) {
  const Eigen::Index hd = nodes_[hc].value.size() / 2;
  return push(nodes_[hc].value.head(hd), {hc}, [hc, hd](Graph& g, Expr self) {
    g.grad_of(hc).head(hd) += g.nodes_[self].grad;
  });
}

Graph::Expr Graph::lstm_c(Expr hc) {
  const Eigen::Index hd = nodes_[hc].value.size() / 2;
  return push(nodes_[hc].value.tail(hd), {hc}, [hc, hd](Graph& g, Expr self) {
    g.grad_of(hc).tail(hd) += g.nodes_[self].grad;
  });
}

Graph::Expr Graph::pick_neg_log_softmax(Expr logits, int index,
                                        std::span<const char> legal) {
  const Vec& z = nodes_[logits].value;
  require(index >= 0 && index < z.size(), "pick_neg_log_softmax: index out of range");
  Vec logp = legal.empty() ? log_softmax(z) : masked_log_softmax(z, legal);
  if (!std::isfinite(logp(index))) {
    throw NumericalError("pick_neg_log_softmax: picked entry is masked");
  }
  Vec y(1);
  y(0) = -logp(index);
  Expr e = push(std::move(y), {logits}, [logits, index](Graph& g, Expr self) {
    Vec d = g.nodes_[self].aux * g.nodes_[self].grad(0);
    d(index) -= g.nodes_[self].grad(0);
    g.grad_of(logits) += d;
  });
  // Softmax probabilities (zero where masked).
  nodes_[e].aux = logp.unaryExpr([](double v) { return std::isfinite(v) ? std::exp(v) : 0.0; });
  return e;
}

Graph::Expr Graph::sum(std::span<const Expr> scalars) {
  Vec y = Vec::Zero(1);
  for (Expr s : scalars) {
    require(nodes_[s].value.size() == 1, "sum: expected scalars");
    y(0) += nodes_[s].value(0);
  }
  std::vector<Expr> inputs(scalars.begin(), scalars.end());
  return push(std::move(y), inputs, [](Graph& g, Expr self) {
    const double gy = g.nodes_[self].grad(0);
    const std::vector<Expr> ins = g.nodes_[self].inputs;
    for (Expr s : ins) g.grad_of(s)(0) += gy;
  });
}

void Graph::backward(Expr out) {
  require(nodes_[out].value.size() == 1, "backward: output must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0);
  nodes_[out].grad = Vec::Ones(1);
  for (Expr e = out; e >= 0; --e) {
    Node& n = nodes_[e];
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, e);
  }
}

// ---- Optimizers ----

void Sgd::step(ParameterSet& params) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params.at(k);
    if (t.has_grad()) t.values -= lr_ * t.grad;
  }
}

std::string Sgd::describe() const {
  std::ostringstream out;
  out << "sgd lr=" << lr_;
  return out.str();
}

void Adam::step(ParameterSet& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), Vec());
    v_.assign(params.size(), Vec());
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = Vec::Zero(params.at(k).values.size());
      v_[k] = Vec::Zero(params.at(k).values.size());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params.at(k);
    if (!t.has_grad()) continue;
    require(m_[k].size() == t.values.size(), "adam: moment shape mismatch");
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * t.grad;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * t.grad.cwiseAbs2();
    t.values.array() -=
        lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

std::string Adam::describe() const {
  std::ostringstream out;
  out << "adam lr=" << lr_ << " beta1=" << beta1_ << " beta2=" << beta2_
      << " eps=" << eps_;
  return out.str();
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params.at(k).has_grad()) sq += params.at(k).grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params.at(k).has_grad()) params.at(k).grad *= s;
    }
  }
  return norm;
}

// ---- Checkpoints ----

namespace {

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char buf[8];
  for (int k = 0; k < 8; ++k) buf[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  out.write(buf, 8);
}

double read_f64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw DataError("truncated checkpoint");
  std::uint64_t bits = 0;
  for (int k = 7; k >= 0; --k) bits = (bits << 8) | buf[k];
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string read_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("truncated checkpoint");
  return line;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::map<std::string, std::string>& meta,
                     const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << "hiersurp-checkpoint 1\n";
  out << "kind " << kind << "\n";
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint metadata must be single-token keys and one-line values");
    }
    out << "meta " << k << " " << v << "\n";
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    out << "tensor " << params.names()[i] << " " << t.shape.size();
    for (int d : t.shape) out << " " << d;
    out << "\n";
    for (double v : t.values) write_f64(out, v);
    out << "\n";
  }
  out << "end\n";
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  if (read_line(in) != "hiersurp-checkpoint 1") {
    throw DataError("unsupported checkpoint format in " + path);
  }
  Checkpoint ckpt;
  for (;;) {
    const std::string line = read_line(in);
    if (line == "end") break;
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    if (tag == "kind") {
      fields >> ckpt.kind;
    } else if (tag == "meta") {
      std::string key;
      fields >> key;
      std::string value;
      std::getline(fields, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (tag == "tensor") {
      std::string name;
      int rank = 0;
      fields >> name >> rank;
      if (!fields || rank < 1 || rank > 2) throw DataError("bad tensor header: " + line);
      std::vector<int> shape(rank);
      for (int& d : shape) fields >> d;
      if (!fields) throw DataError("bad tensor header: " + line);
      Tensor t(shape);
      for (auto& v : t.values) v = read_f64(in);
      if (in.get() != '\n') throw DataError("corrupt tensor payload for " + name);
      ckpt.tensors.emplace_back(name, std::move(t));
    } else {
      throw DataError("unexpected checkpoint line: " + line);
    }
  }
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, ParameterSet& params) {
  if (ckpt.tensors.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                    " tensors, model expects " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!params.contains(name)) throw DataError("unexpected tensor " + name);
    Tensor& dst = params.get(name);
    if (dst.shape != t.shape) throw DataError("shape mismatch for tensor " + name);
    dst.values = t.values;
  }
}

}  // namespace hiersurp
