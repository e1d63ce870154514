#ifndef HIERSURP_AUTODIFF_H_
#define HIERSURP_AUTODIFF_H_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hiersurp/common.h"

namespace hiersurp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

class ShapeMismatch : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoLegalAction : public NumericalError {
 public:
  NoLegalAction() : NumericalError("softmax over an empty legal set") {}
};

// Dense f64 tensor of rank 1 or 2. Rank-2 tensors are stored column-major,
// so column j of an embedding table (dim x vocab) is contiguous.
struct Tensor {
  std::vector<int> shape;
  Vec values;
  Vec grad;  // empty until the first gradient is accumulated

  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool has_grad() const { return grad.size() > 0; }
  Vec& ensure_grad();

  MatMap matrix() { return {values.data(), rows(), cols()}; }
  ConstMatMap matrix() const { return {values.data(), rows(), cols()}; }
  MatMap grad_matrix() { return {ensure_grad().data(), rows(), cols()}; }
};

enum class Init { kZero, kUniform01, kXavier, kForgetBias };

// Named, insertion-ordered parameter collection. Tensor addresses are stable.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, std::vector<int> shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  // Embeddings uniform(-0.1, 0.1), matrices Xavier-uniform, biases zero,
  // LSTM forget-gate biases +1. Initialization kind is chosen per tensor.
  void initialize(const std::string& name, Init init, Rng& rng);
  void zero_grad();
  void set_zero();
  std::size_t count() const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  Tensor& at(std::size_t i) { return *tensors_[i]; }
  const Tensor& at(std::size_t i) const { return *tensors_[i]; }

 private:
  std::vector<std::string> order_;
  std::vector<std::unique_ptr<Tensor>> tensors_;
  std::map<std::string, std::size_t> index_;
};

// ---- Inference kernels shared with the graph ----

// Gate layout in W (4H x (I + H)) and b (4H): input, forget, cell, output.
struct LstmState {
  Vec h;
  Vec c;
};

LstmState lstm_forward(const Tensor& w, const Tensor& b, const Vec& x,
                       const Vec& h, const Vec& c);

// Illegal entries come out as -infinity. Throws NoLegalAction.
Vec masked_log_softmax(const Vec& logits, std::span<const char> legal);
Vec log_softmax(const Vec& logits);
double log_sum_exp(std::span<const double> xs);

// ---- Reverse-mode tape ----

class Graph {
 public:
  using Expr = int;

  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  bool training() const { return training_; }

  Expr input(Vec value);
  // Rank-1 parameter used as a vector.
  Expr param(Tensor& p);
  // Column `index` of a (dim x n) table.
  Expr lookup(Tensor& table, int index);
  // W x + b with b optional.
  Expr affine(Tensor& w, Expr x, Tensor* b = nullptr);
  Expr add(Expr a, Expr b);
  Expr concat(std::span<const Expr> parts);
  Expr tanh(Expr a);
  Expr sigmoid(Expr a);
  Expr relu(Expr a);
  Expr cmult(Expr a, Expr b);
  Expr scale(Expr a, double s);
  // Inverted dropout: identity outside training or when rate is 0.
  Expr dropout(Expr a, double rate);
  // Returns the combined [h; c] node; use lstm_h/lstm_c to split it.
  Expr lstm_cell(Tensor& w, Tensor& b, Expr x, Expr h, Expr c);
  Expr lstm_h(Expr hc);
  Expr lstm_c(Expr hc);
  // -log softmax(logits)[index], restricted to `legal` when nonempty.
  Expr pick_neg_log_softmax(Expr logits, int index,
                            std::span<const char> legal = {});
  Expr sum(std::span<const Expr> scalars);

  const Vec& value(Expr e) const { return nodes_[e].value; }
  double scalar(Expr e) const { return nodes_[e].value(0); }
  const Vec& grad(Expr e) const { return nodes_[e].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1 and accumulates into every reachable parameter.
  void backward(Expr out);

 private:
  struct Node {
    Vec value;
    Vec grad;
    std::function<void(Graph&, Expr)> backprop;
    std::vector<Expr> inputs;
    Vec aux;
  };

  Expr push(Vec value, std::vector<Expr> inputs,
            std::function<void(Graph&, Expr)> backprop);
  Vec& grad_of(Expr e);

  bool training_;
  Rng rng_;
  std::vector<Node> nodes_;
};

// ---- Optimizers ----

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterSet& params) = 0;
  virtual std::string describe() const = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParameterSet& params) override;
  std::string describe() const override;
  double lr() const { return lr_; }

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterSet& params) override;
  std::string describe() const override;
  long step_count() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

// Rescales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

// ---- Checkpoints ----

// Text header ("hiersurp-checkpoint 1", kind, key/value metadata), then one
// "tensor <name> <rank> <dims...>" line per parameter followed by its
// little-endian f64 payload, then "end".
void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::map<std::string, std::string>& meta,
                     const ParameterSet& params);

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an already-shaped parameter set.
void restore_parameters(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace hiersurp

#endif  // HIERSURP_AUTODIFF_H_
