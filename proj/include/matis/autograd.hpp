#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
// A Tape records one forward pass; backward() walks it in reverse and
// accumulates gradients into the Parameters that were bound to it.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace matis::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
};

/// Owns parameters in registration order; order defines checkpoint layout.
class ParameterStore {
 public:
  Parameter& add(std::string name, Mat value);
  std::vector<std::unique_ptr<Parameter>>& params() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& params() const { return params_; }
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  /// With track_gradients false, parameters enter as constants and no
  /// backward closures are kept.
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input; no gradient flows into it.
  Var constant(Mat value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Parameter& p);

  /// Records a computed node. inputs decide whether it needs a gradient.
  Var record(Mat value, std::initializer_list<Var> inputs,
             std::function<void(Tape&, int self)> backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

  const Mat& value(int id) const { return nodes_[id].value; }
  Mat& grad(int id) { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Adds g into the gradient of id if that node needs one.
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    if (nodes_[id].needs_grad) nodes_[id].grad.noalias() += g;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, int)> backward;
  };
  std::vector<Node> nodes_;
  bool track_ = true;
};

// --- operations -----------------------------------------------------------

Var matmul(Var a, Var b);     // a b
Var matmul_nt(Var a, Var b);  // a b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// x + broadcast of a 1 x cols row vector.
Var add_row(Var x, Var row);
/// Affine map x W + b with b a 1 x out row.
Var linear(Var x, Var weight, Var bias);
Var gelu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
/// Row-wise layer normalization with learned gain and bias rows.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row-wise softmax of x + additive (x.rows x x.cols) constant mask.
Var softmax_rows(Var x, const Mat* additive_mask = nullptr);
/// Output row i is x.row(index[i]).
Var gather_rows(Var x, std::vector<int> index);
/// Column-wise concatenation [a b]; row counts must match.
Var concat_cols(Var a, Var b);
/// 1 x cols mean over rows.
Var mean_rows(Var x);
/// 1 x cols max over rows (subgradient to the first maximizer).
Var max_rows(Var x);
/// Max over each run of `group` consecutive rows; rows must divide evenly.
Var group_max_rows(Var x, int group);
/// Replicates a 1 x cols row n times.
Var repeat_rows(Var row, int n);
Var sum_all(Var x);

/// Mean softmax cross entropy of logits rows against class indices, with
/// per-row weights normalized by their sum.
Var cross_entropy(Var logits, const std::vector<int>& targets,
                  const std::vector<double>& weights);
/// Mean binary cross entropy of sigmoid(logits) against 0/1 targets.
Var bce_with_logits(Var logits, const Mat& targets);

}  // namespace matis::ag
