#include "matis/autograd.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "matis/error.hpp"

namespace matis::ag {

Parameter& ParameterStore::add(std::string name, Mat value) {
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

const Mat& Var::value() const { return tape->value(id); }
Mat& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  if (!track_) return constant(p.value);
  nodes_.push_back(Node{p.value, {}, true, &p, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs,
                 std::function<void(Tape&, int)> backward) {
  bool needs = false;
  for (const auto& v : inputs) needs = needs || nodes_[v.id].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  if (nodes_[id].needs_grad) nodes_[id].grad += g;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "backward root must be a scalar");
  }
  for (int i = 0; i <= root.id; ++i) {
    auto& n = nodes_[i];
    if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[root.id].needs_grad) return;
  nodes_[root.id].grad(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate_expr(a.id, g * t.value(b.id).transpose());
    t.accumulate_expr(b.id, t.value(a.id).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value().transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate_expr(a.id, g * t.value(b.id));
    t.accumulate_expr(b.id, g.transpose() * t.value(a.id));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    t.accumulate(a.id, t.grad(self));
    t.accumulate(b.id, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shapes differ");
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    t.accumulate(a.id, t.grad(self));
    t.accumulate_expr(b.id, -t.grad(self));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, {a},
                  [a, s](Tape& t, int self) { t.accumulate_expr(a.id, s * t.grad(self)); });
}

Var add_row(Var x, Var row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row: bias shape");
  Tape& t = *x.tape;
  Mat out = x.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {x, row}, [x, row](Tape& t, int self) {
    t.accumulate(x.id, t.grad(self));
    t.accumulate_expr(row.id, t.grad(self).colwise().sum());
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var gelu(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().unaryExpr([](double v) { return gelu_value(v); });
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    t.accumulate_expr(
        x.id, t.grad(self).cwiseProduct(t.value(x.id).unaryExpr([](double v) { return gelu_slope(v); })));
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().array().tanh().matrix();
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(x.id, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var x) {
  Tape& t = *x.tape;
  Mat out = x.value().unaryExpr([](double v) { return sigmoid_value(v); });
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(x.id,
                      t.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto n = x.cols();
  require(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
          "layer_norm: gain/bias shape");
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat xhat(xv.rows(), n);
  Vec inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& t, int self) {
                    const Mat& g = t.grad(self);
                    t.accumulate_expr(gain.id, g.cwiseProduct(xhat).colwise().sum());
                    t.accumulate_expr(bias.id, g.colwise().sum());
                    if (!t.needs_grad(x.id)) return;
                    Mat dxhat = (g.array().rowwise() * t.value(gain.id).row(0).array()).matrix();
                    Mat dx(dxhat.rows(), dxhat.cols());
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).mean();
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dxhat.cols());
                      dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                    t.accumulate(x.id, dx);
                  });
}

Var softmax_rows(Var x, const Mat* additive_mask) {
  Tape& t = *x.tape;
  Mat z = x.value();
  if (additive_mask) {
    require(additive_mask->rows() == z.rows() && additive_mask->cols() == z.cols(),
            "softmax_rows: mask shape");
    z += *additive_mask;
  }
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    z.row(r) = z.row(r).unaryExpr([mx](double v) { return std::exp(v - mx); });
    z.row(r) /= z.row(r).sum();
  }
  return t.record(std::move(z), {x}, [x](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.grad(self);
    Vec dots = g.cwiseProduct(y).rowwise().sum();
    Mat dx = y.cwiseProduct(g.colwise() - dots);
    t.accumulate(x.id, dx);
  });
}

Var gather_rows(Var x, std::vector<int> index) {
  Tape& t = *x.tape;
  Mat out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
  }
  return t.record(std::move(out), {x}, [x, index = std::move(index)](Tape& t, int self) {
    if (!t.needs_grad(x.id)) return;
    const Mat& g = t.grad(self);
    Mat& dx = t.grad(x.id);
    for (std::size_t i = 0; i < index.size(); ++i) dx.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var concat_cols(Var a, Var b) {
  require(a.rows() == b.rows(), "concat_cols: row counts differ");
  Tape& t = *a.tape;
  Mat out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ac = a.cols();
  const auto bc = b.cols();
  return t.record(std::move(out), {a, b}, [a, b, ac, bc](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate_expr(a.id, g.leftCols(ac));
    t.accumulate_expr(b.id, g.rightCols(bc));
  });
}

Var mean_rows(Var x) {
  Tape& t = *x.tape;
  const double n = static_cast<double>(x.rows());
  Mat out = x.value().colwise().sum() / n;
  return t.record(std::move(out), {x}, [x, n](Tape& t, int self) {
    if (!t.needs_grad(x.id)) return;
    t.grad(x.id).rowwise() += t.grad(self).row(0) / n;
  });
}

Var max_rows(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat out(1, xv.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(xv.cols()));
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    Eigen::Index r = 0;
    out(0, c) = xv.col(c).maxCoeff(&r);
    arg[static_cast<std::size_t>(c)] = r;
  }
  return t.record(std::move(out), {x}, [x, arg = std::move(arg)](Tape& t, int self) {
    if (!t.needs_grad(x.id)) return;
    for (std::size_t c = 0; c < arg.size(); ++c) {
      t.grad(x.id)(arg[c], static_cast<Eigen::Index>(c)) += t.grad(self)(0, static_cast<Eigen::Index>(c));
    }
  });
}

Var group_max_rows(Var x, int group) {
  require(group >= 1 && x.rows() % group == 0, "group_max_rows: row count");
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  const Eigen::Index groups = xv.rows() / group;
  Mat out(groups, xv.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(out.size()));
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      Eigen::Index r = 0;
      out(g, c) = xv.col(c).segment(g * group, group).maxCoeff(&r);
      arg[static_cast<std::size_t>(g * xv.cols() + c)] = g * group + r;
    }
  }
  return t.record(std::move(out), {x}, [x, arg = std::move(arg)](Tape& t, int self) {
    if (!t.needs_grad(x.id)) return;
    const Mat& g = t.grad(self);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      t.grad(x.id)(arg[static_cast<std::size_t>(i)], i % g.cols()) += g.data()[i];
    }
  });
}

Var repeat_rows(Var row, int n) {
  require(row.rows() == 1, "repeat_rows: expects a row");
  Tape& t = *row.tape;
  Mat out = row.value().replicate(n, 1);
  return t.record(std::move(out), {row}, [row](Tape& t, int self) {
    t.accumulate_expr(row.id, t.grad(self).colwise().sum());
  });
}

Var sum_all(Var x) {
  Tape& t = *x.tape;
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    if (!t.needs_grad(x.id)) return;
    t.grad(x.id).array() += t.grad(self)(0, 0);
  });
}

Var cross_entropy(Var logits, const std::vector<int>& targets,
                  const std::vector<double>& weights) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows() &&
              targets.size() == weights.size(),
          "cross_entropy: target count");
  Tape& t = *logits.tape;
  const Mat& x = logits.value();
  Mat probs(x.rows(), x.cols());
  double weight_sum = 0.0;
  for (double w : weights) weight_sum += w;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    const int target = targets[static_cast<std::size_t>(r)];
    require(target >= 0 && target < x.cols(), "cross_entropy: target out of range");
    loss += weights[static_cast<std::size_t>(r)] * (std::log(z) + mx - x(r, target));
  }
  Mat out(1, 1);
  out(0, 0) = weight_sum > 0 ? loss / weight_sum : 0.0;
  return t.record(std::move(out), {logits},
                  [logits, targets, weights, weight_sum, probs = std::move(probs)](Tape& t, int self) {
                    if (!t.needs_grad(logits.id) || weight_sum <= 0) return;
                    const double g = t.grad(self)(0, 0);
                    Mat d = probs;
                    for (Eigen::Index r = 0; r < d.rows(); ++r) {
                      d(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
                      d.row(r) *= g * weights[static_cast<std::size_t>(r)] / weight_sum;
                    }
                    t.accumulate(logits.id, d);
                  });
}

Var bce_with_logits(Var logits, const Mat& targets) {
  require(targets.rows() == logits.rows() && targets.cols() == logits.cols(),
          "bce_with_logits: target shape");
  Tape& t = *logits.tape;
  const Mat& x = logits.value();
  const double count = static_cast<double>(x.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    loss += softplus(x.data()[i]) - x.data()[i] * targets.data()[i];
  }
  Mat out(1, 1);
  out(0, 0) = loss / count;
  return t.record(std::move(out), {logits}, [logits, targets, count](Tape& t, int self) {
    if (!t.needs_grad(logits.id)) return;
    const double g = t.grad(self)(0, 0) / count;
    Mat d = t.value(logits.id).unaryExpr([](double v) { return sigmoid_value(v); }) - targets;
    t.accumulate_expr(logits.id, g * d);
  });
}

}  // namespace matis::ag
