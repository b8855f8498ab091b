#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "embner/data.hpp"

/// Minimal tape-based reverse-mode differentiation over dense 2-D matrices.
///
/// Vectors are row vectors (1 x n); batches stack rows. Binary elementwise ops
/// broadcast a 1x1, 1xn or nx1 operand against a full matrix and nothing else.
namespace embner::ad {

/// Trainable array with a gradient accumulator; owned by a model, referenced
/// from any number of graphs.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient of the last backward root with respect to this node (zeros if unreached).
  Matrix grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Receives dRoot/dOutput and pushes contributions to parents via accumulate().
  using Backward = std::function<void(Graph&, const Matrix&)>;

  Var constant(Matrix value);
  Var param(Parameter& p);
  Var node(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var node(Matrix value, const std::vector<Var>& parents, Backward backward);

  /// Seeds the 1x1 root with 1 and runs every backward rule in reverse
  /// creation order; parameter gradients are added to Parameter::grad.
  void backward(Var root);

  void accumulate(Var v, const Matrix& g);
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].requires_grad; }
  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  Matrix grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise binary ops with row/column/scalar broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);

Var softmax_rows(Var a);
/// Row-wise log-sum-exp: n x m -> n x 1.
Var logsumexp_rows(Var a);
Var sum(Var a);
Var mean(Var a);
/// n x m -> n x 1.
Var sum_rows(Var a);
/// n x m -> 1 x m.
Var sum_cols(Var a);
/// Frobenius norm -> 1 x 1.
Var l2_norm(Var a);
/// Euclidean norm of each row -> n x 1.
Var row_norms(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice(Var a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols);
Var gather_rows(Var a, const std::vector<int>& rows);

/// Diagonal of a square matrix as a column.
Var diag(Var a);
/// Inverse and log-determinant of a symmetric positive-definite matrix (Cholesky).
Var inverse_spd(Var a);
Var logdet_spd(Var a);

/// Single-layer LSTM over the rows of x (l x in) from zero state. W is
/// (in + H) x 4H acting on [x_t, h_{t-1}], b is 1 x 4H, gate order i, f, g, o.
/// Returns the l x H hidden states in input row order; `reverse` runs the
/// recurrence from the last row to the first.
Var lstm(Var x, Var W, Var b, bool reverse = false);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients with central differences for every component
/// of every parameter. Relative error is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<Var(Graph&)>& build, std::span<Parameter* const> params,
                           double h = 1e-5, double abs_floor = 1e-6);

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

/// value -= lr * grad after global-norm clipping (skipped when clip <= 0); zeroes gradients.
void sgd_step(std::span<Parameter* const> params, double lr, double clip = 5.0);

/// Uniform Glorot initialization.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

}  // namespace embner::ad
