#include "embner/tensor.hpp"

#include <cmath>
#include <memory>
#include <limits>
#include <numbers>

#include "embner/error.hpp"

namespace embner::ad {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

[[noreturn]] void shape_error(const char* op, const Matrix& a) {
  throw ValidationError(std::string(op) + ": invalid shape " + shape(a));
}

Graph& same_graph(const char* op, Var a, Var b) {
  if (!a.graph() || a.graph() != b.graph()) throw ValidationError(std::string(op) + ": operands from different graphs");
  return *a.graph();
}

// Shape an operand is broadcast to, or throws.
std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  auto fits = [](const Matrix& small, const Matrix& big) {
    return (small.rows() == 1 && small.cols() == 1) || (small.rows() == 1 && small.cols() == big.cols()) ||
           (small.cols() == 1 && small.rows() == big.rows());
  };
  if (fits(b, a)) return {a.rows(), a.cols()};
  if (fits(a, b)) return {b.rows(), b.cols()};
  shape_error(op, a, b);
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1) return m.replicate(rows, 1);
  return m.replicate(1, cols);
}

// Sums a full-shape gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, const Matrix& like) {
  if (g.rows() == like.rows() && g.cols() == like.cols()) return g;
  if (like.rows() == 1 && like.cols() == 1) return Matrix::Constant(1, 1, g.sum());
  if (like.rows() == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename Fwd, typename Bwd>
Var binary(const char* op, Var a, Var b, Fwd fwd, Bwd bwd) {
  Graph& g = same_graph(op, a, b);
  auto [r, c] = broadcast_shape(op, a.value(), b.value());
  Matrix av = expand(a.value(), r, c);
  Matrix bv = expand(b.value(), r, c);
  Matrix out = fwd(av, bv);
  return g.node(std::move(out), {a, b}, [a, b, bwd](Graph& g, const Matrix& go) {
    const Matrix& ar = g.value(a);
    const Matrix& br = g.value(b);
    Matrix ae = expand(ar, go.rows(), go.cols());
    Matrix be = expand(br, go.rows(), go.cols());
    auto [ga, gb] = bwd(ae, be, go);
    if (g.requires_grad(a)) g.accumulate(a, reduce_to(ga, ar));
    if (g.requires_grad(b)) g.accumulate(b, reduce_to(gb, br));
  });
}

}  // namespace

const Matrix& Var::value() const {
  if (!graph_) throw ValidationError("use of an unbound Var");
  return graph_->value(*this);
}

Matrix Var::grad() const { return graph_->grad(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) shape_error("scalar", v);
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, &p, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::node(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool rg = false;
  for (Var p : parents) rg = rg || requires_grad(p);
  nodes_.push_back(Node{std::move(value), {}, nullptr, rg, rg ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::node(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool rg = false;
  for (Var p : parents) rg = rg || requires_grad(p);
  nodes_.push_back(Node{std::move(value), {}, nullptr, rg, rg ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) shape_error("accumulate", n.value, g);
  if (n.grad.size() == 0) n.grad = g;
  else n.grad += g;
}

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var root) {
  if (root.graph_ != this) throw ValidationError("backward: root belongs to another graph");
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) shape_error("backward", rv);
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(root)) return;
  nodes_[static_cast<std::size_t>(root.id_)].grad = Matrix::Ones(1, 1);
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      // Rules only touch nodes with smaller ids, so `n.grad` stays put.
      n.backward(*this, n.grad);
    } else if (n.param) {
      n.param->grad += n.grad;
    }
  }
}

Var add(Var a, Var b) {
  return binary("add", a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x + y); },
                [](const Matrix&, const Matrix&, const Matrix& g) { return std::pair<Matrix, Matrix>(g, g); });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x - y); },
                [](const Matrix&, const Matrix&, const Matrix& g) { return std::pair<Matrix, Matrix>(g, -g); });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseProduct(y)); },
                [](const Matrix& x, const Matrix& y, const Matrix& g) {
                  return std::pair<Matrix, Matrix>(g.cwiseProduct(y), g.cwiseProduct(x));
                });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](const Matrix& x, const Matrix& y) { return Matrix(x.cwiseQuotient(y)); },
                [](const Matrix& x, const Matrix& y, const Matrix& g) {
                  Matrix gy = -(g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y)));
                  return std::pair<Matrix, Matrix>(g.cwiseQuotient(y), gy);
                });
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph("matmul", a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return g.node(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (g.requires_grad(a)) g.accumulate(a, go * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * go);
  });
}

Var transpose(Var a) {
  return a.graph()->node(a.value().transpose(), {a},
                         [a](Graph& g, const Matrix& go) { g.accumulate(a, go.transpose()); });
}

Var neg(Var a) {
  return a.graph()->node(-a.value(), {a}, [a](Graph& g, const Matrix& go) { g.accumulate(a, -go); });
}

Var scale(Var a, double c) {
  return a.graph()->node(c * a.value(), {a}, [a, c](Graph& g, const Matrix& go) { g.accumulate(a, c * go); });
}

Var add_scalar(Var a, double c) {
  return a.graph()->node(a.value().array() + c, {a}, [a](Graph& g, const Matrix& go) { g.accumulate(a, go); });
}

Var tanh(Var a) {
  Matrix y = a.value().array().tanh();
  return a.graph()->node(y, {a}, [a, y](Graph& g, const Matrix& go) {
    g.accumulate(a, go.array() * (1.0 - y.array().square()));
  });
}

Var sigmoid(Var a) {
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.graph()->node(y, {a}, [a, y](Graph& g, const Matrix& go) {
    g.accumulate(a, go.array() * y.array() * (1.0 - y.array()));
  });
}

Var exp(Var a) {
  Matrix y = a.value().array().exp();
  return a.graph()->node(y, {a}, [a, y](Graph& g, const Matrix& go) { g.accumulate(a, go.cwiseProduct(y)); });
}

Var log(Var a) {
  return a.graph()->node(a.value().array().log(), {a},
                         [a](Graph& g, const Matrix& go) { g.accumulate(a, go.cwiseQuotient(g.value(a))); });
}

Var sqrt(Var a) {
  Matrix y = a.value().array().sqrt();
  return a.graph()->node(y, {a}, [a, y](Graph& g, const Matrix& go) {
    // The derivative at 0 is unbounded; treat it as 0 so norms of zero vectors stay finite.
    Matrix d = y.unaryExpr([](double s) { return s > 0.0 ? 0.5 / s : 0.0; });
    g.accumulate(a, go.cwiseProduct(d));
  });
}

Var square(Var a) {
  return a.graph()->node(a.value().array().square(), {a},
                         [a](Graph& g, const Matrix& go) { g.accumulate(a, 2.0 * go.cwiseProduct(g.value(a))); });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return a.graph()->node(y, {a}, [a, y](Graph& g, const Matrix& go) {
    Matrix dot = go.cwiseProduct(y).rowwise().sum();
    g.accumulate(a, y.cwiseProduct(go - dot.replicate(1, go.cols())));
  });
}

Var logsumexp_rows(Var a) {
  const Matrix& x = a.value();
  if (x.cols() == 0) shape_error("logsumexp_rows", x);
  Matrix out(x.rows(), 1);
  Matrix soft(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    soft.row(r) = (x.row(r).array() - m).exp();
    double s = soft.row(r).sum();
    soft.row(r) /= s;
    out(r, 0) = m + std::log(s);
  }
  return a.graph()->node(out, {a}, [a, soft](Graph& g, const Matrix& go) {
    g.accumulate(a, soft.cwiseProduct(go.replicate(1, soft.cols())));
  });
}

Var sum(Var a) {
  return a.graph()->node(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix::Constant(g.value(a).rows(), g.value(a).cols(), go(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) shape_error("mean", a.value());
  return a.graph()->node(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [a, n](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix::Constant(g.value(a).rows(), g.value(a).cols(), go(0, 0) / n));
  });
}

Var sum_rows(Var a) {
  return a.graph()->node(a.value().rowwise().sum(), {a}, [a](Graph& g, const Matrix& go) {
    g.accumulate(a, go.replicate(1, g.value(a).cols()));
  });
}

Var sum_cols(Var a) {
  return a.graph()->node(a.value().colwise().sum(), {a}, [a](Graph& g, const Matrix& go) {
    g.accumulate(a, go.replicate(g.value(a).rows(), 1));
  });
}

Var l2_norm(Var a) { return sqrt(sum(square(a))); }

Var row_norms(Var a) { return sqrt(sum_rows(square(a))); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no operands");
  Graph& g = *parts.front().graph();
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (Var p : parts) {
    if (p.graph() != &g) throw ValidationError("concat_cols: operands from different graphs");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.node(std::move(out), parts, [parts](Graph& g, const Matrix& go) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      auto w = g.value(p).cols();
      if (g.requires_grad(p)) g.accumulate(p, go.middleCols(at, w));
      at += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no operands");
  Graph& g = *parts.front().graph();
  Eigen::Index cols = parts.front().cols(), rows = 0;
  for (Var p : parts) {
    if (p.graph() != &g) throw ValidationError("concat_rows: operands from different graphs");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.node(std::move(out), parts, [parts](Graph& g, const Matrix& go) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      auto h = g.value(p).rows();
      if (g.requires_grad(p)) g.accumulate(p, go.middleRows(at, h));
      at += h;
    }
  });
}

Var slice(Var a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols) {
  const Matrix& x = a.value();
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > x.rows() || col + cols > x.cols())
    throw ValidationError("slice: block (" + std::to_string(row) + "," + std::to_string(col) + ")+" +
                          std::to_string(rows) + "x" + std::to_string(cols) + " outside " + shape(x));
  return a.graph()->node(x.block(row, col, rows, cols), {a}, [a, row, rows, col, cols](Graph& g, const Matrix& go) {
    Matrix full = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    full.block(row, col, rows, cols) = go;
    g.accumulate(a, full);
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows())
      throw ValidationError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape(x));
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  return a.graph()->node(std::move(out), {a}, [a, rows](Graph& g, const Matrix& go) {
    Matrix full = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    for (std::size_t i = 0; i < rows.size(); ++i) full.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
    g.accumulate(a, full);
  });
}

Var diag(Var a) {
  const Matrix& x = a.value();
  if (x.rows() != x.cols()) shape_error("diag", x);
  return a.graph()->node(x.diagonal(), {a}, [a](Graph& g, const Matrix& go) {
    Matrix full = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    full.diagonal() = go.col(0);
    g.accumulate(a, full);
  });
}

namespace {

Eigen::LLT<Matrix> cholesky(const char* op, const Matrix& x) {
  if (x.rows() != x.cols() || x.rows() == 0) shape_error(op, x);
  Eigen::LLT<Matrix> llt(x);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(op) + ": matrix is not positive definite");
  const Matrix& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    if (!(l(i, i) > 0.0)) throw NumericError(std::string(op) + ": matrix is not positive definite");
  return llt;
}

}  // namespace

Var inverse_spd(Var a) {
  auto llt = cholesky("inverse_spd", a.value());
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  return a.graph()->node(inv, {a}, [a, inv](Graph& g, const Matrix& go) {
    g.accumulate(a, -(inv.transpose() * go * inv.transpose()));
  });
}

Var logdet_spd(Var a) {
  auto llt = cholesky("logdet_spd", a.value());
  double ld = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  return a.graph()->node(Matrix::Constant(1, 1, ld), {a}, [a, inv](Graph& g, const Matrix& go) {
    g.accumulate(a, go(0, 0) * inv.transpose());
  });
}

Var lstm(Var x, Var W, Var b, bool reverse) {
  Graph& g = same_graph("lstm", x, W);
  same_graph("lstm", x, b);
  const Eigen::Index l = x.rows(), in = x.cols(), H4 = W.cols(), H = H4 / 4;
  if (H4 % 4 != 0 || W.rows() != in + H) shape_error("lstm", x.value(), W.value());
  if (b.rows() != 1 || b.cols() != H4) shape_error("lstm", W.value(), b.value());

  // Per-step caches, indexed by input row.
  auto cat = std::make_shared<Matrix>(Matrix::Zero(l, in + H));
  auto gates = std::make_shared<Matrix>(l, H4);  // activated i, f, g, o
  auto cell = std::make_shared<Matrix>(l, H);
  auto tanh_cell = std::make_shared<Matrix>(l, H);
  Matrix out(l, H);
  const Matrix& Wv = W.value();
  const Matrix& bv = b.value();
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(H), c = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index s = 0; s < l; ++s) {
    const Eigen::Index t = reverse ? l - 1 - s : s;
    cat->row(t).head(in) = x.value().row(t);
    cat->row(t).tail(H) = h;
    Eigen::RowVectorXd z = cat->row(t) * Wv + bv;
    auto sig = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
    for (Eigen::Index j = 0; j < H; ++j) {
      z[j] = sig(z[j]);
      z[H + j] = sig(z[H + j]);
      z[2 * H + j] = std::tanh(z[2 * H + j]);
      z[3 * H + j] = sig(z[3 * H + j]);
    }
    gates->row(t) = z;
    c = z.segment(H, H).cwiseProduct(c) + z.segment(0, H).cwiseProduct(z.segment(2 * H, H));
    cell->row(t) = c;
    tanh_cell->row(t) = c.array().tanh().matrix();
    h = z.segment(3 * H, H).cwiseProduct(tanh_cell->row(t));
    out.row(t) = h;
  }

  return g.node(std::move(out), {x, W, b}, [x, W, b, reverse, cat, gates, cell, tanh_cell, l, in, H](Graph& g, const Matrix& go) {
    const Matrix& Wv = g.value(W);
    Matrix dW = Matrix::Zero(Wv.rows(), Wv.cols());
    Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(4 * H);
    Matrix dx = Matrix::Zero(l, in);
    Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H), dc_next = Eigen::RowVectorXd::Zero(H);
    Eigen::RowVectorXd dz(4 * H);
    for (Eigen::Index s = l - 1; s >= 0; --s) {
      const Eigen::Index t = reverse ? l - 1 - s : s;
      const Eigen::Index prev = reverse ? t + 1 : t - 1;
      auto gi = gates->row(t).segment(0, H).array();
      auto gf = gates->row(t).segment(H, H).array();
      auto gg = gates->row(t).segment(2 * H, H).array();
      auto gout = gates->row(t).segment(3 * H, H).array();
      auto tc = tanh_cell->row(t).array();
      Eigen::ArrayXXd c_prev = (s == 0) ? Eigen::ArrayXXd::Zero(1, H) : Eigen::ArrayXXd(cell->row(prev).array());
      Eigen::ArrayXXd dh = go.row(t).array() + dh_next.array();
      Eigen::ArrayXXd dc = dh * gout * (1.0 - tc * tc) + dc_next.array();
      dz.segment(0, H) = (dc * gg * gi * (1.0 - gi)).matrix();
      dz.segment(H, H) = (dc * c_prev * gf * (1.0 - gf)).matrix();
      dz.segment(2 * H, H) = (dc * gi * (1.0 - gg * gg)).matrix();
      dz.segment(3 * H, H) = (dh * tc * gout * (1.0 - gout)).matrix();
      dc_next = (dc * gf).matrix();
      dW.noalias() += cat->row(t).transpose() * dz;
      db += dz;
      Eigen::RowVectorXd dcat = dz * Wv.transpose();
      dx.row(t) = dcat.head(in);
      dh_next = dcat.tail(H);
    }
    if (g.requires_grad(x)) g.accumulate(x, dx);
    if (g.requires_grad(W)) g.accumulate(W, dW);
    if (g.requires_grad(b)) g.accumulate(b, db);
  });
}

GradCheckReport grad_check(const std::function<Var(Graph&)>& build, std::span<Parameter* const> params,
                           double h, double abs_floor) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var root = build(g);
    g.backward(root);
  }
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&] {
    Graph g;
    return build(g).scalar();
  };
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& v = params[pi]->value;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      double saved = v.data()[k];
      v.data()[k] = saved + h;
      double up = eval();
      v.data()[k] = saved - h;
      double down = eval();
      v.data()[k] = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[pi].data()[k];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_param = pi;
        report.worst_index = k;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return report;
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

void sgd_step(std::span<Parameter* const> params, double lr, double clip) {
  if (clip > 0.0) clip_global_norm(params, clip);
  for (Parameter* p : params) {
    p->value.noalias() -= lr * p->grad;
    p->zero_grad();
  }
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace embner::ad
