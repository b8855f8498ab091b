#include "embner/crf.hpp"

#include <cmath>
#include <limits>

#include "embner/error.hpp"

namespace embner::crf {

namespace {

void check(const Matrix& P, const Matrix& T) {
  if (P.rows() == 0) throw ValidationError("crf: empty sentence");
  if (T.rows() != P.cols() + 2 || T.cols() != P.cols() + 2)
    throw ValidationError("crf: transition matrix must be " + std::to_string(P.cols() + 2) + " square, got " +
                          std::to_string(T.rows()) + "x" + std::to_string(T.cols()));
}

double lse(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// alpha(t, j): log-sum of all prefixes ending in tag j at t.
Matrix forward(const Matrix& P, const Matrix& T) {
  const Eigen::Index l = P.rows(), n = P.cols();
  const int S = start_index(T);
  Matrix alpha(l, n);
  alpha.row(0) = T.row(S).head(n) + P.row(0);
  Eigen::RowVectorXd tmp(n);
  for (Eigen::Index t = 1; t < l; ++t)
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) tmp[i] = alpha(t - 1, i) + T(i, j);
      alpha(t, j) = lse(tmp) + P(t, j);
    }
  return alpha;
}

// beta(t, j): log-sum of all suffixes after tag j at t, including STOP.
Matrix backward(const Matrix& P, const Matrix& T) {
  const Eigen::Index l = P.rows(), n = P.cols();
  const int E = stop_index(T);
  Matrix beta(l, n);
  beta.row(l - 1) = T.col(E).head(n).transpose();
  Eigen::RowVectorXd tmp(n);
  for (Eigen::Index t = l - 2; t >= 0; --t)
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) tmp[j] = T(i, j) + P(t + 1, j) + beta(t + 1, j);
      beta(t, i) = lse(tmp);
    }
  return beta;
}

double finish(const Matrix& alpha, const Matrix& T) {
  const Eigen::Index n = alpha.cols();
  return lse(alpha.row(alpha.rows() - 1) + T.col(stop_index(T)).head(n).transpose());
}

}  // namespace

double score(const Matrix& P, const Matrix& T, std::span<const int> y) {
  check(P, T);
  if (static_cast<Eigen::Index>(y.size()) != P.rows())
    throw ValidationError("crf: label sequence length " + std::to_string(y.size()) + " != sentence length " +
                          std::to_string(P.rows()));
  for (int v : y)
    if (v < 0 || v >= P.cols()) throw ValidationError("crf: tag index " + std::to_string(v) + " out of range");
  double s = T(start_index(T), y[0]) + T(y.back(), stop_index(T));
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += P(static_cast<Eigen::Index>(t), y[t]);
    if (t > 0) s += T(y[t - 1], y[t]);
  }
  return s;
}

double log_partition(const Matrix& P, const Matrix& T) {
  check(P, T);
  return finish(forward(P, T), T);
}

Marginals marginals(const Matrix& P, const Matrix& T) {
  check(P, T);
  const Eigen::Index l = P.rows(), n = P.cols();
  Matrix alpha = forward(P, T);
  Matrix beta = backward(P, T);
  Marginals m;
  m.log_z = finish(alpha, T);
  m.unary = (alpha + beta).array() - m.log_z;
  m.unary = m.unary.array().exp();
  m.transitions = Matrix::Zero(T.rows(), T.cols());
  const int S = start_index(T), E = stop_index(T);
  m.transitions.row(S).head(n) = m.unary.row(0);
  m.transitions.col(E).head(n) = m.unary.row(l - 1).transpose();
  for (Eigen::Index t = 0; t + 1 < l; ++t)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        m.transitions(i, j) += std::exp(alpha(t, i) + T(i, j) + P(t + 1, j) + beta(t + 1, j) - m.log_z);
  return m;
}

std::vector<int> viterbi(const Matrix& P, const Matrix& T) {
  check(P, T);
  const Eigen::Index l = P.rows(), n = P.cols();
  const int S = start_index(T), E = stop_index(T);
  Matrix delta(l, n);
  Eigen::MatrixXi back(l, n);
  delta.row(0) = T.row(S).head(n) + P.row(0);
  for (Eigen::Index t = 1; t < l; ++t)
    for (Eigen::Index j = 0; j < n; ++j) {
      int best = 0;
      double bv = delta(t - 1, 0) + T(0, j);
      for (Eigen::Index i = 1; i < n; ++i) {
        double v = delta(t - 1, i) + T(i, j);
        if (v > bv) {
          bv = v;
          best = static_cast<int>(i);
        }
      }
      delta(t, j) = bv + P(t, j);
      back(t, j) = best;
    }
  int last = 0;
  double bv = delta(l - 1, 0) + T(0, E);
  for (Eigen::Index j = 1; j < n; ++j) {
    double v = delta(l - 1, j) + T(j, E);
    if (v > bv) {
      bv = v;
      last = static_cast<int>(j);
    }
  }
  std::vector<int> path(static_cast<std::size_t>(l));
  path.back() = last;
  for (Eigen::Index t = l - 1; t > 0; --t)
    path[static_cast<std::size_t>(t - 1)] = back(t, path[static_cast<std::size_t>(t)]);
  return path;
}

ad::Var nll(ad::Var P, ad::Var T, std::vector<int> y) {
  if (!P.graph() || P.graph() != T.graph()) throw ValidationError("crf nll: operands from different graphs");
  Marginals m = marginals(P.value(), T.value());
  const double gold = score(P.value(), T.value(), y);
  Matrix value = Matrix::Constant(1, 1, m.log_z - gold);
  return P.graph()->node(std::move(value), {P, T}, [P, T, y = std::move(y), m = std::move(m)](ad::Graph& g, const Matrix& go) {
    const double s = go(0, 0);
    if (g.requires_grad(P)) {
      Matrix gp = m.unary;
      for (std::size_t t = 0; t < y.size(); ++t) gp(static_cast<Eigen::Index>(t), y[t]) -= 1.0;
      g.accumulate(P, s * gp);
    }
    if (g.requires_grad(T)) {
      const Matrix& Tv = g.value(T);
      Matrix gt = m.transitions;
      gt(start_index(Tv), y.front()) -= 1.0;
      gt(y.back(), stop_index(Tv)) -= 1.0;
      for (std::size_t t = 1; t < y.size(); ++t) gt(y[t - 1], y[t]) -= 1.0;
      g.accumulate(T, s * gt);
    }
  });
}

}  // namespace embner::crf
