#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "embner/tensor.hpp"

using namespace embner;
namespace ad = embner::ad;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct FiveParams {
  ad::Parameter W1, b1, W2, S, v;
  explicit FiveParams(std::mt19937_64& rng)
      : W1(randn(4, 5, rng, 0.5)),
        b1(randn(1, 5, rng, 0.5)),
        W2(randn(5, 3, rng, 0.5)),
        S(randn(3, 3, rng, 0.5)),
        v(randn(3, 1, rng, 0.5)) {}
  std::vector<ad::Parameter*> all() { return {&W1, &b1, &W2, &S, &v}; }
};

// Touches every op at least once so each backward rule is exercised.
ad::Var five_param_graph(ad::Graph& g, FiveParams& p, const Matrix& xin) {
  using namespace ad;
  Var x = g.constant(xin);
  Var w1 = g.param(p.W1), b1 = g.param(p.b1), w2 = g.param(p.W2), s = g.param(p.S), v = g.param(p.v);
  Var h = tanh(matmul(x, w1) + b1);                       // 6x5
  Var k = sigmoid(matmul(h, w2));                         // 6x3
  Var soft = softmax_rows(k * k - scale(k, 0.3));          // 6x3
  Var lse = logsumexp_rows(matmul(k, s));                  // 6x1
  Var spd = add(matmul(transpose(s), s), g.constant(Matrix::Identity(3, 3)));
  Var inv = inverse_spd(spd);
  Var quad = sum(matmul(matmul(transpose(v), inv), v));
  Var ld = logdet_spd(spd);
  Var cat = concat_cols({soft, lse, slice(h, 0, 6, 1, 2)});  // 6x6
  Var rows = concat_rows({gather_rows(cat, {0, 2, 2}), sum_cols(cat)});
  Var pos = add_scalar(exp(scale(rows, 0.2)), 0.1);
  Var term1 = mean(log(pos));
  Var term2 = sum(sqrt(add_scalar(square(row_norms(k)), 1.0)));
  Var term3 = l2_norm(h) / (add_scalar(sum(square(v)), 1.0));
  Var term4 = sum(sum_rows(neg(soft))) + sum(diag(inv)) - quad * ld;
  return term1 + term2 + term3 + term4 + mean(sub(lse, g.constant(Matrix::Constant(6, 1, 0.5))));
}

}  // namespace

TEST_CASE("closed-form values and derivatives") {
  ad::Parameter p(Matrix::Zero(1, 1));
  ad::Graph g;
  ad::Var y = ad::tanh(g.param(p));
  CHECK(y.scalar() == 0.0);
  g.backward(y);
  CHECK(p.grad(0, 0) == doctest::Approx(1.0));

  ad::Graph g2;
  ad::Var s = ad::softmax_rows(g2.constant(Matrix::Zero(1, 2)));
  CHECK(s.value()(0, 0) == doctest::Approx(0.5));
  CHECK(s.value()(0, 1) == doctest::Approx(0.5));

  ad::Graph g3;
  ad::Var l = ad::logsumexp_rows(g3.constant(Matrix{{1000.0, 1000.0}}));
  CHECK(l.scalar() == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("random 5-parameter graph matches central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    FiveParams p(rng);
    Matrix x = randn(6, 4, rng);
    auto params = p.all();
    auto report = ad::grad_check([&](ad::Graph& g) { return five_param_graph(g, p, x); }, params, 1e-5);
    CHECK(report.checked == 20 + 5 + 15 + 9 + 3);
    INFO("seed " << seed << " worst " << report.worst_analytic << " vs " << report.worst_numeric);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("squared norm of a matrix-vector product") {
  std::mt19937_64 rng(7);
  ad::Parameter x(randn(1, 4, rng));
  Matrix W = randn(4, 3, rng);
  ad::Graph g;
  ad::Var y = ad::matmul(g.param(x), g.constant(W));
  g.backward(ad::sum(ad::square(y)));
  Matrix analytic = 2.0 * x.value * W * W.transpose();
  CHECK((x.grad - analytic).cwiseAbs().maxCoeff() < 1e-12);
  x.zero_grad();

  std::vector<ad::Parameter*> ps = {&x};
  auto report = ad::grad_check(
      [&](ad::Graph& gg) { return ad::sum(ad::square(ad::matmul(gg.param(x), gg.constant(W)))); }, ps);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("gradients accumulate across repeated uses") {
  ad::Parameter p(Matrix{{3.0}});
  ad::Graph g;
  ad::Var a = g.param(p);
  g.backward(a * a + a);  // d/da = 2a + 1
  CHECK(p.grad(0, 0) == doctest::Approx(7.0));
  CHECK(a.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("shape mismatches name the op and the shapes") {
  ad::Graph g;
  ad::Var a = g.constant(Matrix::Zero(2, 3));
  ad::Var b = g.constant(Matrix::Zero(4, 5));
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  std::string m1 = message([&] { ad::matmul(a, b); });
  CHECK(m1.find("matmul") != std::string::npos);
  CHECK(m1.find("2x3") != std::string::npos);
  CHECK(m1.find("4x5") != std::string::npos);
  CHECK(message([&] { ad::add(a, b); }).find("add") != std::string::npos);
  CHECK(message([&] { ad::concat_rows({a, b}); }).find("concat_rows") != std::string::npos);
  CHECK(message([&] { ad::slice(a, 0, 3, 0, 1); }).find("slice") != std::string::npos);
  CHECK(message([&] { g.backward(a); }).find("backward") != std::string::npos);
}

TEST_CASE("forward and backward reruns are bit-identical") {
  std::mt19937_64 rng(11);
  FiveParams p(rng);
  Matrix x = randn(6, 4, rng);
  auto run = [&] {
    for (auto* q : p.all()) q->zero_grad();
    ad::Graph g;
    ad::Var root = five_param_graph(g, p, x);
    g.backward(root);
    std::vector<Matrix> out = {Matrix::Constant(1, 1, root.scalar())};
    for (auto* q : p.all()) out.push_back(q->grad);
    return out;
  };
  auto first = run();
  auto second = run();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("sgd_step and global-norm clipping") {
  ad::Parameter a(Matrix{{1.0, 2.0}});
  ad::Parameter b(Matrix{{0.0}});
  a.grad = Matrix{{3.0, 0.0}};
  b.grad = Matrix{{4.0}};
  std::vector<ad::Parameter*> ps = {&a, &b};
  ad::sgd_step(ps, 0.1, 5.0);  // norm exactly 5: untouched
  CHECK(a.value(0, 0) == doctest::Approx(0.7));
  CHECK(b.value(0, 0) == doctest::Approx(-0.4));
  CHECK(a.grad.isZero());

  a.grad = Matrix{{30.0, 0.0}};
  b.grad = Matrix{{40.0}};
  double pre = ad::clip_global_norm(ps, 5.0);
  CHECK(pre == doctest::Approx(50.0));
  CHECK(a.grad(0, 0) == doctest::Approx(3.0));
  CHECK(b.grad(0, 0) == doctest::Approx(4.0));
}

namespace {

// The same recurrence spelled out with primitive ops, one node per gate.
ad::Var lstm_reference(ad::Graph& g, ad::Var x, ad::Var W, ad::Var b, bool reverse) {
  using namespace ad;
  const Eigen::Index l = x.rows(), H = W.cols() / 4;
  Var h = g.constant(Matrix::Zero(1, H));
  Var c = g.constant(Matrix::Zero(1, H));
  std::vector<Var> out(static_cast<std::size_t>(l));
  for (Eigen::Index s = 0; s < l; ++s) {
    Eigen::Index t = reverse ? l - 1 - s : s;
    Var z = matmul(concat_cols({slice(x, t, 1, 0, x.cols()), h}), W) + b;
    Var i = sigmoid(slice(z, 0, 1, 0, H));
    Var f = sigmoid(slice(z, 0, 1, H, H));
    Var gg = tanh(slice(z, 0, 1, 2 * H, H));
    Var o = sigmoid(slice(z, 0, 1, 3 * H, H));
    c = f * c + i * gg;
    h = o * tanh(c);
    out[static_cast<std::size_t>(t)] = h;
  }
  return concat_rows(out);
}

}  // namespace

TEST_CASE("fused lstm matches the primitive composition") {
  for (bool reverse : {false, true}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(seed);
      ad::Parameter x(randn(4, 3, rng)), W(randn(3 + 2, 8, rng, 0.7)), b(randn(1, 8, rng, 0.3));
      Matrix probe = randn(4, 2, rng);
      ad::Graph g1, g2;
      ad::Var a = ad::lstm(g1.param(x), g1.param(W), g1.param(b), reverse);
      ad::Var r = lstm_reference(g2, g2.param(x), g2.param(W), g2.param(b), reverse);
      CHECK((a.value() - r.value()).cwiseAbs().maxCoeff() < 1e-12);

      std::vector<ad::Parameter*> ps = {&x, &W, &b};
      auto report = ad::grad_check(
          [&](ad::Graph& g) {
            return ad::sum(ad::mul(ad::lstm(g.param(x), g.param(W), g.param(b), reverse), g.constant(probe)));
          },
          ps);
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}
