#include <doctest.h>

#include <algorithm>
#include <array>
#include <numbers>
#include <cmath>
#include <random>

#include "embner/error.hpp"
#include "embner/ghmm.hpp"
#include "hmm_fixtures.hpp"
#include "oracles.hpp"

using namespace embner;
using namespace embner::hmm;

using namespace hmm_fixtures;

TEST_CASE("log_gaussian_density closed forms") {
  CHECK(log_gaussian_density(Vector{{0.0}}, Vector{{0.0}}, Matrix::Identity(1, 1)) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  CHECK(log_gaussian_density(Vector{{1.0, 2.0}}, Vector{{1.0, 2.0}}, Matrix::Identity(2, 2)) ==
        doctest::Approx(-1.8378770664093453).epsilon(1e-12));
}

TEST_CASE("log_gaussian_density matches the explicit-inverse formula") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix s = oracle::random_spd(3, rng);
    Vector mu = oracle::random_vector(3, rng), x = oracle::random_vector(3, rng);
    CHECK(std::abs(log_gaussian_density(x, mu, s) - oracle::naive_log_gaussian(x, mu, s)) < 1e-10);
  }
}

TEST_CASE("log_gaussian_density rejects a non-PD covariance and names the label") {
  Matrix bad{{1.0, 2.0}, {2.0, 1.0}};
  try {
    log_gaussian_density(Vector{{0.0, 0.0}}, Vector{{0.0, 0.0}}, bad, "B");
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("B") != std::string::npos);
  }
}

TEST_CASE("joint_log_prob: single position and hand-multiplied length 2") {
  std::mt19937_64 rng(5);
  HmmParams p = random_params(2, rng);
  Observation one = random_observation(1, 2, rng);
  for (int z = 0; z < 3; ++z) {
    double expect = std::log(p.initial[z]) +
                    oracle::naive_log_gaussian(one.x.row(0).transpose(), p.means[z], p.covariances[z]) +
                    std::log(p.cluster_emission(z, one.v[0]));
    CHECK(std::abs(joint_log_prob(one, to_iob({z}), p) - expect) < 1e-12);
  }

  HmmParams h;
  h.initial << 0.5, 0.0, 0.5;
  h.transition << 0.7, 0.0, 0.3, 0.2, 0.5, 0.3, 0.1, 0.6, 0.3;
  h.means = {Vector{{0.0, 0.0}}, Vector{{1.0, 0.0}}, Vector{{0.0, 1.0}}};
  for (auto& c : h.covariances) c = Matrix::Identity(2, 2);
  h.cluster_emission << 0.9, 0.1, 0.25, 0.75, 0.4, 0.6;
  Observation two;
  two.x = Matrix{{0.0, 1.0}, {1.0, 0.0}};
  two.v = {1, 1};
  // B then I, both tokens sit on their own state's mean: density (2 pi)^-1 each.
  double expect = std::log(0.5) + std::log(1.0 / (2.0 * std::numbers::pi)) + std::log(0.6) + std::log(0.6) +
                  std::log(1.0 / (2.0 * std::numbers::pi)) + std::log(0.75);
  CHECK(std::abs(joint_log_prob(two, to_iob({2, 1}), h) - expect) < 1e-12);
}

TEST_CASE("forward_loglik equals the sum over all label paths") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    HmmParams p = random_params(2, rng);
    int l = 1 + trial % 4;
    Observation o = random_observation(l, 2, rng);
    std::vector<double> terms;
    oracle::for_each_path(l, 3, [&](const std::vector<int>& z) { terms.push_back(hand_joint(o, z, p)); });
    double brute = oracle::log_sum_exp(terms);
    CHECK(std::abs(forward_loglik(o, p) - brute) < 1e-8);
    for (double t : terms) CHECK(t <= forward_loglik(o, p) + 1e-12);
  }
}

TEST_CASE("forward_loglik of a deterministic chain is the all-O path") {
  std::mt19937_64 rng(2);
  HmmParams p = random_params(2, rng);
  p.initial << 1.0, 0.0, 0.0;
  p.transition.row(0) << 1.0, 0.0, 0.0;
  Observation o = random_observation(4, 2, rng);
  CHECK(std::abs(forward_loglik(o, p) - joint_log_prob(o, to_iob({0, 0, 0, 0}), p)) < 1e-12);
}

TEST_CASE("viterbi_decode equals the enumeration argmax") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    HmmParams p = random_params(2, rng);
    int l = 1 + trial % 4;
    Observation o = random_observation(l, 2, rng);
    double best = -1e300;
    std::vector<int> arg;
    oracle::for_each_path(l, 3, [&](const std::vector<int>& z) {
      double s = hand_joint(o, z, p);
      if (s > best) {
        best = s;
        arg = z;
      }
    });
    CHECK(viterbi_decode(o, p) == to_iob(arg));
  }
}

TEST_CASE("viterbi_decode: dominant O emissions and structural masks") {
  std::mt19937_64 rng(8);
  HmmParams p = initial_params(std::vector<Observation>{random_observation(6, 2, rng)}, 1);
  Observation o = random_observation(6, 2, rng);
  p.means[0] = Vector::Zero(2);
  p.means[1] = p.means[2] = Vector::Constant(2, 50.0);
  o.x.setZero();
  std::fill(o.v.begin(), o.v.end(), 0);
  for (Iob z : viterbi_decode(o, p)) CHECK(z == Iob::O);

  for (int trial = 0; trial < 50; ++trial) {
    HmmParams m = random_params(2, rng);
    m.initial << 0.5, 0.0, 0.5;
    m.transition(0, 1) = 0.0;
    m.transition.row(0) /= m.transition.row(0).sum();
    Observation r = random_observation(8, 2, rng);
    auto path = viterbi_decode(r, m);
    CHECK(path[0] != Iob::I);
    for (std::size_t t = 1; t < path.size(); ++t) CHECK(!(path[t - 1] == Iob::O && path[t] == Iob::I));
  }
}

TEST_CASE("decoding is invariant to a per-position emission shift") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    HmmParams p = random_params(2, rng);
    Observation o = random_observation(6, 2, rng);
    Matrix em = emission_log_probs(o, p);
    Matrix shifted = em;
    for (Eigen::Index t = 0; t < em.rows(); ++t) shifted.row(t).array() += 10.0 * static_cast<double>(t) - 7.0;
    CHECK(viterbi_from_emissions(em, p) == viterbi_from_emissions(shifted, p));
  }
}

TEST_CASE("posteriors sum to one per position") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    HmmParams p = random_params(3, rng);
    Observation o = random_observation(7, 3, rng);
    auto post = forward_backward(o, p);
    for (Eigen::Index t = 0; t < post.state.rows(); ++t) CHECK(std::abs(post.state.row(t).sum() - 1.0) < 1e-9);
    CHECK(std::abs(post.transitions.sum() - 6.0) < 1e-9);
  }
}

TEST_CASE("single-state EM recovers the sample mean") {
  std::mt19937_64 rng(4);
  std::vector<Observation> data;
  Vector total = Vector::Zero(2);
  double n = 0;
  for (int s = 0; s < 30; ++s) {
    data.push_back(random_observation(5, 2, rng));
    total += data.back().x.colwise().sum().transpose();
    n += 5;
  }
  HmmParams init = initial_params(data, 3);
  init.initial << 1.0, 0.0, 0.0;
  init.transition.row(0) << 1.0, 0.0, 0.0;
  auto fit = em_fit(data, init, {.max_iters = 5, .tol = 0.0});
  CHECK((fit.params.means[0] - total / n).norm() < 1e-10);
}

TEST_CASE("EM recovers a known 3-state transition matrix") {
  std::mt19937_64 rng(2024);
  HmmParams truth = known_model();
  auto sample = sample_hmm(truth, 500, rng);
  HmmParams init = initial_params(sample.data, 7);
  auto fit = em_fit(sample.data, init, {.max_iters = 200, .tol = 1e-9});
  // Best label permutation by mean distance.
  std::vector<int> perm = {0, 1, 2}, best;
  double best_d = 1e300;
  do {
    double d = 0;
    for (int z = 0; z < 3; ++z) d += (fit.params.means[perm[z]] - truth.means[z]).norm();
    if (d < best_d) {
      best_d = d;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best == std::vector<int>{0, 1, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.params.transition(best[i], best[j]) - truth.transition(i, j)) < 0.05);
  fit.params.validate();
}

TEST_CASE("EM log-likelihood never decreases") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    HmmParams truth = known_model();
    auto sample = sample_hmm(truth, 60, rng);
    HmmParams init = initial_params(sample.data, seed);
    auto fit = em_fit(sample.data, init, {.max_iters = 50, .tol = -1.0});
    CHECK(fit.report.iterations == 50);
    for (std::size_t i = 1; i < fit.report.loglik.size(); ++i)
      CHECK(fit.report.loglik[i] >= fit.report.loglik[i - 1] - 1e-9);
    fit.params.validate();
  }
}

TEST_CASE("model JSON round trip") {
  std::mt19937_64 rng(12);
  HmmParams p = random_params(3, rng);
  HmmParams q = params_from_json(nlohmann::json::parse(to_json(p).dump()));
  CHECK(q.transition.isApprox(p.transition, 1e-15));
  CHECK(q.covariances[2].isApprox(p.covariances[2], 1e-15));
  CHECK(q.cluster_emission.isApprox(p.cluster_emission, 1e-15));
}
