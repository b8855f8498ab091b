#pragma once

// Random and known Gaussian HMMs shared by the unit tests and the acceptance run.

#include <array>
#include <cmath>
#include <random>

#include "embner/ghmm.hpp"
#include "oracles.hpp"

namespace hmm_fixtures {

using namespace embner;
using namespace embner::hmm;

inline std::vector<Iob> to_iob(const std::vector<int>& p) {
  std::vector<Iob> out;
  for (int z : p) out.push_back(static_cast<Iob>(z));
  return out;
}

inline Eigen::RowVectorXd random_simplex(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::RowVectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v / v.sum();
}

inline HmmParams random_params(int d, std::mt19937_64& rng) {
  HmmParams p;
  p.initial = random_simplex(3, rng).transpose();
  for (int i = 0; i < 3; ++i) {
    p.transition.row(i) = random_simplex(3, rng);
    p.cluster_emission.row(i) = random_simplex(2, rng);
    p.means[i] = oracle::random_vector(d, rng);
    p.covariances[i] = oracle::random_spd(d, rng);
  }
  return p;
}

inline Observation random_observation(int l, int d, std::mt19937_64& rng) {
  Observation o;
  o.x.resize(l, d);
  for (int t = 0; t < l; ++t) o.x.row(t) = oracle::random_vector(d, rng).transpose();
  for (int t = 0; t < l; ++t) o.v.push_back(static_cast<int>(rng() % 2));
  return o;
}

// Product of the model factors for one path, written out directly.
inline double hand_joint(const Observation& o, const std::vector<int>& z, const HmmParams& p) {
  double s = 0.0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    s += std::log(t == 0 ? p.initial[z[t]] : p.transition(z[t - 1], z[t]));
    s += oracle::naive_log_gaussian(o.x.row(static_cast<Eigen::Index>(t)).transpose(), p.means[z[t]],
                                    p.covariances[z[t]]);
    s += std::log(p.cluster_emission(z[t], o.v[t]));
  }
  return s;
}

struct Sampled {
  std::vector<Observation> data;
  std::vector<std::vector<int>> states;
};

inline Sampled sample_hmm(const HmmParams& p, int sentences, std::mt19937_64& rng) {
  Sampled out;
  std::uniform_int_distribution<int> len(5, 15);
  auto draw = [&](const Eigen::RowVectorXd& probs) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return static_cast<int>(probs.size() - 1);
  };
  std::array<Eigen::LLT<Matrix>, 3> chol;
  for (int z = 0; z < 3; ++z) chol[z].compute(p.covariances[z]);
  for (int s = 0; s < sentences; ++s) {
    int l = len(rng);
    Observation o;
    o.x.resize(l, p.dim());
    std::vector<int> zs;
    int z = draw(p.initial.transpose());
    for (int t = 0; t < l; ++t) {
      if (t > 0) z = draw(p.transition.row(z));
      zs.push_back(z);
      Vector noise = oracle::random_vector(p.dim(), rng);
      o.x.row(t) = (p.means[z] + chol[z].matrixL() * noise).transpose();
      o.v.push_back(draw(p.cluster_emission.row(z)));
    }
    out.data.push_back(std::move(o));
    out.states.push_back(std::move(zs));
  }
  return out;
}

inline HmmParams known_model() {
  HmmParams p;
  p.initial << 0.6, 0.0, 0.4;
  p.transition << 0.8, 0.0, 0.2,   // O
      0.4, 0.4, 0.2,               // I
      0.3, 0.5, 0.2;               // B
  p.means = {Vector{{0.0, 0.0}}, Vector{{6.0, 0.0}}, Vector{{0.0, 6.0}}};
  for (auto& c : p.covariances) c = Matrix::Identity(2, 2);
  p.cluster_emission << 0.9, 0.1, 0.2, 0.8, 0.2, 0.8;
  return p;
}


}  // namespace hmm_fixtures
