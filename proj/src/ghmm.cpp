#include "embner/ghmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "embner/error.hpp"

namespace embner::hmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kClusterSmoothing = 1e-3;
constexpr double kJitterScale = 1e-2;
const std::array<const char*, kStates> kStateNames = {"O", "I", "B"};

double log_sum_exp(const double* v, int n) {
  double m = kNegInf;
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

struct GaussianFactor {
  Eigen::LLT<Matrix> llt;
  double log_norm = 0.0;  // -0.5 * (d log 2pi + log|Sigma|)
};

GaussianFactor factor(const Matrix& sigma, const std::string& label) {
  GaussianFactor f;
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0)
    throw NumericError("covariance for state " + label + " is not square");
  f.llt.compute(sigma);
  if (f.llt.info() != Eigen::Success)
    throw NumericError("covariance for state " + label + " is not positive definite");
  const Matrix& l = f.llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) throw NumericError("covariance for state " + label + " is not positive definite");
    log_det += 2.0 * std::log(l(i, i));
  }
  f.log_norm = -0.5 * (static_cast<double>(sigma.rows()) * std::log(2.0 * std::numbers::pi) + log_det);
  return f;
}

double log_density(const GaussianFactor& f, const Vector& x, const Vector& mu) {
  Vector y = f.llt.matrixL().solve(x - mu);
  return f.log_norm - 0.5 * y.squaredNorm();
}

void check_shapes(const Observation& obs, const HmmParams& params) {
  if (obs.x.rows() != static_cast<Eigen::Index>(obs.v.size()))
    throw ValidationError("observation has mismatched embedding and cluster-tag lengths");
  if (obs.x.cols() != params.dim()) throw ValidationError("observation dimension does not match the model");
  for (int v : obs.v)
    if (v < 0 || v >= kClusterValues) throw ValidationError("cluster tag must be 0 or 1");
}

StateMatrix log_matrix(const StateMatrix& m) {
  StateMatrix out;
  for (int i = 0; i < kStates; ++i)
    for (int j = 0; j < kStates; ++j) out(i, j) = safe_log(m(i, j));
  return out;
}

// Forward lattice in log space; returns the sentence log-likelihood.
double forward_lattice(const Matrix& em, const StateVector& log_init, const StateMatrix& log_trans,
                       Matrix& alpha) {
  const auto l = em.rows();
  alpha.resize(l, kStates);
  for (int j = 0; j < kStates; ++j) alpha(0, j) = log_init[j] + em(0, j);
  double buf[kStates];
  for (Eigen::Index t = 1; t < l; ++t)
    for (int j = 0; j < kStates; ++j) {
      for (int i = 0; i < kStates; ++i) buf[i] = alpha(t - 1, i) + log_trans(i, j);
      alpha(t, j) = log_sum_exp(buf, kStates) + em(t, j);
    }
  for (int j = 0; j < kStates; ++j) buf[j] = alpha(l - 1, j);
  return log_sum_exp(buf, kStates);
}

}  // namespace

void HmmParams::validate() const {
  auto near_one = [](double s) { return std::abs(s - 1.0) <= 1e-9; };
  if (!near_one(initial.sum()) || (initial.array() < 0.0).any())
    throw ValidationError("initial distribution is not normalized");
  for (int i = 0; i < kStates; ++i) {
    if (!near_one(transition.row(i).sum()) || (transition.row(i).array() < 0.0).any())
      throw ValidationError(std::string("transition row ") + kStateNames[i] + " is not normalized");
    if (!near_one(cluster_emission.row(i).sum()) || (cluster_emission.row(i).array() < 0.0).any())
      throw ValidationError(std::string("cluster emission row ") + kStateNames[i] + " is not normalized");
    const Matrix& s = covariances[i];
    if (s.rows() != means[i].size() || s.cols() != means[i].size())
      throw ValidationError(std::string("covariance shape mismatch for state ") + kStateNames[i]);
    if (!s.isApprox(s.transpose(), 1e-12))
      throw ValidationError(std::string("covariance for state ") + kStateNames[i] + " is not symmetric");
    factor(s, kStateNames[i]);
  }
}

nlohmann::json to_json(const HmmParams& p) {
  auto vec = [](const auto& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
    return out;
  };
  auto mat = [](const auto& m) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      out.push_back(std::move(row));
    }
    return out;
  };
  nlohmann::json j;
  j["labels"] = {"O", "I", "B"};
  j["initial"] = vec(p.initial);
  j["transition"] = mat(p.transition);
  j["means"] = nlohmann::json::array();
  j["covariances"] = nlohmann::json::array();
  for (int z = 0; z < kStates; ++z) {
    j["means"].push_back(vec(p.means[z]));
    j["covariances"].push_back(mat(p.covariances[z]));
  }
  j["cluster_emission"] = mat(p.cluster_emission);
  return j;
}

HmmParams params_from_json(const nlohmann::json& j) {
  if (j.at("labels") != nlohmann::json({"O", "I", "B"}))
    throw ValidationError("HMM model must list labels [\"O\",\"I\",\"B\"]");
  HmmParams p;
  auto load_vec = [](const nlohmann::json& a) {
    auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  auto load_mat = [](const nlohmann::json& a) {
    auto rows = a.get<std::vector<std::vector<double>>>();
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) throw ValidationError("ragged matrix in HMM model");
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
  };
  Vector init = load_vec(j.at("initial"));
  Matrix trans = load_mat(j.at("transition"));
  Matrix table = load_mat(j.at("cluster_emission"));
  if (init.size() != kStates || trans.rows() != kStates || trans.cols() != kStates ||
      table.rows() != kStates || table.cols() != kClusterValues)
    throw ValidationError("HMM model has wrong state-table shapes");
  p.initial = init;
  p.transition = trans;
  p.cluster_emission = table;
  for (int z = 0; z < kStates; ++z) {
    p.means[z] = load_vec(j.at("means").at(z));
    p.covariances[z] = load_mat(j.at("covariances").at(z));
  }
  p.validate();
  return p;
}

double log_gaussian_density(const Vector& x, const Vector& mu, const Matrix& sigma, const std::string& label) {
  if (x.size() != mu.size() || sigma.rows() != x.size())
    throw ValidationError("log_gaussian_density: shape mismatch");
  return log_density(factor(sigma, label.empty() ? "?" : label), x, mu);
}

Matrix emission_log_probs(const Observation& obs, const HmmParams& params) {
  check_shapes(obs, params);
  const auto l = obs.x.rows();
  Matrix em(l, kStates);
  for (int z = 0; z < kStates; ++z) {
    GaussianFactor f = factor(params.covariances[z], kStateNames[z]);
    Matrix centered = obs.x.rowwise() - params.means[z].transpose();
    Matrix y = f.llt.matrixL().solve(centered.transpose());
    for (Eigen::Index t = 0; t < l; ++t)
      em(t, z) = f.log_norm - 0.5 * y.col(t).squaredNorm() +
                 safe_log(params.cluster_emission(z, obs.v[static_cast<std::size_t>(t)]));
  }
  return em;
}

double joint_log_prob(const Observation& obs, std::span<const Iob> labels, const HmmParams& params) {
  if (labels.size() != static_cast<std::size_t>(obs.length()))
    throw ValidationError("joint_log_prob: label length does not match the sentence");
  Matrix em = emission_log_probs(obs, params);
  double total = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    int z = static_cast<int>(labels[t]);
    total += t == 0 ? safe_log(params.initial[z])
                    : safe_log(params.transition(static_cast<int>(labels[t - 1]), z));
    total += em(static_cast<Eigen::Index>(t), z);
  }
  return total;
}

double forward_loglik(const Observation& obs, const HmmParams& params) {
  if (obs.length() == 0) return 0.0;
  Matrix em = emission_log_probs(obs, params);
  StateVector log_init;
  for (int z = 0; z < kStates; ++z) log_init[z] = safe_log(params.initial[z]);
  Matrix alpha;
  return forward_lattice(em, log_init, log_matrix(params.transition), alpha);
}

namespace {

Posteriors posteriors_from_emissions(const Matrix& em, const HmmParams& params) {
  const auto l = em.rows();
  StateVector log_init;
  for (int z = 0; z < kStates; ++z) log_init[z] = safe_log(params.initial[z]);
  StateMatrix log_trans = log_matrix(params.transition);

  Posteriors post;
  Matrix alpha;
  post.loglik = forward_lattice(em, log_init, log_trans, alpha);
  if (!std::isfinite(post.loglik)) throw NumericError("sentence has zero probability under the HMM");

  Matrix beta(l, kStates);
  beta.row(l - 1).setZero();
  double buf[kStates];
  for (Eigen::Index t = l - 2; t >= 0; --t)
    for (int i = 0; i < kStates; ++i) {
      for (int j = 0; j < kStates; ++j) buf[j] = log_trans(i, j) + em(t + 1, j) + beta(t + 1, j);
      beta(t, i) = log_sum_exp(buf, kStates);
    }

  post.state.resize(l, kStates);
  for (Eigen::Index t = 0; t < l; ++t) {
    double norm = 0.0;
    for (int z = 0; z < kStates; ++z) {
      double v = std::exp(alpha(t, z) + beta(t, z) - post.loglik);
      post.state(t, z) = v;
      norm += v;
    }
    post.state.row(t) /= norm;
  }
  post.transitions.setZero();
  for (Eigen::Index t = 0; t + 1 < l; ++t)
    for (int i = 0; i < kStates; ++i)
      for (int j = 0; j < kStates; ++j) {
        double lv = alpha(t, i) + log_trans(i, j) + em(t + 1, j) + beta(t + 1, j) - post.loglik;
        if (lv > kNegInf) post.transitions(i, j) += std::exp(lv);
      }
  return post;
}

}  // namespace

Posteriors forward_backward(const Observation& obs, const HmmParams& params) {
  if (obs.length() == 0) throw ValidationError("forward_backward: empty sentence");
  return posteriors_from_emissions(emission_log_probs(obs, params), params);
}

std::vector<Iob> viterbi_from_emissions(const Matrix& em, const HmmParams& params) {
  const auto l = em.rows();
  if (l == 0) return {};
  StateMatrix log_trans = log_matrix(params.transition);
  Matrix delta(l, kStates);
  Eigen::MatrixXi back(l, kStates);
  for (int z = 0; z < kStates; ++z) delta(0, z) = safe_log(params.initial[z]) + em(0, z);
  for (Eigen::Index t = 1; t < l; ++t)
    for (int j = 0; j < kStates; ++j) {
      int best = 0;
      double best_v = delta(t - 1, 0) + log_trans(0, j);
      for (int i = 1; i < kStates; ++i) {
        double v = delta(t - 1, i) + log_trans(i, j);
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      delta(t, j) = best_v + em(t, j);
      back(t, j) = best;
    }
  int state = 0;
  for (int z = 1; z < kStates; ++z)
    if (delta(l - 1, z) > delta(l - 1, state)) state = z;
  std::vector<Iob> path(static_cast<std::size_t>(l));
  for (Eigen::Index t = l - 1; t >= 0; --t) {
    path[static_cast<std::size_t>(t)] = static_cast<Iob>(state);
    if (t > 0) state = back(t, state);
  }
  return path;
}

std::vector<Iob> viterbi_decode(const Observation& obs, const HmmParams& params) {
  if (obs.length() == 0) return {};
  return viterbi_from_emissions(emission_log_probs(obs, params), params);
}

namespace {

struct CorpusMoments {
  Vector mean;
  Matrix cov;
  double mean_variance = 0.0;
};

CorpusMoments corpus_moments(std::span<const Observation> corpus) {
  CorpusMoments m;
  const auto d = corpus.front().x.cols();
  m.mean = Vector::Zero(d);
  double n = 0.0;
  for (const auto& o : corpus) {
    m.mean += o.x.colwise().sum().transpose();
    n += static_cast<double>(o.x.rows());
  }
  m.mean /= n;
  m.cov = Matrix::Zero(d, d);
  for (const auto& o : corpus) {
    Matrix c = o.x.rowwise() - m.mean.transpose();
    m.cov.noalias() += c.transpose() * c;
  }
  m.cov /= n;
  m.mean_variance = m.cov.diagonal().mean();
  return m;
}

}  // namespace

HmmParams initial_params(std::span<const Observation> corpus, std::uint64_t seed, double cov_floor) {
  if (corpus.empty()) throw ValidationError("initial_params: empty corpus");
  const auto d = corpus.front().x.cols();
  CorpusMoments moments = corpus_moments(corpus);

  std::array<Vector, 2> sums = {Vector::Zero(d), Vector::Zero(d)};
  std::array<double, 2> counts = {0.0, 0.0};
  for (const auto& o : corpus)
    for (Eigen::Index t = 0; t < o.x.rows(); ++t) {
      int v = o.v[static_cast<std::size_t>(t)];
      sums[v] += o.x.row(t).transpose();
      counts[v] += 1.0;
    }
  Vector mu_o = counts[0] > 0 ? Vector(sums[0] / counts[0]) : moments.mean;
  Vector mu_ne = counts[1] > 0 ? Vector(sums[1] / counts[1]) : moments.mean;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double jitter = kJitterScale * std::sqrt(std::max(moments.mean_variance, 1e-12));

  HmmParams p;
  p.means[static_cast<int>(Iob::O)] = mu_o;
  for (Iob z : {Iob::I, Iob::B}) {
    Vector mu = mu_ne;
    for (Eigen::Index k = 0; k < d; ++k) mu[k] += jitter * gauss(rng);
    p.means[static_cast<int>(z)] = mu;
  }
  Matrix sigma = moments.cov;
  sigma.diagonal().array() += cov_floor * std::max(moments.mean_variance, 1e-12);
  for (auto& c : p.covariances) c = sigma;

  const int o = static_cast<int>(Iob::O), i = static_cast<int>(Iob::I), b = static_cast<int>(Iob::B);
  p.initial.setZero();
  p.initial[o] = 0.5;
  p.initial[b] = 0.5;
  p.transition.setConstant(1.0 / 3.0);
  p.transition.row(o).setZero();
  p.transition(o, o) = 0.5;
  p.transition(o, b) = 0.5;

  // Cluster tag 0 puts all mass on O; tag 1 splits it between I and B. Read
  // per label and renormalized: O -> v=0, I and B -> v=1, then smoothed.
  p.cluster_emission.setZero();
  p.cluster_emission(o, 0) = 1.0;
  p.cluster_emission(i, 1) = 1.0;
  p.cluster_emission(b, 1) = 1.0;
  p.cluster_emission.array() += kClusterSmoothing;
  for (int z = 0; z < kStates; ++z) p.cluster_emission.row(z) /= p.cluster_emission.row(z).sum();
  return p;
}

FitResult em_fit(std::span<const Observation> corpus, const HmmParams& init, const EmOptions& opts) {
  if (corpus.empty()) throw ValidationError("em_fit: empty corpus");
  for (const auto& o : corpus) {
    check_shapes(o, init);
    if (o.length() == 0) throw ValidationError("em_fit: empty sentence");
  }
  init.validate();
  const auto d = static_cast<Eigen::Index>(init.dim());
  const double floor = opts.cov_floor * std::max(corpus_moments(corpus).mean_variance, 1e-12);

  FitResult result{init, {}};
  HmmParams& p = result.params;
  std::vector<Matrix> gammas(corpus.size());

  for (int iter = 0;; ++iter) {
    // E-step.
    double loglik = 0.0;
    StateVector init_counts = StateVector::Zero();
    StateMatrix trans_counts = StateMatrix::Zero();
    ClusterTable cluster_counts = ClusterTable::Zero();
    std::array<Vector, kStates> weighted_sum;
    StateVector weight = StateVector::Zero();
    for (auto& w : weighted_sum) w = Vector::Zero(d);

    for (std::size_t s = 0; s < corpus.size(); ++s) {
      const Observation& o = corpus[s];
      Posteriors post = posteriors_from_emissions(emission_log_probs(o, p), p);
      loglik += post.loglik;
      init_counts += post.state.row(0).transpose();
      trans_counts += post.transitions;
      for (Eigen::Index t = 0; t < o.x.rows(); ++t)
        for (int z = 0; z < kStates; ++z) cluster_counts(z, o.v[static_cast<std::size_t>(t)]) += post.state(t, z);
      for (int z = 0; z < kStates; ++z) {
        weighted_sum[z].noalias() += o.x.transpose() * post.state.col(z);
        weight[z] += post.state.col(z).sum();
      }
      gammas[s] = std::move(post.state);
    }
    result.report.loglik.push_back(loglik);

    if (iter > 0) {
      double prev = result.report.loglik[result.report.loglik.size() - 2];
      if ((loglik - prev) / std::abs(prev) < opts.tol) {
        result.report.converged = true;
        break;
      }
    }
    if (iter >= opts.max_iters) break;

    // M-step.
    p.initial = init_counts / init_counts.sum();
    for (int i = 0; i < kStates; ++i) {
      double row = trans_counts.row(i).sum();
      if (row > 0.0) p.transition.row(i) = trans_counts.row(i) / row;
      double crow = cluster_counts.row(i).sum();
      if (crow > 0.0) p.cluster_emission.row(i) = cluster_counts.row(i) / crow;
    }
    for (int z = 0; z < kStates; ++z) {
      if (!(weight[z] > 0.0)) continue;
      Vector mu = weighted_sum[z] / weight[z];
      Matrix scatter = Matrix::Zero(d, d);
      for (std::size_t s = 0; s < corpus.size(); ++s) {
        Matrix c = corpus[s].x.rowwise() - mu.transpose();
        scatter.noalias() += c.transpose() * gammas[s].col(z).asDiagonal() * c;
      }
      Matrix sigma = scatter / weight[z];
      sigma = (0.5 * (sigma + sigma.transpose())).eval();
      // Eigenvalue clipping rather than adding floor * I: an unconstrained
      // maximiser is left alone, so the log-likelihood stays monotone.
      Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
      Vector lambda = eig.eigenvalues().cwiseMax(floor);
      sigma = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
      p.means[z] = std::move(mu);
      p.covariances[z] = 0.5 * (sigma + sigma.transpose());
    }
    result.report.iterations = iter + 1;
  }
  return result;
}

std::vector<Observation> observe(const Corpus& corpus, const EmbeddingTable& embeddings,
                                 const kcluster::SeedTags& tags) {
  std::vector<Observation> out;
  out.reserve(corpus.size());
  const auto d = static_cast<Eigen::Index>(embeddings.dim());
  for (const auto& s : corpus.sentences) {
    Observation o;
    o.x.resize(static_cast<Eigen::Index>(s.size()), d);
    o.v.resize(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) {
      o.x.row(static_cast<Eigen::Index>(t)) = embeddings.lookup(s.tokens[t]).transpose();
      o.v[t] = tags(s.tokens[t]);
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace embner::hmm
