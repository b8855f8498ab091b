#include "embner/dagmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "embner/error.hpp"
#include "embner/json_io.hpp"
#include "embner/kcluster.hpp"

namespace embner::dagmm {

namespace {

constexpr double kDegenerateMass = 1e-12;

Vector dense_forward(const Dense& d, const Vector& x) {
  return (x.transpose() * d.W.value + d.b.value).transpose();
}

Vector tanh_vec(const Vector& v) { return v.array().tanh().matrix(); }

ad::Var dense_graph(ad::Graph& g, Dense& d, ad::Var x) { return ad::matmul(x, g.param(d.W)) + g.param(d.b); }

Dense make_dense(int in, int out, std::mt19937_64& rng) {
  return Dense{ad::Parameter(ad::glorot(in, out, rng)), ad::Parameter(Matrix::Zero(1, out))};
}

// Encoder layers all use tanh; the decoder and estimator end linear.
Vector encode(const DagmmModel& m, const Vector& x) {
  Vector h = x;
  for (const auto& layer : m.encoder) h = tanh_vec(dense_forward(layer, h));
  return h;
}

Vector decode(const DagmmModel& m, const Vector& code) {
  Vector h = code;
  for (std::size_t i = 0; i < m.decoder.size(); ++i) {
    h = dense_forward(m.decoder[i], h);
    if (i + 1 < m.decoder.size()) h = tanh_vec(h);
  }
  return h;
}

Vector logits(const DagmmModel& m, const Vector& t) {
  Vector h = t;
  for (std::size_t i = 0; i < m.estimator.size(); ++i) {
    h = dense_forward(m.estimator[i], h);
    if (i + 1 < m.estimator.size()) h = tanh_vec(h);
  }
  return h;
}

Vector softmax(const Vector& z) {
  Vector e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Vector standardize(const DagmmModel& m, const Vector& u) {
  if (u.size() != m.input_mean.size())
    throw ValidationError("dagmm: input has dimension " + std::to_string(u.size()) + ", model expects " +
                          std::to_string(m.input_mean.size()));
  return ((u - m.input_mean).array() / m.input_scale.array()).matrix();
}

nlohmann::json layers_to_json(const std::vector<Dense>& layers) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& l : layers) a.push_back({{"W", matrix_to_json(l.W.value)}, {"b", matrix_to_json(l.b.value)}});
  return a;
}

std::vector<Dense> layers_from_json(const nlohmann::json& a) {
  std::vector<Dense> out;
  for (const auto& l : a)
    out.push_back(Dense{ad::Parameter(matrix_from_json(l.at("W"))), ad::Parameter(matrix_from_json(l.at("b")))});
  return out;
}

// Batch mean and biased covariance of the rows of t.
std::pair<Vector, Matrix> batch_moments(const Matrix& t) {
  Vector mean = t.colwise().mean().transpose();
  Matrix c = t.rowwise() - mean.transpose();
  return {mean, c.transpose() * c / static_cast<double>(t.rows())};
}

}  // namespace

void DagmmConfig::validate() const {
  if (input_dim <= 0) throw ValidationError("dagmm: input_dim must be positive");
  if (hidden.empty()) throw ValidationError("dagmm: at least one encoder layer is required");
  for (int h : hidden)
    if (h <= 0) throw ValidationError("dagmm: hidden sizes must be positive");
  if (estimator_hidden <= 0) throw ValidationError("dagmm: estimator_hidden must be positive");
  if (k <= 0) throw ValidationError("dagmm: k must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ValidationError("dagmm: lambda1 and lambda2 must be >= 0");
  if (pretrain_epochs < 0 || warm_start_epochs < 0)
    throw ValidationError("dagmm: pretrain_epochs and warm_start_epochs must be >= 0");
  if (epochs < 0 || batch_size <= 0) throw ValidationError("dagmm: epochs >= 0 and batch_size > 0 required");
  if (!(learning_rate > 0.0)) throw ValidationError("dagmm: learning_rate must be positive");
  if (!(eps > 0.0)) throw ValidationError("dagmm: eps must be positive");
}

nlohmann::json to_json(const DagmmConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden", c.hidden},     {"estimator_hidden", c.estimator_hidden},
          {"k", c.k},                 {"lambda1", c.lambda1},   {"lambda2", c.lambda2},
          {"epochs", c.epochs},       {"pretrain_epochs", c.pretrain_epochs},
          {"warm_start_epochs", c.warm_start_epochs},
          {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"clip", c.clip},           {"eps", c.eps},           {"seed", c.seed}};
}

DagmmConfig config_from_json(const nlohmann::json& j) {
  DagmmConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.estimator_hidden = j.value("estimator_hidden", c.estimator_hidden);
  c.k = j.value("k", c.k);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.epochs = j.value("epochs", c.epochs);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.warm_start_epochs = j.value("warm_start_epochs", c.warm_start_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.clip = j.value("clip", c.clip);
  c.eps = j.value("eps", c.eps);
  c.seed = j.value("seed", c.seed);
  return c;
}

void Mixture::validate() const {
  if (phi.size() == 0) throw ValidationError("mixture: no components");
  if (std::abs(phi.sum() - 1.0) > 1e-9) throw ValidationError("mixture: weights do not sum to 1");
  for (int i = 0; i < k(); ++i) {
    if (phi[i] < 0.0) throw ValidationError("mixture: negative weight");
    Eigen::LLT<Matrix> llt(sigma[static_cast<std::size_t>(i)]);
    if (llt.info() != Eigen::Success)
      throw NumericError("mixture: covariance of component " + std::to_string(i) + " is not positive definite");
  }
}

std::vector<ad::Parameter*> DagmmModel::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto* group : {&encoder, &decoder, &estimator})
    for (auto& l : *group) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
  return out;
}

DagmmModel init_model(const DagmmConfig& config) {
  config.validate();
  DagmmModel m;
  m.config = config;
  m.input_mean = Vector::Zero(config.input_dim);
  m.input_scale = Vector::Ones(config.input_dim);
  std::mt19937_64 rng(config.seed);
  std::vector<int> enc = {config.input_dim};
  enc.insert(enc.end(), config.hidden.begin(), config.hidden.end());
  for (std::size_t i = 0; i + 1 < enc.size(); ++i) m.encoder.push_back(make_dense(enc[i], enc[i + 1], rng));
  for (std::size_t i = enc.size() - 1; i > 0; --i) m.decoder.push_back(make_dense(enc[i], enc[i - 1], rng));
  m.estimator.push_back(make_dense(config.latent_dim(), config.estimator_hidden, rng));
  m.estimator.push_back(make_dense(config.estimator_hidden, config.k, rng));
  const int L = config.latent_dim();
  m.mixture.phi = Vector::Constant(config.k, 1.0 / config.k);
  m.mixture.mu.assign(static_cast<std::size_t>(config.k), Vector::Zero(L));
  m.mixture.sigma.assign(static_cast<std::size_t>(config.k), Matrix::Identity(L, L));
  m.mixture.degenerate.assign(static_cast<std::size_t>(config.k), false);
  return m;
}

Vector reconstruction_features(const Vector& u, const Vector& u_prime) {
  if (u.size() != u_prime.size()) throw ValidationError("reconstruction_features: size mismatch");
  const double nu = u.norm();
  const double np = u_prime.norm();
  const double dist = (u - u_prime).norm();
  Vector f(2);
  f[0] = nu > 0.0 ? dist / nu : dist;
  f[1] = nu > 0.0 && np > 0.0 ? u.dot(u_prime) / (nu * np) : 0.0;
  return f;
}

double reconstruction_loss(const Vector& u, const Vector& u_prime) {
  if (u.size() != u_prime.size()) throw ValidationError("reconstruction_loss: size mismatch");
  return (u - u_prime).squaredNorm();
}

Compressed compress(const Vector& u, const DagmmModel& model) {
  Compressed c;
  c.standardized = standardize(model, u);
  Vector code = encode(model, c.standardized);
  c.reconstruction = decode(model, code);
  Vector f = reconstruction_features(c.standardized, c.reconstruction);
  c.t.resize(code.size() + 2);
  c.t << code, f;
  return c;
}

Vector membership(const Vector& t, const DagmmModel& model) { return softmax(logits(model, t)); }

Mixture estimate_gmm(const Matrix& t, const Matrix& gamma, double eps) {
  if (t.rows() == 0 || t.rows() != gamma.rows())
    throw ValidationError("estimate_gmm: need matching, non-empty t and gamma batches");
  const Eigen::Index n = t.rows(), K = gamma.cols();
  Mixture m;
  m.phi.resize(K);
  m.mu.resize(static_cast<std::size_t>(K));
  m.sigma.resize(static_cast<std::size_t>(K));
  m.degenerate.assign(static_cast<std::size_t>(K), false);
  auto [batch_mean, batch_cov] = batch_moments(t);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const double nk = gamma.col(k).sum();
    m.phi[k] = nk / static_cast<double>(n);
    Matrix s;
    if (nk < kDegenerateMass) {
      m.degenerate[kk] = true;
      m.mu[kk] = batch_mean;
      s = batch_cov;
    } else {
      m.mu[kk] = (gamma.col(k).transpose() * t).transpose() / nk;
      Matrix c = t.rowwise() - m.mu[kk].transpose();
      s = c.transpose() * gamma.col(k).asDiagonal() * c / nk;
    }
    s = (0.5 * (s + s.transpose())).eval();
    s.diagonal().array() += eps;
    m.sigma[kk] = std::move(s);
  }
  return m;
}

double energy(const Vector& t, const Mixture& mixture) {
  const int K = mixture.k();
  const double L = static_cast<double>(t.size());
  std::vector<double> terms;
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (!(mixture.phi[k] > 0.0)) continue;
    Eigen::LLT<Matrix> llt(mixture.sigma[kk]);
    if (llt.info() != Eigen::Success)
      throw NumericError("energy: covariance of component " + std::to_string(k) + " is not positive definite");
    Vector z = llt.matrixL().solve(t - mixture.mu[kk]);
    double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    terms.push_back(std::log(mixture.phi[k]) - 0.5 * z.squaredNorm() - 0.5 * logdet -
                    0.5 * L * std::log(2.0 * std::numbers::pi));
  }
  if (terms.empty()) throw NumericError("energy: mixture has no component with positive weight");
  double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += std::exp(v - mx);
  return -(mx + std::log(s));
}

double cov_penalty(const Mixture& mixture) {
  double p = 0.0;
  for (const auto& s : mixture.sigma) p += s.diagonal().array().inverse().sum();
  return p;
}

BatchGraph build_objective(ad::Graph& g, DagmmModel& model, const Matrix& batch) {
  using namespace ad;
  const Eigen::Index n = batch.rows();
  if (n == 0) throw ValidationError("dagmm: empty batch");
  const auto& cfg = model.config;

  Var x = g.constant(batch);
  Var h = x;
  for (auto& layer : model.encoder) h = tanh(dense_graph(g, layer, h));
  Var code = h;
  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    h = dense_graph(g, model.decoder[i], h);
    if (i + 1 < model.decoder.size()) h = tanh(h);
  }
  Var recon = h;

  BatchGraph out;
  Var sq = sum_rows(square(recon - x));
  out.reconstruction_loss = mean(sq);

  // Input norms are data, so the zero-norm cases become constant masks.
  Matrix norm = batch.rowwise().norm();
  Matrix safe = norm.unaryExpr([](double v) { return v > 0.0 ? v : 1.0; });
  Matrix mask = norm.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
  Var rel = div(sqrt(sq), g.constant(safe));
  Var rnorm = sqrt(add_scalar(sum_rows(square(recon)), 1e-30));
  Var cos = mul(div(sum_rows(mul(x, recon)), mul(g.constant(safe), rnorm)), g.constant(mask));
  out.t = concat_cols({code, rel, cos});

  h = out.t;
  for (std::size_t i = 0; i < model.estimator.size(); ++i) {
    h = dense_graph(g, model.estimator[i], h);
    if (i + 1 < model.estimator.size()) h = tanh(h);
  }
  out.gamma = softmax_rows(h);

  const Eigen::Index L = out.t.cols();
  const Matrix& tv = out.t.value();
  auto [bmean, bcov] = batch_moments(tv);
  Var nk = sum_cols(out.gamma);
  Var mu = div(matmul(transpose(out.gamma), out.t), transpose(nk));
  Var eps_i = g.constant(cfg.eps * Matrix::Identity(L, L));
  Var one = g.constant(Matrix::Ones(1, 1));
  const double log_norm = -0.5 * static_cast<double>(L) * std::log(2.0 * std::numbers::pi);

  std::vector<Var> log_terms;
  Var penalty = g.constant(Matrix::Zero(1, 1));
  for (int k = 0; k < cfg.k; ++k) {
    Var sigma;
    Var centered;
    const bool degenerate = nk.value()(0, k) < kDegenerateMass;
    if (degenerate) {
      Matrix s = 0.5 * (bcov + bcov.transpose());
      s.diagonal().array() += cfg.eps;
      sigma = g.constant(s);
    } else {
      Var mu_k = slice(mu, k, 1, 0, L);
      centered = out.t - mu_k;
      Var gk = slice(out.gamma, 0, n, k, 1);
      Var s = div(matmul(transpose(mul(centered, gk)), centered), slice(nk, 0, 1, k, 1));
      sigma = scale(s + transpose(s), 0.5) + eps_i;
    }
    penalty = penalty + sum(div(one, diag(sigma)));
    if (degenerate) continue;
    Var inv = inverse_spd(sigma);
    Var quad = sum_rows(mul(matmul(centered, inv), centered));
    Var phi_k = scale(slice(nk, 0, 1, k, 1), 1.0 / static_cast<double>(n));
    Var lp = add_scalar(scale(quad, -0.5) - scale(logdet_spd(sigma), 0.5), log_norm) + log(phi_k);
    log_terms.push_back(lp);
  }
  out.energy = neg(mean(logsumexp_rows(concat_cols(log_terms))));
  out.penalty = penalty;
  out.objective = out.reconstruction_loss + scale(out.energy, cfg.lambda1) + scale(out.penalty, cfg.lambda2);
  return out;
}

TrainResult train(std::span<const Vector> spans, const DagmmConfig& config_in) {
  DagmmConfig config = config_in;
  if (spans.empty()) throw ValidationError("dagmm: no spans to train on");
  if (config.input_dim == 0) config.input_dim = static_cast<int>(spans.front().size());
  config.validate();
  if (static_cast<int>(spans.size()) < config.k)
    throw ValidationError("dagmm: " + std::to_string(spans.size()) + " spans is fewer than k=" +
                          std::to_string(config.k));
  const auto n = static_cast<Eigen::Index>(spans.size());
  Matrix data(n, config.input_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector& u = spans[static_cast<std::size_t>(i)];
    if (u.size() != config.input_dim)
      throw ValidationError("dagmm: span " + std::to_string(i) + " has dimension " + std::to_string(u.size()));
    if (!u.allFinite()) throw ValidationError("dagmm: span " + std::to_string(i) + " is not finite");
    data.row(i) = u.transpose();
  }

  TrainResult result;
  DagmmModel& model = result.model;
  model = init_model(config);
  model.input_mean = data.colwise().mean().transpose();
  Vector var = ((data.rowwise() - model.input_mean.transpose()).array().square().colwise().mean()).transpose();
  model.input_scale = var.array().sqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; }).matrix();
  Matrix z = (data.rowwise() - model.input_mean.transpose()).array().rowwise() /
             model.input_scale.transpose().array();

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n);
  // Shuffled mini-batches; a short tail joins the previous batch instead of
  // fitting a GMM on a handful of rows.
  auto for_each_batch = [&](auto&& fn) {
    std::shuffle(order.begin(), order.end(), rng);
    int b = 0;
    for (Eigen::Index start = 0, end = 0; start < n; start = end, ++b) {
      end = std::min(n, start + bs);
      if (n - end < bs / 2) end = n;
      std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + end);
      fn(rows, b);
    }
    return b;
  };
  auto gather = [&](const std::vector<Eigen::Index>& rows) {
    Matrix batch(static_cast<Eigen::Index>(rows.size()), z.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) batch.row(static_cast<Eigen::Index>(i)) = z.row(rows[i]);
    return batch;
  };

  auto params = model.parameters();

  auto run_epoch = [&](int epoch, bool joint) {
    double obj = 0.0, rec = 0.0, en = 0.0;
    int batches = for_each_batch([&](const std::vector<Eigen::Index>& rows, int b) {
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      ad::Graph g;
      BatchGraph bg;
      try {
        bg = build_objective(g, model, gather(rows));
      } catch (const NumericError& e) {
        throw NumericError("dagmm: diverged at " + where + ": " + e.what());
      }
      const double value = bg.objective.scalar();
      if (!std::isfinite(value)) throw NumericError("dagmm: non-finite objective at " + where);
      if (bg.gamma.value().colwise().sum().minCoeff() < kDegenerateMass) ++result.report.degenerate_batches;
      g.backward(joint ? bg.objective : bg.reconstruction_loss);
      ad::sgd_step(params, config.learning_rate, config.clip);
      obj += value;
      rec += bg.reconstruction_loss.scalar();
      en += bg.energy.scalar();
    });
    result.report.epoch_objective.push_back(obj / batches);
    result.report.epoch_reconstruction.push_back(rec / batches);
    result.report.epoch_energy.push_back(en / batches);
  };

  int epoch = 0;
  for (int e = 0; e < config.pretrain_epochs; ++e) run_epoch(epoch++, false);

  if (config.warm_start_epochs > 0) {
    // Fit the estimator to K-means labels of the current codes so the joint
    // phase starts from a split mixture rather than a symmetric one.
    std::vector<Vector> codes;
    for (Eigen::Index i = 0; i < n; ++i) codes.push_back(compress(spans[static_cast<std::size_t>(i)], model).t);
    auto km = kcluster::kmeans(codes, config.k, config.seed);
    std::vector<ad::Parameter*> est;
    for (auto& l : model.estimator) {
      est.push_back(&l.W);
      est.push_back(&l.b);
    }
    for (int e = 0; e < config.warm_start_epochs; ++e) {
      for_each_batch([&](const std::vector<Eigen::Index>& rows, int) {
        Matrix t(static_cast<Eigen::Index>(rows.size()), config.latent_dim());
        Matrix target = Matrix::Zero(t.rows(), config.k);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          t.row(static_cast<Eigen::Index>(i)) = codes[static_cast<std::size_t>(rows[i])].transpose();
          target(static_cast<Eigen::Index>(i), km.assignment[static_cast<std::size_t>(rows[i])]) = 1.0;
        }
        ad::Graph g;
        ad::Var h = g.constant(t);
        for (std::size_t i = 0; i < model.estimator.size(); ++i) {
          h = dense_graph(g, model.estimator[i], h);
          if (i + 1 < model.estimator.size()) h = ad::tanh(h);
        }
        ad::Var logp = h - ad::logsumexp_rows(h);
        ad::Var nll = ad::neg(ad::mean(ad::sum_rows(ad::mul(logp, g.constant(target)))));
        g.backward(nll);
        ad::sgd_step(est, config.learning_rate, config.clip);
      });
    }
  }

  for (int e = 0; e < config.epochs; ++e) run_epoch(epoch++, true);

  Matrix t(n, config.latent_dim());
  Matrix gamma(n, config.k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Compressed c = compress(spans[static_cast<std::size_t>(i)], model);
    t.row(i) = c.t.transpose();
    gamma.row(i) = membership(c.t, model).transpose();
  }
  model.mixture = estimate_gmm(t, gamma, config.eps);
  return result;
}

int argmax_membership(const Vector& gamma) {
  int best = 0;
  for (int k = 1; k < gamma.size(); ++k)
    if (gamma[k] > gamma[best]) best = k;
  return best;
}

std::vector<int> assign_types(std::span<const Vector> spans, const DagmmModel& model) {
  std::vector<int> out;
  out.reserve(spans.size());
  for (const Vector& u : spans) out.push_back(argmax_membership(membership(compress(u, model).t, model)));
  return out;
}

nlohmann::json to_json(const DagmmModel& model) {
  nlohmann::json mix;
  mix["phi"] = vector_to_json(model.mixture.phi);
  mix["mu"] = nlohmann::json::array();
  mix["sigma"] = nlohmann::json::array();
  for (const auto& v : model.mixture.mu) mix["mu"].push_back(vector_to_json(v));
  for (const auto& s : model.mixture.sigma) mix["sigma"].push_back(matrix_to_json(s));
  mix["degenerate"] = model.mixture.degenerate;
  return {{"config", to_json(model.config)},
          {"input_mean", vector_to_json(model.input_mean)},
          {"input_scale", vector_to_json(model.input_scale)},
          {"encoder", layers_to_json(model.encoder)},
          {"decoder", layers_to_json(model.decoder)},
          {"estimator", layers_to_json(model.estimator)},
          {"mixture", mix}};
}

DagmmModel model_from_json(const nlohmann::json& j) {
  DagmmModel m;
  m.config = config_from_json(j.at("config"));
  m.config.validate();
  m.input_mean = vector_from_json(j.at("input_mean"));
  m.input_scale = vector_from_json(j.at("input_scale"));
  m.encoder = layers_from_json(j.at("encoder"));
  m.decoder = layers_from_json(j.at("decoder"));
  m.estimator = layers_from_json(j.at("estimator"));
  const auto& mix = j.at("mixture");
  m.mixture.phi = vector_from_json(mix.at("phi"));
  for (const auto& v : mix.at("mu")) m.mixture.mu.push_back(vector_from_json(v));
  for (const auto& s : mix.at("sigma")) m.mixture.sigma.push_back(matrix_from_json(s));
  m.mixture.degenerate = mix.at("degenerate").get<std::vector<bool>>();
  if (m.mixture.k() != m.config.k || m.mixture.mu.size() != static_cast<std::size_t>(m.config.k) ||
      m.input_mean.size() != m.config.input_dim)
    throw ValidationError("dagmm model: inconsistent sizes");
  m.mixture.validate();
  return m;
}

}  // namespace embner::dagmm
