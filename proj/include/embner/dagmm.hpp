#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"
#include "embner/tensor.hpp"

/// Deep autoencoding Gaussian mixture over span representations: an
/// autoencoder compresses each input, an estimator network predicts soft
/// component memberships, and a GMM fitted from those memberships scores the
/// compressed codes.
namespace embner::dagmm {

struct DagmmConfig {
  int input_dim = 0;
  std::vector<int> hidden = {75, 15};  // encoder sizes; the last one is the code size
  int estimator_hidden = 10;
  int k = 4;
  double lambda1 = 0.1;
  double lambda2 = 1e-4;
  int epochs = 100;
  int pretrain_epochs = 10;  // leading epochs that train the autoencoder alone
  /// Epochs fitting the estimator to K-means labels of the codes before the
  /// joint phase; 0 skips the warm start.
  int warm_start_epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-2;
  double clip = 5.0;
  double eps = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
  /// Code size plus the two reconstruction features.
  int latent_dim() const { return hidden.back() + 2; }
};

nlohmann::json to_json(const DagmmConfig& c);
DagmmConfig config_from_json(const nlohmann::json& j);

/// Affine layer, y = x W + b on row vectors.
struct Dense {
  ad::Parameter W;
  ad::Parameter b;
};

struct Mixture {
  Vector phi;               // K
  std::vector<Vector> mu;   // K x L
  std::vector<Matrix> sigma;
  std::vector<bool> degenerate;  // total responsibility under 1e-12 in the fitting batch

  int k() const { return static_cast<int>(phi.size()); }
  int dim() const { return mu.empty() ? 0 : static_cast<int>(mu.front().size()); }
  void validate() const;
};

struct DagmmModel {
  DagmmConfig config;
  Vector input_mean;   // z-score statistics applied by compress()
  Vector input_scale;
  std::vector<Dense> encoder;
  std::vector<Dense> decoder;
  std::vector<Dense> estimator;
  Mixture mixture;

  std::vector<ad::Parameter*> parameters();
};

/// Fresh network with Glorot weights, zero biases and identity standardization.
DagmmModel init_model(const DagmmConfig& config);

struct Compressed {
  Vector t;               // [code ; relative distance ; cosine]
  Vector standardized;    // the input after z-scoring
  Vector reconstruction;  // decoder output, in standardized coordinates
};

Compressed compress(const Vector& u, const DagmmModel& model);

/// [ |u - u'| / |u| , cos(u, u') ]. With |u| = 0 the distance is |u - u'| and
/// the cosine is 0; a zero u' also gives cosine 0.
Vector reconstruction_features(const Vector& u, const Vector& u_prime);
double reconstruction_loss(const Vector& u, const Vector& u_prime);

Vector membership(const Vector& t, const DagmmModel& model);

/// Responsibility-weighted moments; covariances symmetrized and given +eps*I.
/// A component with total responsibility below 1e-12 takes the batch mean and
/// covariance and is flagged.
Mixture estimate_gmm(const Matrix& t, const Matrix& gamma, double eps = 1e-6);

/// -log sum_k phi_k N(t; mu_k, Sigma_k).
double energy(const Vector& t, const Mixture& mixture);
double cov_penalty(const Mixture& mixture);

/// Differentiable pieces used by training, exposed for gradient checks.
struct BatchGraph {
  ad::Var t;
  ad::Var gamma;
  ad::Var reconstruction_loss;  // mean over rows
  ad::Var energy;               // mean over rows
  ad::Var penalty;
  ad::Var objective;
};

/// Builds the joint objective for a batch of already standardized rows.
BatchGraph build_objective(ad::Graph& g, DagmmModel& model, const Matrix& batch);

struct TrainReport {
  std::vector<double> epoch_objective;
  std::vector<double> epoch_reconstruction;
  std::vector<double> epoch_energy;
  int degenerate_batches = 0;
};

struct TrainResult {
  DagmmModel model;
  TrainReport report;
};

/// Autoencoder-only epochs, an estimator warm start on K-means labels of the
/// codes, then mini-batch gradient descent on the joint objective. The
/// mixture used for inference is refitted on the full data at the end.
TrainResult train(std::span<const Vector> spans, const DagmmConfig& config);

/// Argmax membership per span, ties to the lower index.
std::vector<int> assign_types(std::span<const Vector> spans, const DagmmModel& model);
int argmax_membership(const Vector& gamma);

nlohmann::json to_json(const DagmmModel& model);
DagmmModel model_from_json(const nlohmann::json& j);

}  // namespace embner::dagmm
