#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"
#include "embner/iob.hpp"
#include "embner/kcluster.hpp"

namespace embner::hmm {

inline constexpr int kStates = kNumIob;  // O, I, B
inline constexpr int kClusterValues = 2;

using StateVector = Eigen::Vector3d;
using StateMatrix = Eigen::Matrix3d;
using ClusterTable = Eigen::Matrix<double, kStates, kClusterValues>;

/// One sentence as the HMM sees it: an l x d embedding matrix and the 0/1
/// cluster tag of every token.
struct Observation {
  Matrix x;
  std::vector<int> v;

  int length() const { return static_cast<int>(x.rows()); }
};

struct HmmParams {
  StateVector initial;
  /// transition(from, to); rows are stochastic.
  StateMatrix transition;
  std::array<Vector, kStates> means;
  std::array<Matrix, kStates> covariances;
  /// cluster_emission(z, v) = p(v | z).
  ClusterTable cluster_emission;

  int dim() const { return static_cast<int>(means[0].size()); }
  /// Throws ValidationError when a stochastic row is off by more than 1e-9
  /// or a covariance is not symmetric positive definite.
  void validate() const;
};

nlohmann::json to_json(const HmmParams& params);
HmmParams params_from_json(const nlohmann::json& j);

/// log N(x; mu, sigma) through a Cholesky factor. `label` names the state in
/// the error raised for a non-PD covariance.
double log_gaussian_density(const Vector& x, const Vector& mu, const Matrix& sigma,
                            const std::string& label = "");

/// Per-position, per-state emission log-probabilities: Gaussian term plus the
/// cluster-tag term. Rows are positions, columns are states.
Matrix emission_log_probs(const Observation& obs, const HmmParams& params);

double joint_log_prob(const Observation& obs, std::span<const Iob> labels, const HmmParams& params);
double forward_loglik(const Observation& obs, const HmmParams& params);

/// Forward-backward posteriors in log space.
struct Posteriors {
  Matrix state;              // l x 3, rows sum to 1
  StateMatrix transitions;   // expected transition counts summed over positions
  double loglik = 0.0;
};
Posteriors forward_backward(const Observation& obs, const HmmParams& params);

/// Max-product decode; ties resolve toward the lower state index.
std::vector<Iob> viterbi_decode(const Observation& obs, const HmmParams& params);
std::vector<Iob> viterbi_from_emissions(const Matrix& emission_log, const HmmParams& params);

struct EmOptions {
  int max_iters = 100;
  double tol = 1e-5;
  /// Covariance floor as a fraction of the mean per-dimension embedding variance.
  double cov_floor = 1e-4;
};

struct TrainReport {
  /// Corpus log-likelihood of the parameters entering each iteration, plus
  /// the final parameters as the last entry.
  std::vector<double> loglik;
  bool converged = false;
  int iterations = 0;
};

struct FitResult {
  HmmParams params;
  TrainReport report;
};

/// Default start point: O mean from tag-0 tokens, B and I means from tag-1
/// tokens with seeded jitter, global covariance everywhere, uniform allowed
/// transitions, and the renormalized cluster table.
HmmParams initial_params(std::span<const Observation> corpus, std::uint64_t seed, double cov_floor = 1e-4);

/// Baum-Welch EM. Structural zeros (start->I, O->I) stay zero.
FitResult em_fit(std::span<const Observation> corpus, const HmmParams& init, const EmOptions& opts = {});

/// Builds observations for a corpus from embeddings and seed tags.
std::vector<Observation> observe(const Corpus& corpus, const EmbeddingTable& embeddings,
                                 const kcluster::SeedTags& tags);

}  // namespace embner::hmm
