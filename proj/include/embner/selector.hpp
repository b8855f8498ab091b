#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"
#include "embner/tagger.hpp"

/// Policy-gradient instance selection over noisily labelled sentences.
namespace embner::selector {

struct SelectorConfig {
  int rounds = 3;        // passes over the corpus
  int batch_size = 10;   // sentences per reward
  double learning_rate = 0.05;
  double epsilon = 0.05;  // floor on both action probabilities while sampling
  bool baseline = false;  // subtract the moving-average reward
  int baseline_window = 10;
  /// Pool |marginal - gold one-hot| instead of raw tag scores in the state.
  bool label_aware_state = true;
  int warmup_epochs = 1;
  bool relabel = true;  // rewrite rejected sentences with the tagger after each round
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const SelectorConfig& c);
SelectorConfig selector_config_from_json(const nlohmann::json& j);

struct SelectorParams {
  Vector W;
  double b = 0.0;
};

/// Mean recurrent feature over tokens followed by a pooled tag block of size
/// |tagset|. The tag block is the mean emission row, or with `label_aware`
/// the mean of |CRF marginal - one-hot(label)| per tag.
Vector state_repr(const tagger::TaggerModel& model, const tagger::Example& sentence, bool label_aware);

double select_probability(const Vector& s, const SelectorParams& params);
/// a * sigma(W.s + b) + (1 - a) * (1 - sigma(W.s + b)).
double policy_prob(const Vector& s, int a, const SelectorParams& params);

/// d log A(s, a) / d(W, b).
struct PolicyGradient {
  Vector dW;
  double db = 0.0;
};
PolicyGradient log_policy_gradient(const Vector& s, int a, const SelectorParams& params);

/// Sum of log-probabilities of the selected sentences divided by the batch
/// size `n`. Throws ValidationError when n < 1 or more sentences than n are given.
double compute_reward(const tagger::TaggerModel& model, std::span<const tagger::Example> selected, int n);

/// Theta += lr * sum_j (reward - baseline) * grad log A(s_j, a_j).
SelectorParams reinforce_update(const SelectorParams& params, std::span<const Vector> states,
                                std::span<const int> actions, double reward, double learning_rate,
                                double baseline = 0.0);

struct RoundReport {
  int round = 0;
  int batches = 0;
  int empty_batches = 0;
  int selected = 0;
  int relabeled = 0;  // rejected sentences whose labels changed
  double mean_reward = 0.0;
  std::vector<std::size_t> rejected_ids;
  std::vector<std::size_t> relabeled_ids;
};

struct RefineResult {
  std::vector<std::vector<std::string>> labels;  // refined labels per sentence
  tagger::TaggerModel tagger;
  SelectorParams params;
  std::vector<double> select_probability;  // per sentence, under the final tagger and labels
  std::vector<bool> selected;              // select_probability >= 0.5
  std::vector<RoundReport> rounds;
};

/// Warm-up epochs on all sentences, then `rounds` passes: each pass shuffles
/// the sentences, samples actions batch by batch, trains the tagger on the
/// positives, rewards the policy, and finally relabels that pass's rejected
/// sentences with the tagger.
/// The policy starts from `initial` when given, else from W = 0, b = 0.
RefineResult refine_loop(const Corpus& noisy, tagger::TaggerModel tagger, const SelectorConfig& config,
                         const std::optional<SelectorParams>& initial = std::nullopt);

nlohmann::json to_json(const SelectorParams& p);
SelectorParams params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoundReport& r);

}  // namespace embner::selector
