#include "embner/selector.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "embner/crf.hpp"
#include "embner/error.hpp"
#include "embner/json_io.hpp"

namespace embner::selector {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void SelectorConfig::validate() const {
  if (rounds < 0) throw ValidationError("selector: rounds must be >= 0");
  if (batch_size < 1) throw ValidationError("selector: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ValidationError("selector: learning_rate must be >= 0");
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ValidationError("selector: epsilon must be in [0, 0.5)");
  if (baseline_window < 1) throw ValidationError("selector: baseline_window must be >= 1");
  if (warmup_epochs < 0) throw ValidationError("selector: warmup_epochs must be >= 0");
}

nlohmann::json to_json(const SelectorConfig& c) {
  return {{"rounds", c.rounds},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"epsilon", c.epsilon},
          {"baseline", c.baseline},
          {"baseline_window", c.baseline_window},
          {"label_aware_state", c.label_aware_state},
          {"warmup_epochs", c.warmup_epochs},
          {"relabel", c.relabel},
          {"seed", c.seed}};
}

SelectorConfig selector_config_from_json(const nlohmann::json& j) {
  SelectorConfig c;
  c.rounds = j.value("rounds", c.rounds);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.baseline = j.value("baseline", c.baseline);
  c.baseline_window = j.value("baseline_window", c.baseline_window);
  c.label_aware_state = j.value("label_aware_state", c.label_aware_state);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.relabel = j.value("relabel", c.relabel);
  c.seed = j.value("seed", c.seed);
  return c;
}

Vector state_repr(const tagger::TaggerModel& model, const tagger::Example& sentence, bool label_aware) {
  tagger::Inference inf = tagger::infer(model, sentence.tokens);
  const auto l = static_cast<double>(inf.scores.rows());
  const Eigen::Index H2 = inf.features.cols(), n = inf.scores.cols();
  Vector s(H2 + n);
  s.head(H2) = inf.features.colwise().sum().transpose() / l;
  if (!label_aware) {
    s.tail(n) = inf.scores.colwise().sum().transpose() / l;
    return s;
  }
  if (sentence.tags.size() != sentence.tokens.size())
    throw ValidationError("selector: sentence has " + std::to_string(sentence.tokens.size()) + " tokens but " +
                          std::to_string(sentence.tags.size()) + " labels");
  Matrix residual = crf::marginals(inf.scores, model.transitions.value).unary;
  for (std::size_t t = 0; t < sentence.tags.size(); ++t) residual(static_cast<Eigen::Index>(t), sentence.tags[t]) -= 1.0;
  s.tail(n) = residual.cwiseAbs().colwise().sum().transpose() / l;
  return s;
}

double select_probability(const Vector& s, const SelectorParams& params) {
  if (s.size() != params.W.size())
    throw ValidationError("selector: state has dimension " + std::to_string(s.size()) + ", policy expects " +
                          std::to_string(params.W.size()));
  return sigmoid(params.W.dot(s) + params.b);
}

double policy_prob(const Vector& s, int a, const SelectorParams& params) {
  if (a != 0 && a != 1) throw ValidationError("selector: action must be 0 or 1");
  const double p = select_probability(s, params);
  return a == 1 ? p : 1.0 - p;
}

PolicyGradient log_policy_gradient(const Vector& s, int a, const SelectorParams& params) {
  if (a != 0 && a != 1) throw ValidationError("selector: action must be 0 or 1");
  const double p = select_probability(s, params);
  // d/dx log sigma(x) = 1 - sigma, d/dx log(1 - sigma(x)) = -sigma.
  const double c = a == 1 ? 1.0 - p : -p;
  return PolicyGradient{c * s, c};
}

double compute_reward(const tagger::TaggerModel& model, std::span<const tagger::Example> selected, int n) {
  if (n < 1) throw ValidationError("selector: reward needs a batch size of at least 1");
  if (selected.size() > static_cast<std::size_t>(n))
    throw ValidationError("selector: more selected sentences than the batch size");
  double total = 0.0;
  for (const auto& ex : selected) total += tagger::sentence_log_prob(model, ex.tokens, ex.tags);
  return total / n;
}

SelectorParams reinforce_update(const SelectorParams& params, std::span<const Vector> states,
                                std::span<const int> actions, double reward, double learning_rate,
                                double baseline) {
  if (states.size() != actions.size()) throw ValidationError("selector: states and actions differ in length");
  SelectorParams out = params;
  const double scale = learning_rate * (reward - baseline);
  if (scale == 0.0) return out;
  for (std::size_t j = 0; j < states.size(); ++j) {
    PolicyGradient g = log_policy_gradient(states[j], actions[j], params);
    out.W += scale * g.dW;
    out.b += scale * g.db;
  }
  return out;
}

RefineResult refine_loop(const Corpus& noisy, tagger::TaggerModel model, const SelectorConfig& config,
                         const std::optional<SelectorParams>& initial) {
  config.validate();
  if (noisy.size() == 0) throw ValidationError("selector: empty corpus");
  const tagger::Tagset& tagset = model.tagset;
  std::vector<tagger::Example> examples = tagger::make_examples(noisy, tagset);
  std::mt19937_64 rng(config.seed);

  for (int e = 0; e < config.warmup_epochs; ++e) tagger::train_epoch(model, examples, e, rng);

  SelectorParams params{Vector::Zero(model.feature_dim() + tagset.size()), 0.0};
  if (initial) {
    if (initial->W.size() != params.W.size())
      throw ValidationError("selector: initial policy has dimension " + std::to_string(initial->W.size()) +
                            ", expected " + std::to_string(params.W.size()));
    params = *initial;
  }
  std::deque<double> history;
  std::vector<RoundReport> reports;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto n = static_cast<std::size_t>(config.batch_size);

  for (int round = 0; round < config.rounds; ++round) {
    RoundReport report;
    report.round = round;
    const int epoch = config.warmup_epochs + round;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> rejected;
    double reward_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += n) {
      const std::size_t end = std::min(order.size(), start + n);
      std::vector<Vector> states;
      std::vector<int> actions;
      std::vector<tagger::Example> positives, batch;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t id = order[k];
        states.push_back(state_repr(model, examples[id], config.label_aware_state));
        const double p = std::clamp(select_probability(states.back(), params), config.epsilon, 1.0 - config.epsilon);
        const int a = std::bernoulli_distribution(p)(rng) ? 1 : 0;
        actions.push_back(a);
        batch.push_back(examples[id]);
        if (a == 1)
          positives.push_back(examples[id]);
        else
          rejected.push_back(id);
      }
      if (!positives.empty()) tagger::train_epoch(model, positives, epoch, rng);
      // An all-rejected batch is scored on every candidate so that rejecting
      // everything is not rewarded with log 1.
      const bool empty = positives.empty();
      const double reward = compute_reward(model, empty ? batch : positives, config.batch_size);
      double base = 0.0;
      if (config.baseline && !history.empty())
        base = std::accumulate(history.begin(), history.end(), 0.0) / static_cast<double>(history.size());
      params = reinforce_update(params, states, actions, reward, config.learning_rate, base);
      history.push_back(reward);
      if (history.size() > static_cast<std::size_t>(config.baseline_window)) history.pop_front();
      ++report.batches;
      report.empty_batches += empty ? 1 : 0;
      report.selected += static_cast<int>(positives.size());
      reward_sum += reward;
    }
    if (config.relabel) {
      for (std::size_t id : rejected) {
        std::vector<int> tags = tagger::decode(model, examples[id].tokens);
        if (tags != examples[id].tags) {
          examples[id].tags = std::move(tags);
          ++report.relabeled;
          report.relabeled_ids.push_back(id);
        }
      }
    }
    std::sort(rejected.begin(), rejected.end());
    report.rejected_ids = rejected;
    report.mean_reward = report.batches ? reward_sum / report.batches : 0.0;
    reports.push_back(report);
  }

  RefineResult result;
  for (const auto& ex : examples) {
    result.labels.push_back(tagset.decode(ex.tags));
    const double p = select_probability(state_repr(model, ex, config.label_aware_state), params);
    result.select_probability.push_back(p);
    result.selected.push_back(p >= 0.5);
  }
  result.tagger = std::move(model);
  result.params = std::move(params);
  result.rounds = std::move(reports);
  return result;
}

nlohmann::json to_json(const SelectorParams& p) {
  return {{"W", vector_to_json(p.W)}, {"b", p.b}};
}

SelectorParams params_from_json(const nlohmann::json& j) {
  SelectorParams p{vector_from_json(j.at("W")), j.at("b").get<double>()};
  if (!p.W.allFinite() || !std::isfinite(p.b)) throw ValidationError("selector: non-finite parameters");
  return p;
}

nlohmann::json to_json(const RoundReport& r) {
  return {{"round", r.round},           {"batches", r.batches},     {"empty_batches", r.empty_batches},
          {"selected", r.selected},     {"relabeled", r.relabeled}, {"mean_reward", r.mean_reward}};
}

}  // namespace embner::selector
