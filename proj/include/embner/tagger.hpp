#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"
#include "embner/tensor.hpp"

/// BiLSTM-CRF sequence tagger over frozen word embeddings and a trainable
/// character encoder.
namespace embner::tagger {

/// O followed by B-X, I-X for each type X: index 0 is O, 1 + 2k is B of type
/// k and 2 + 2k is I of type k.
class Tagset {
 public:
  Tagset() = default;
  explicit Tagset(std::vector<std::string> types);
  /// Types "C0" .. "C{k-1}".
  static Tagset components(int k);
  /// Sorted distinct entity types of a labelled corpus.
  static Tagset from_corpus(const Corpus& corpus);

  int size() const { return 1 + 2 * num_types(); }
  int num_types() const { return static_cast<int>(types_.size()); }
  const std::vector<std::string>& types() const { return types_; }

  std::string label(int index) const;
  /// Throws ValidationError for labels outside the tagset.
  int index(std::string_view label) const;

  int start() const { return size(); }
  int stop() const { return size() + 1; }
  /// IOB validity of from -> to, where from may be start() and to may be stop().
  bool allowed(int from, int to) const;

  /// Labels are normalized to IOB2 first, so stray I-X becomes B-X.
  std::vector<int> encode(const std::vector<std::string>& labels) const;
  std::vector<std::string> decode(std::span<const int> tags) const;

  friend bool operator==(const Tagset&, const Tagset&) = default;

 private:
  std::vector<std::string> types_;
};

struct TaggerConfig {
  int hidden = 64;
  bool use_chars = true;
  int char_dim = 16;
  int char_hidden = 16;
  double dropout = 0.5;
  double learning_rate = 0.015;
  double decay = 0.95;  // learning rate multiplier per epoch
  double clip = 5.0;
  int epochs = 30;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TaggerConfig& c);
TaggerConfig tagger_config_from_json(const nlohmann::json& j);

/// learning_rate * decay^epoch.
double learning_rate(const TaggerConfig& config, int epoch);

struct LstmParams {
  ad::Parameter W;
  ad::Parameter b;
};

struct TaggerModel {
  TaggerConfig config;
  Tagset tagset;
  std::shared_ptr<const EmbeddingTable> embeddings;
  /// Byte -> row of char_embedding; row 0 is reserved for unseen bytes.
  std::array<int, 256> char_index{};
  ad::Parameter char_embedding;
  LstmParams char_forward, char_backward;
  LstmParams word_forward, word_backward;
  ad::Parameter proj_W, proj_b;
  /// (n + 2) x (n + 2) CRF transitions [from, to]; invalid IOB entries stay at crf::kMasked.
  ad::Parameter transitions;

  std::vector<ad::Parameter*> parameters();
  int feature_dim() const { return 2 * config.hidden; }
  /// Resets the structurally invalid transitions.
  void apply_mask();
};

/// Glorot weights, forget-gate bias 1, char vocabulary from `corpus`.
TaggerModel init_tagger(const TaggerConfig& config, const Tagset& tagset,
                        std::shared_ptr<const EmbeddingTable> embeddings, const Corpus& corpus);

struct Encoded {
  ad::Var features;  // l x 2H, [forward ; backward]
  ad::Var scores;    // l x |tagset|
};

/// Builds the network for one sentence; dropout is applied only when `rng` is given.
Encoded encode(ad::Graph& g, TaggerModel& model, const std::vector<std::string>& tokens,
               std::mt19937_64* rng = nullptr);

struct Inference {
  Matrix features;
  Matrix scores;
};

Inference infer(const TaggerModel& model, const std::vector<std::string>& tokens);

struct Example {
  std::vector<std::string> tokens;
  std::vector<int> tags;
};

std::vector<Example> make_examples(const Corpus& corpus, const Tagset& tagset);

/// One shuffled pass of per-sentence SGD at learning_rate(config, epoch).
/// Returns the mean loss; a non-finite loss throws NumericError naming the sentence.
double train_epoch(TaggerModel& model, std::span<const Example> data, int epoch, std::mt19937_64& rng);

/// Runs config.epochs epochs from epoch 0; returns per-epoch mean losses.
std::vector<double> train(TaggerModel& model, std::span<const Example> data, std::mt19937_64& rng);

double sentence_log_prob(const TaggerModel& model, const std::vector<std::string>& tokens,
                         std::span<const int> tags);
std::vector<int> decode(const TaggerModel& model, const std::vector<std::string>& tokens);
std::vector<std::vector<std::string>> decode_corpus(const TaggerModel& model, const Corpus& corpus);

nlohmann::json to_json(const TaggerModel& model);
TaggerModel model_from_json(const nlohmann::json& j, std::shared_ptr<const EmbeddingTable> embeddings);

}  // namespace embner::tagger
