#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"

/// Known-truth corpus generator. Sentences come from an IOB Markov chain over
/// typed entities; every word has a fixed Gaussian vector around the centre of
/// its class (O, head word of type k, tail word of type k).
namespace embner::synthetic {

struct SyntheticConfig {
  int sentences = 500;
  int types = 3;
  int dim = 8;  // at least types + 2
  /// Offset between class centres along each class axis, in units of sigma.
  double separation = 6.0;
  double sigma = 1.0;
  int o_vocab = 300;
  int head_vocab = 15;  // per type
  int tail_vocab = 15;  // per type
  int min_length = 6;
  int max_length = 14;
  double entity_rate = 0.15;    // P(entity starts | previous token O or sentence start)
  double continue_rate = 0.5;   // P(entity continues | inside, below max_entity_length)
  int max_entity_length = 3;
  double adjacent_rate = 0.15;  // P(another entity starts right after one ends)
  /// Share of sentences whose labels are damaged in the noisy copy.
  double corrupt_fraction = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

struct SyntheticData {
  SyntheticConfig config;
  Corpus corpus;  // gold labels with types "T0" .. "T{K-1}"
  EmbeddingTable embeddings;
  std::vector<std::string> word_class;  // per embedding row: "O", "H<k>" or "T<k>"
  std::vector<Vector> centres;          // O, then H0, T0, H1, T1, ...
  /// Gold labels with corrupt_fraction of the sentences damaged.
  std::vector<std::vector<std::string>> noisy_labels;
  std::vector<bool> corrupted;
};

SyntheticData generate(const SyntheticConfig& config);

/// Replaces every entity type at random, drops or shifts some spans and marks
/// a few O tokens as entities; the result is valid IOB and differs from `gold`
/// whenever the sentence has at least two tokens.
std::vector<std::string> corrupt_labels(const std::vector<std::string>& gold, int types, std::mt19937_64& rng);

/// Generating parameters and per-word classes.
nlohmann::json truth_json(const SyntheticData& data);

/// Writes corpus.conll, embeddings.txt, truth.json and, when any sentence is
/// corrupted, noisy.conll.
void write(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace embner::synthetic
