#pragma once

// Small labelled corpus with a learnable pattern, shared by the tagger and
// selector tests.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "embner/data.hpp"
#include "oracles.hpp"

namespace testdata {

using embner::Corpus;
using embner::EmbeddingTable;
using embner::Sentence;
using embner::Vector;

// Words of three classes around well separated centres; entities of one or
// two words are always followed by an O word.
struct PatternData {
  std::shared_ptr<EmbeddingTable> embeddings;
  Corpus train, test;
};

inline PatternData pattern_data(std::uint64_t seed, int train_size = 200, int test_size = 100) {
  std::mt19937_64 rng(seed);
  const int dim = 8;
  std::vector<std::string> o_words, per_words, loc_words, all;
  for (int i = 0; i < 20; ++i) o_words.push_back("w" + std::to_string(i));
  for (int i = 0; i < 10; ++i) per_words.push_back("Pe" + std::to_string(i));
  for (int i = 0; i < 10; ++i) loc_words.push_back("Lo" + std::to_string(i));
  std::vector<Vector> vecs;
  Vector centre[3] = {Vector::Zero(dim), Vector::Zero(dim), Vector::Zero(dim)};
  centre[1][0] = 4.0;
  centre[2][1] = 4.0;
  auto add = [&](const std::vector<std::string>& words, int cls) {
    for (const auto& w : words) {
      all.push_back(w);
      vecs.push_back(centre[cls] + oracle::random_vector(dim, rng, 0.5));
    }
  };
  add(o_words, 0);
  add(per_words, 1);
  add(loc_words, 2);
  PatternData d;
  d.embeddings = std::make_shared<EmbeddingTable>(static_cast<std::size_t>(dim), all, vecs);

  std::uniform_int_distribution<int> len(4, 9), oi(0, 19), ei(0, 9), coin(0, 2);
  auto sentence = [&]() {
    Sentence s;
    while (static_cast<int>(s.tokens.size()) < len(rng)) {
      int c = coin(rng);
      if (c == 0 || s.tokens.empty() || s.labels.back() != "O") {
        s.tokens.push_back(o_words[static_cast<std::size_t>(oi(rng))]);
        s.labels.push_back("O");
        continue;
      }
      const auto& pool = c == 1 ? per_words : loc_words;
      const std::string type = c == 1 ? "PER" : "LOC";
      const int width = 1 + coin(rng) % 2;
      for (int k = 0; k < width; ++k) {
        s.tokens.push_back(pool[static_cast<std::size_t>(ei(rng))]);
        s.labels.push_back((k == 0 ? "B-" : "I-") + type);
      }
    }
    return s;
  };
  for (int i = 0; i < train_size; ++i) d.train.sentences.push_back(sentence());
  for (int i = 0; i < test_size; ++i) d.test.sentences.push_back(sentence());
  return d;
}

}  // namespace testdata
