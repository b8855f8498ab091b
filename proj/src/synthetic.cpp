#include "embner/synthetic.hpp"

#include <algorithm>
#include <numeric>

#include "embner/error.hpp"
#include "embner/iob.hpp"
#include "embner/json_io.hpp"

namespace embner::synthetic {

namespace {

std::string type_name(int k) { return "T" + std::to_string(k); }

}  // namespace

void SyntheticConfig::validate() const {
  if (sentences < 0) throw ValidationError("synthetic: sentences must be >= 0");
  if (types < 1) throw ValidationError("synthetic: need at least one type");
  if (dim < types + 2) throw ValidationError("synthetic: dim must be at least types + 2");
  if (!(separation >= 0.0) || !(sigma > 0.0)) throw ValidationError("synthetic: separation >= 0 and sigma > 0 required");
  if (o_vocab < 1 || head_vocab < 1 || tail_vocab < 1) throw ValidationError("synthetic: vocabularies must be nonempty");
  if (min_length < 1 || max_length < min_length) throw ValidationError("synthetic: need 1 <= min_length <= max_length");
  if (max_entity_length < 1) throw ValidationError("synthetic: max_entity_length must be >= 1");
  for (double p : {entity_rate, continue_rate, adjacent_rate, corrupt_fraction})
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("synthetic: rates must lie in [0, 1]");
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"sentences", c.sentences},
          {"types", c.types},
          {"dim", c.dim},
          {"separation", c.separation},
          {"sigma", c.sigma},
          {"o_vocab", c.o_vocab},
          {"head_vocab", c.head_vocab},
          {"tail_vocab", c.tail_vocab},
          {"min_length", c.min_length},
          {"max_length", c.max_length},
          {"entity_rate", c.entity_rate},
          {"continue_rate", c.continue_rate},
          {"max_entity_length", c.max_entity_length},
          {"adjacent_rate", c.adjacent_rate},
          {"corrupt_fraction", c.corrupt_fraction},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.sentences = j.value("sentences", c.sentences);
  c.types = j.value("types", c.types);
  c.dim = j.value("dim", c.dim);
  c.separation = j.value("separation", c.separation);
  c.sigma = j.value("sigma", c.sigma);
  c.o_vocab = j.value("o_vocab", c.o_vocab);
  c.head_vocab = j.value("head_vocab", c.head_vocab);
  c.tail_vocab = j.value("tail_vocab", c.tail_vocab);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  c.entity_rate = j.value("entity_rate", c.entity_rate);
  c.continue_rate = j.value("continue_rate", c.continue_rate);
  c.max_entity_length = j.value("max_entity_length", c.max_entity_length);
  c.adjacent_rate = j.value("adjacent_rate", c.adjacent_rate);
  c.corrupt_fraction = j.value("corrupt_fraction", c.corrupt_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<std::string> corrupt_labels(const std::vector<std::string>& gold, int types, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, types - 1);
  const int l = static_cast<int>(gold.size());
  std::vector<std::string> out(gold.size(), "O");
  for (const auto& c : chunks(gold)) {
    if (u(rng) < 0.3) continue;  // dropped
    std::string type = c.type;
    if (types > 1) {
      while (type == c.type) type = type_name(pick(rng));
    }
    int end = c.end;
    if (u(rng) < 0.3) {
      if (end + 1 < l && gold[static_cast<std::size_t>(end + 1)] == "O")
        ++end;
      else if (end > c.start)
        --end;
    }
    out[static_cast<std::size_t>(c.start)] = "B-" + type;
    for (int i = c.start + 1; i <= end; ++i) out[static_cast<std::size_t>(i)] = "I-" + type;
  }
  for (int i = 0; i < l; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (out[idx] != "O" || gold[idx] != "O") continue;
    const bool next_inside = i + 1 < l && out[idx + 1].front() == 'I';
    if (!next_inside && u(rng) < 0.2) out[idx] = "B-" + type_name(pick(rng));
  }
  if (out == gold && l >= 2) {
    // Nothing changed: a sentence without entities gains one, otherwise the
    // first entity is removed.
    auto first = chunks(gold);
    if (first.empty()) {
      out[0] = "B-" + type_name(pick(rng));
    } else {
      for (int i = first[0].start; i <= first[0].end; ++i) out[static_cast<std::size_t>(i)] = "O";
    }
  }
  return out;
}

SyntheticData generate(const SyntheticConfig& config) {
  config.validate();
  SyntheticData d;
  d.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, config.sigma);
  const int K = config.types;
  const double offset = config.separation * config.sigma;

  // Axis 0 marks entities, axis 1 head words, axis 2 + k type k.
  d.centres.push_back(Vector::Zero(config.dim));
  for (int k = 0; k < K; ++k) {
    Vector tail = Vector::Zero(config.dim);
    tail[0] = offset;
    tail[2 + k] = offset;
    Vector head = tail;
    head[1] = offset;
    d.centres.push_back(head);
    d.centres.push_back(tail);
  }

  std::vector<int> cls;  // centre index per word
  for (int i = 0; i < config.o_vocab; ++i) cls.push_back(0);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < config.head_vocab; ++i) cls.push_back(1 + 2 * k);
    for (int i = 0; i < config.tail_vocab; ++i) cls.push_back(2 + 2 * k);
  }
  // Names carry no class information: word i is called w<name[i]>.
  std::vector<int> name(cls.size());
  std::iota(name.begin(), name.end(), 0);
  std::shuffle(name.begin(), name.end(), rng);

  std::vector<std::string> tokens;
  std::vector<Vector> vectors;
  std::vector<std::vector<int>> pool(d.centres.size());
  for (std::size_t i = 0; i < cls.size(); ++i) {
    tokens.push_back("w" + std::to_string(name[i]));
    Vector v = d.centres[static_cast<std::size_t>(cls[i])];
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += noise(rng);
    vectors.push_back(v);
    const int c = cls[i];
    d.word_class.push_back(c == 0 ? "O" : ((c - 1) % 2 == 0 ? "H" : "T") + std::to_string((c - 1) / 2));
    pool[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
  d.embeddings = EmbeddingTable(static_cast<std::size_t>(config.dim), tokens, vectors, false);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> length(config.min_length, config.max_length);
  std::uniform_int_distribution<int> type(0, K - 1);
  auto word = [&](int centre) {
    const auto& p = pool[static_cast<std::size_t>(centre)];
    return tokens[static_cast<std::size_t>(p[std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng)])];
  };
  for (int s = 0; s < config.sentences; ++s) {
    Sentence sent;
    const int l = length(rng);
    int current = -1;  // type of the open entity
    int inside = 0;    // its length so far
    for (int i = 0; i < l; ++i) {
      bool start = false;
      if (current < 0) {
        start = u(rng) < config.entity_rate;
      } else if (inside < config.max_entity_length && u(rng) < config.continue_rate) {
        sent.tokens.push_back(word(2 + 2 * current));
        sent.labels.push_back("I-" + type_name(current));
        ++inside;
        continue;
      } else {
        start = u(rng) < config.adjacent_rate;
      }
      if (start) {
        current = type(rng);
        inside = 1;
        sent.tokens.push_back(word(1 + 2 * current));
        sent.labels.push_back("B-" + type_name(current));
      } else {
        current = -1;
        sent.tokens.push_back(word(0));
        sent.labels.push_back("O");
      }
    }
    d.corpus.sentences.push_back(std::move(sent));
  }

  // Corruption uses its own stream so the clean corpus does not depend on it.
  std::mt19937_64 noise_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& s : d.corpus.sentences) {
    const bool hit = config.corrupt_fraction > 0.0 && u(noise_rng) < config.corrupt_fraction;
    d.corrupted.push_back(hit);
    d.noisy_labels.push_back(hit ? corrupt_labels(s.labels, K, noise_rng) : s.labels);
  }
  return d;
}

nlohmann::json truth_json(const SyntheticData& d) {
  nlohmann::json centres = nlohmann::json::array();
  for (const auto& c : d.centres) centres.push_back(vector_to_json(c));
  nlohmann::json classes = nlohmann::json::object();
  for (std::size_t i = 0; i < d.word_class.size(); ++i) classes[d.embeddings.tokens()[i]] = d.word_class[i];
  std::vector<std::size_t> corrupted;
  for (std::size_t i = 0; i < d.corrupted.size(); ++i)
    if (d.corrupted[i]) corrupted.push_back(i);
  std::vector<std::string> types;
  for (int k = 0; k < d.config.types; ++k) types.push_back(type_name(k));
  return {{"config", to_json(d.config)},
          {"types", types},
          {"centres", centres},
          {"centre_order", "O, then head and tail centre for each type"},
          {"word_class", classes},
          {"corrupted_sentences", corrupted}};
}

void write(const SyntheticData& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_conll(d.corpus, dir / "corpus.conll");
  write_embeddings(d.embeddings, dir / "embeddings.txt");
  write_json(truth_json(d), dir / "truth.json");
  if (std::find(d.corrupted.begin(), d.corrupted.end(), true) != d.corrupted.end())
    write_conll(d.corpus, d.noisy_labels, dir / "noisy.conll");
}

}  // namespace embner::synthetic
