#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace embner {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Token -> dense vector table loaded from a text embedding file.
///
/// Lookups never fail: a token is tried verbatim, lowercased, digit-folded
/// (every ASCII digit replaced by '0'), lowercased and digit-folded, and
/// finally resolves to the component-wise mean of all stored vectors.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::vector<std::string> tokens, std::vector<Vector> vectors,
                 bool lowercase_fallback = true);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  bool lowercase_fallback() const { return lowercase_fallback_; }

  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  /// Index of the stored entry the token resolves to, or nullopt for the fallback.
  std::optional<std::size_t> resolve(std::string_view token) const;
  const Vector& lookup(std::string_view token) const;
  const Vector& fallback() const { return fallback_; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const Vector& vector(std::size_t i) const { return vectors_[i]; }

 private:
  std::size_t dim_ = 0;
  bool lowercase_fallback_ = true;
  std::vector<std::string> tokens_;
  std::vector<Vector> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
  Vector fallback_;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path, bool lowercase_fallback = true);
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

std::string ascii_lower(std::string_view s);
std::string fold_digits(std::string_view s);
bool is_valid_utf8(std::string_view s);

struct Sentence {
  std::vector<std::string> tokens;
  /// Empty when the corpus carries no labels; otherwise one label per token.
  std::vector<std::string> labels;

  std::size_t size() const { return tokens.size(); }
};

struct Corpus {
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  std::size_t token_count() const;
  bool has_labels() const;
};

/// Reads CoNLL column text. `label_column` < 0 selects the last column of each
/// row. Labels are normalized to IOB2 so that every I-X continues a chunk.
Corpus load_conll(const std::filesystem::path& path, int token_column,
                  std::optional<int> label_column);

/// Writes "token label" rows, one blank line after each sentence. Shapes are
/// checked before the file is opened.
void write_conll(const Corpus& corpus, const std::vector<std::vector<std::string>>& predicted,
                 const std::filesystem::path& path);

/// Writes the corpus with its own labels.
void write_conll(const Corpus& corpus, const std::filesystem::path& path);

struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const noexcept {
    std::size_t h = std::hash<std::string>{}(p.first);
    return h ^ (std::hash<std::string>{}(p.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  }
};

struct PhraseStats {
  std::unordered_map<std::string, std::int64_t> unigram_counts;
  std::unordered_map<std::pair<std::string, std::string>, std::int64_t, PairHash> bigram_counts;
  std::int64_t total_tokens = 0;

  std::int64_t unigram(const std::string& w) const;
  std::int64_t bigram(const std::string& a, const std::string& b) const;
};

/// Unigram and adjacent-pair counts. Pairs never cross sentence boundaries.
PhraseStats collect_stats(const Corpus& corpus);

}  // namespace embner
