#include "embner/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "embner/error.hpp"
#include "embner/iob.hpp"

namespace embner {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_count(std::string_view s, std::size_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::string fold_digits(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= '0' && c <= '9') c = '0';
  return out;
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    int extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      return false;
    i += extra + 1;
  }
  return true;
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<std::string> tokens,
                               std::vector<Vector> vectors, bool lowercase_fallback)
    : dim_(dim),
      lowercase_fallback_(lowercase_fallback),
      tokens_(std::move(tokens)),
      vectors_(std::move(vectors)) {
  if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
  if (tokens_.size() != vectors_.size()) throw ValidationError("token/vector count mismatch");
  fallback_ = Vector::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (vectors_[i].size() != static_cast<Eigen::Index>(dim_))
      throw ValidationError("vector for '" + tokens_[i] + "' has wrong dimension");
    if (!vectors_[i].allFinite())
      throw ValidationError("vector for '" + tokens_[i] + "' has non-finite components");
    // First occurrence wins for duplicated tokens.
    index_.emplace(tokens_[i], i);
    fallback_ += vectors_[i];
  }
  if (!tokens_.empty()) fallback_ /= static_cast<double>(tokens_.size());
}

std::optional<std::size_t> EmbeddingTable::resolve(std::string_view token) const {
  auto find = [&](const std::string& key) -> std::optional<std::size_t> {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  };
  std::string exact(token);
  if (auto hit = find(exact)) return hit;
  std::string lower = ascii_lower(token);
  if (lowercase_fallback_)
    if (auto hit = find(lower)) return hit;
  if (auto hit = find(fold_digits(exact))) return hit;
  if (lowercase_fallback_)
    if (auto hit = find(fold_digits(lower))) return hit;
  return std::nullopt;
}

const Vector& EmbeddingTable::lookup(std::string_view token) const {
  auto hit = resolve(token);
  return hit ? vectors_[*hit] : fallback_;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, bool lowercase_fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open embedding file");

  std::vector<std::string> tokens;
  std::vector<Vector> vectors;
  std::size_t dim = 0;
  std::optional<std::size_t> header_count;
  std::size_t first_vector_line = 0;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!is_valid_utf8(line)) throw ParseError(path.string(), lineno, "malformed UTF-8");
    auto fields = split_ws(line);
    if (fields.empty()) continue;

    if (tokens.empty() && !header_count && fields.size() == 2) {
      std::size_t count = 0, hdim = 0;
      if (parse_count(fields[0], count) && parse_count(fields[1], hdim)) {
        if (hdim == 0) throw ParseError(path.string(), lineno, "header declares dimension 0");
        header_count = count;
        dim = hdim;
        continue;
      }
    }
    if (fields.size() < 2) throw ParseError(path.string(), lineno, "expected token followed by components");
    std::size_t line_dim = fields.size() - 1;
    if (dim == 0) {
      dim = line_dim;
      first_vector_line = lineno;
    } else if (line_dim != dim) {
      throw ParseError(path.string(), lineno,
                       "dimension mismatch: expected " + std::to_string(dim) + " components, found " +
                           std::to_string(line_dim) +
                           (first_vector_line ? " (first vector on line " + std::to_string(first_vector_line) + ")" : ""));
    }
    Vector v(static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < dim; ++k) {
      double x;
      if (!parse_double(fields[k + 1], x))
        throw ParseError(path.string(), lineno, "non-numeric component '" + std::string(fields[k + 1]) + "'");
      if (!std::isfinite(x)) throw ParseError(path.string(), lineno, "non-finite component");
      v[static_cast<Eigen::Index>(k)] = x;
    }
    tokens.emplace_back(fields[0]);
    vectors.push_back(std::move(v));
  }
  if (tokens.empty()) throw ParseError(path.string(), lineno, "no embedding vectors found");
  if (header_count && *header_count != tokens.size())
    throw ParseError(path.string(), 1,
                     "header declares " + std::to_string(*header_count) + " vectors, file has " +
                         std::to_string(tokens.size()));
  return EmbeddingTable(dim, std::move(tokens), std::move(vectors), lowercase_fallback);
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.tokens()[i];
    for (double x : table.vector(i)) out << ' ' << x;
    out << '\n';
  }
}

std::size_t Corpus::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

bool Corpus::has_labels() const {
  for (const auto& s : sentences)
    if (!s.labels.empty()) return true;
  return false;
}

Corpus load_conll(const std::filesystem::path& path, int token_column, std::optional<int> label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open corpus file");

  Corpus corpus;
  Sentence current;
  std::size_t sentence_start = 0;
  bool docstart = false;

  auto flush = [&](std::size_t lineno) {
    if (!current.tokens.empty() && !docstart) {
      if (label_column) {
        try {
          current.labels = to_iob2(current.labels);
        } catch (const ValidationError& e) {
          throw ParseError(path.string(), sentence_start, e.what());
        }
      }
      corpus.sentences.push_back(std::move(current));
    }
    (void)lineno;
    current = Sentence{};
    docstart = false;
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(line);
    if (fields.empty()) {
      flush(lineno);
      continue;
    }
    if (current.tokens.empty()) sentence_start = lineno;
    auto need = [&](int col) -> std::string_view {
      int idx = col < 0 ? static_cast<int>(fields.size()) - 1 : col;
      if (idx < 0 || idx >= static_cast<int>(fields.size()))
        throw ParseError(path.string(), lineno,
                         "row has " + std::to_string(fields.size()) + " columns, column " +
                             std::to_string(col) + " requested");
      return fields[static_cast<std::size_t>(idx)];
    };
    std::string_view token = need(token_column);
    if (token == "-DOCSTART-") {
      docstart = true;
      continue;
    }
    if (docstart) continue;
    current.tokens.emplace_back(token);
    if (label_column) current.labels.emplace_back(need(*label_column));
  }
  flush(lineno);
  return corpus;
}

void write_conll(const Corpus& corpus, const std::vector<std::vector<std::string>>& predicted,
                 const std::filesystem::path& path) {
  if (predicted.size() != corpus.size())
    throw ValidationError("prediction has " + std::to_string(predicted.size()) + " sentences, corpus has " +
                          std::to_string(corpus.size()));
  for (std::size_t s = 0; s < corpus.size(); ++s)
    if (predicted[s].size() != corpus.sentences[s].size())
      throw ValidationError("sentence " + std::to_string(s) + ": " + std::to_string(predicted[s].size()) +
                            " labels for " + std::to_string(corpus.sentences[s].size()) + " tokens");

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const auto& tokens = corpus.sentences[s].tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) out << tokens[i] << ' ' << predicted[s][i] << '\n';
    out << '\n';
  }
}

void write_conll(const Corpus& corpus, const std::filesystem::path& path) {
  if (!corpus.has_labels()) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    for (const auto& s : corpus.sentences) {
      for (const auto& t : s.tokens) out << t << '\n';
      out << '\n';
    }
    return;
  }
  std::vector<std::vector<std::string>> labels;
  labels.reserve(corpus.size());
  for (const auto& s : corpus.sentences) labels.push_back(s.labels);
  write_conll(corpus, labels, path);
}

std::int64_t PhraseStats::unigram(const std::string& w) const {
  auto it = unigram_counts.find(w);
  return it == unigram_counts.end() ? 0 : it->second;
}

std::int64_t PhraseStats::bigram(const std::string& a, const std::string& b) const {
  auto it = bigram_counts.find({a, b});
  return it == bigram_counts.end() ? 0 : it->second;
}

PhraseStats collect_stats(const Corpus& corpus) {
  PhraseStats stats;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      ++stats.unigram_counts[s.tokens[i]];
      if (i + 1 < s.tokens.size()) ++stats.bigram_counts[{s.tokens[i], s.tokens[i + 1]}];
    }
    stats.total_tokens += static_cast<std::int64_t>(s.tokens.size());
  }
  return stats;
}

}  // namespace embner
