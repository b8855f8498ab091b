#include "embner/spans.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "embner/error.hpp"

namespace embner::spans {

std::size_t SpanSet::covered_tokens() const {
  std::size_t n = 0;
  for (const auto& s : spans) n += static_cast<std::size_t>(s.length());
  return n;
}

SpanSet extract_spans(const Corpus& corpus, const std::vector<std::vector<Iob>>& labels) {
  if (labels.size() != corpus.size()) throw ValidationError("extract_spans: label/corpus sentence count mismatch");
  SpanSet out;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const auto& seq = labels[s];
    const auto& tokens = corpus.sentences[s].tokens;
    if (seq.size() != tokens.size()) throw ValidationError("extract_spans: label/token length mismatch");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      auto& stat = out.token_stats[tokens[i]];
      ++stat.total;
      if (seq[i] == Iob::O) continue;
      ++stat.entity;
      int pos = static_cast<int>(i);
      bool opens = seq[i] == Iob::B || i == 0 || seq[i - 1] == Iob::O;
      if (seq[i] == Iob::I && opens) ++out.repairs;
      if (opens) out.spans.push_back({static_cast<int>(s), pos, pos, -1});
      else out.spans.back().end = pos;
    }
  }
  return out;
}

SpanSet filter_single_word(const SpanSet& in, const Corpus& corpus, const std::set<std::string>& dictionary) {
  SpanSet out;
  out.token_stats = in.token_stats;
  out.repairs = in.repairs;
  for (const auto& span : in.spans) {
    if (span.length() == 1) {
      const auto& token = corpus.sentences[static_cast<std::size_t>(span.sentence)].tokens[static_cast<std::size_t>(span.start)];
      auto it = in.token_stats.find(token);
      bool below_half = it != in.token_stats.end() && 2 * it->second.entity < it->second.total;
      if (below_half && !dictionary.contains(token)) continue;
    }
    out.spans.push_back(span);
  }
  return out;
}

double phrase_score(const std::string& a, const std::string& b, const PhraseStats& stats) {
  auto ca = stats.unigram(a);
  auto cb = stats.unigram(b);
  if (ca == 0 || cb == 0) return 0.0;
  return static_cast<double>(stats.bigram(a, b)) * static_cast<double>(stats.total_tokens) /
         (static_cast<double>(ca) * static_cast<double>(cb));
}

SpanSet merge_phrases(const SpanSet& in, const Corpus& corpus, const PhraseStats& stats,
                      const PhraseFilterConfig& config) {
  if (!(config.threshold > 0.0)) throw ValidationError("phrase threshold must be positive");
  SpanSet out = in;
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<Span> merged;
    merged.reserve(out.spans.size());
    for (const auto& span : out.spans) {
      if (!merged.empty()) {
        Span& last = merged.back();
        if (last.sentence == span.sentence && last.end + 1 == span.start) {
          const auto& tokens = corpus.sentences[static_cast<std::size_t>(span.sentence)].tokens;
          if (phrase_score(tokens[static_cast<std::size_t>(last.end)], tokens[static_cast<std::size_t>(span.start)],
                           stats) > config.threshold) {
            last.end = span.end;
            changed = true;
            continue;
          }
        }
      }
      merged.push_back(span);
    }
    out.spans = std::move(merged);
  }
  return out;
}

Vector span_representation(const Span& span, const Corpus& corpus, const EmbeddingTable& embeddings) {
  const auto& tokens = corpus.sentences.at(static_cast<std::size_t>(span.sentence)).tokens;
  if (span.start < 0 || span.end < span.start || span.end >= static_cast<int>(tokens.size()))
    throw ValidationError("span out of bounds");
  const auto d = static_cast<Eigen::Index>(embeddings.dim());
  Vector mean = Vector::Zero(d);
  for (int k = span.start; k <= span.end; ++k) mean += embeddings.lookup(tokens[static_cast<std::size_t>(k)]);
  mean /= static_cast<double>(span.length());
  Vector u(3 * d);
  u << embeddings.lookup(tokens[static_cast<std::size_t>(span.start)]), mean,
      embeddings.lookup(tokens[static_cast<std::size_t>(span.end)]);
  return u;
}

std::vector<std::vector<std::string>> to_labels(const std::vector<Span>& spans, const Corpus& corpus, bool typed) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.emplace_back(s.size(), "O");
  for (const auto& span : spans) {
    auto& row = out.at(static_cast<std::size_t>(span.sentence));
    std::string suffix = typed && span.type >= 0 ? "-C" + std::to_string(span.type) : "";
    row.at(static_cast<std::size_t>(span.start)) = "B" + suffix;
    for (int k = span.start + 1; k <= span.end; ++k) row.at(static_cast<std::size_t>(k)) = "I" + suffix;
  }
  return out;
}

std::vector<Span> from_labels(const std::vector<std::vector<std::string>>& labels) {
  std::vector<Span> out;
  for (std::size_t s = 0; s < labels.size(); ++s)
    for (const auto& c : chunks(labels[s])) {
      int type = -1;
      if (!c.type.empty()) {
        if (c.type.size() < 2 || c.type[0] != 'C') throw ValidationError("component label must look like C<k>: " + c.type);
        type = std::stoi(c.type.substr(1));
      }
      out.push_back({static_cast<int>(s), c.start, c.end, type});
    }
  return out;
}

void write_spans(const std::vector<Span>& spans, const std::filesystem::path& path, bool typed) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const auto& s : spans) {
    out << s.sentence << '\t' << s.start << '\t' << s.end;
    if (typed) out << "\tC" << s.type;
    out << '\n';
  }
}

std::vector<Span> read_spans(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open span file");
  std::vector<Span> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Span s;
    if (!(ss >> s.sentence >> s.start >> s.end) || s.start < 0 || s.end < s.start || s.sentence < 0)
      throw ParseError(path.string(), lineno, "expected sentence<TAB>start<TAB>end");
    std::string type;
    if (ss >> type) {
      if (type.size() < 2 || type[0] != 'C') throw ParseError(path.string(), lineno, "type column must be C<k>");
      s.type = std::stoi(type.substr(1));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace embner::spans
