#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "embner/data.hpp"
#include "embner/iob.hpp"

namespace embner::spans {

/// Inclusive token range [start, end] in one sentence; `type` is -1 until a
/// component is assigned.
struct Span {
  int sentence = 0;
  int start = 0;
  int end = 0;
  int type = -1;

  int length() const { return end - start + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct TokenStat {
  int entity = 0;  // occurrences decoded as B or I
  int total = 0;
};

struct SpanSet {
  std::vector<Span> spans;  // sorted by (sentence, start), disjoint
  std::unordered_map<std::string, TokenStat> token_stats;
  int repairs = 0;          // stray I tags read as B

  std::size_t covered_tokens() const;
};

/// Maximal B I* runs. An I after O (or at sentence start) opens a new span
/// and is counted in `repairs`.
SpanSet extract_spans(const Corpus& corpus, const std::vector<std::vector<Iob>>& labels);

/// Drops one-token spans whose token is decoded as an entity in under half of
/// its occurrences and is absent from the coarse dictionary.
SpanSet filter_single_word(const SpanSet& spans, const Corpus& corpus, const std::set<std::string>& dictionary);

/// count(a,b) * n / (count(a) * count(b)); 0 when either unigram count is 0.
double phrase_score(const std::string& a, const std::string& b, const PhraseStats& stats);

struct PhraseFilterConfig {
  double threshold = 100.0;
};

/// Merges spans that touch (end + 1 == next start) when the boundary pair's
/// phrase score exceeds the threshold, repeated to a fixpoint.
SpanSet merge_phrases(const SpanSet& spans, const Corpus& corpus, const PhraseStats& stats,
                      const PhraseFilterConfig& config);

/// [x_start ; mean(x_start..x_end) ; x_end], length 3d.
Vector span_representation(const Span& span, const Corpus& corpus, const EmbeddingTable& embeddings);

/// Per-sentence IOB labels for a span set (typed as "C<k>" when typed).
std::vector<std::vector<std::string>> to_labels(const std::vector<Span>& spans, const Corpus& corpus,
                                                bool typed);

/// Spans from typed or untyped label sequences; typed labels must be "C<k>".
std::vector<Span> from_labels(const std::vector<std::vector<std::string>>& labels);

void write_spans(const std::vector<Span>& spans, const std::filesystem::path& path, bool typed = false);
std::vector<Span> read_spans(const std::filesystem::path& path);

}  // namespace embner::spans
