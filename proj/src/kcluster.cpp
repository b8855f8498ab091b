#include "embner/kcluster.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "embner/error.hpp"

namespace embner::kcluster {

namespace {

bool lex_less(const Vector& a, const Vector& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
  std::vector<std::size_t> sizes(centroids.size(), 0);
  for (int a : assignment) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

ClusterAssignment kmeans(std::span<const Vector> points, int k, std::uint64_t seed, int max_iters) {
  if (points.empty()) throw ValidationError("kmeans: empty input");
  if (k < 1) throw ValidationError("kmeans: k must be positive");
  if (static_cast<std::size_t>(k) > points.size())
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(points.size()) +
                          " points");
  const auto dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ValidationError("kmeans: inconsistent point dimensions");
    if (!p.allFinite()) throw ValidationError("kmeans: non-finite point");
  }

  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lex_less(points[a], points[b]); });
  auto at = [&](std::size_t r) -> const Vector& { return points[order[r]]; };

  // k-means++ seeding over the canonical order.
  std::mt19937_64 rng(seed);
  std::vector<Vector> centroids;
  centroids.push_back(at(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, (at(r) - c).squaredNorm());
      d2[r] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t r = 0; r < n; ++r) {
        acc += d2[r];
        if (u < acc) {
          pick = r;
          break;
        }
      }
    }
    centroids.push_back(at(pick));
  }

  ClusterAssignment out;
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment step; ties go to the lower cluster index.
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      int best = 0;
      double best_d = (at(r) - centroids[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (at(r) - centroids[static_cast<std::size_t>(c)]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[r] != best) changed = true;
      assign[r] = best;
      wcss += best_d;
    }
    out.objective.push_back(wcss);
    out.iterations = iter + 1;
    if (!changed && iter > 0) {
      out.converged = true;
      break;
    }

    // Update step.
    std::vector<Vector> sums(static_cast<std::size_t>(k), Vector::Zero(dim));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t r = 0; r < n; ++r) {
      sums[static_cast<std::size_t>(assign[r])] += at(r);
      ++counts[static_cast<std::size_t>(assign[r])];
    }
    for (int c = 0; c < k; ++c) {
      auto cu = static_cast<std::size_t>(c);
      if (counts[cu] > 0) {
        centroids[cu] = sums[cu] / static_cast<double>(counts[cu]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its current centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t r = 0; r < n; ++r) {
        double d = (at(r) - centroids[static_cast<std::size_t>(assign[r])]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = r;
        }
      }
      centroids[cu] = at(far);
    }
  }

  out.centroids = std::move(centroids);
  out.assignment.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) out.assignment[order[r]] = assign[r];
  return out;
}

int SeedTags::operator()(const std::string& token) const {
  auto it = tag.find(token);
  return it == tag.end() ? 0 : it->second;
}

SeedTags assign_seed_tags(const ClusterAssignment& assignment, std::span<const std::string> vocabulary) {
  if (assignment.centroids.size() != 2) throw ValidationError("seed tags need exactly two clusters");
  if (vocabulary.size() != assignment.assignment.size())
    throw ValidationError("vocabulary size does not match the clustered points");
  auto sizes = assignment.cluster_sizes();
  int entity_cluster = sizes[0] < sizes[1] ? 0 : 1;

  SeedTags tags;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    int t = assignment.assignment[i] == entity_cluster ? 1 : 0;
    tags.tag[vocabulary[i]] = t;
    if (t == 1) tags.coarse_dictionary.insert(vocabulary[i]);
  }
  return tags;
}

std::vector<std::string> corpus_vocabulary(const Corpus& corpus) {
  std::vector<std::string> vocab;
  std::unordered_set<std::string> seen;
  for (const auto& s : corpus.sentences)
    for (const auto& t : s.tokens)
      if (seen.insert(t).second) vocab.push_back(t);
  return vocab;
}

SeedTags cluster_corpus(const Corpus& corpus, const EmbeddingTable& embeddings, std::uint64_t seed,
                        int max_iters) {
  auto vocab = corpus_vocabulary(corpus);
  std::vector<Vector> points;
  points.reserve(vocab.size());
  for (const auto& t : vocab) points.push_back(embeddings.lookup(t));
  auto assignment = kmeans(points, 2, seed, max_iters);
  return assign_seed_tags(assignment, vocab);
}

void write_tags(const SeedTags& tags, std::span<const std::string> vocabulary,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const auto& t : vocabulary) out << t << '\t' << tags(t) << '\n';
}

SeedTags read_tags(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open tag file");
  SeedTags tags;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "expected token<TAB>tag");
    std::string token = line.substr(0, tab);
    std::string value = line.substr(tab + 1);
    if (!value.empty() && value.back() == '\r') value.pop_back();
    if (value != "0" && value != "1") throw ParseError(path.string(), lineno, "tag must be 0 or 1");
    int t = value == "1";
    tags.tag[token] = t;
    if (t) tags.coarse_dictionary.insert(token);
  }
  return tags;
}

}  // namespace embner::kcluster
