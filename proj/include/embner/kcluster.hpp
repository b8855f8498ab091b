#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "embner/data.hpp"

namespace embner::kcluster {

struct ClusterAssignment {
  std::vector<Vector> centroids;
  /// Cluster index per input point, in input order.
  std::vector<int> assignment;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;

  std::vector<std::size_t> cluster_sizes() const;
};

/// Lloyd's algorithm with k-means++ seeding. Points are visited in a canonical
/// (lexicographic) order internally, so the result does not depend on the
/// order of `points`. An emptied cluster is reseeded at the point farthest from
/// its own centroid.
ClusterAssignment kmeans(std::span<const Vector> points, int k, std::uint64_t seed, int max_iters = 100);

struct SeedTags {
  std::unordered_map<std::string, int> tag;
  std::set<std::string> coarse_dictionary;

  /// Tag of a token; tokens never seen while clustering are non-entities.
  int operator()(const std::string& token) const;
};

/// Tags the smaller of two clusters as entities (1). Equal sizes tag cluster 1.
SeedTags assign_seed_tags(const ClusterAssignment& assignment, std::span<const std::string> vocabulary);

/// Unique corpus tokens in first-occurrence order.
std::vector<std::string> corpus_vocabulary(const Corpus& corpus);

/// Clusters every unique corpus token (looked up with OOV fallback) into two
/// groups and derives the seed tags.
SeedTags cluster_corpus(const Corpus& corpus, const EmbeddingTable& embeddings, std::uint64_t seed,
                        int max_iters = 100);

void write_tags(const SeedTags& tags, std::span<const std::string> vocabulary,
                const std::filesystem::path& path);
SeedTags read_tags(const std::filesystem::path& path);

}  // namespace embner::kcluster
