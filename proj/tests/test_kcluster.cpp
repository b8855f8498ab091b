#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "embner/error.hpp"
#include "embner/kcluster.hpp"
#include "oracles.hpp"

using namespace embner;
using namespace embner::kcluster;

namespace {

std::vector<Vector> two_blobs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<Vector> pts;
  for (int i = 0; i < 50; ++i) pts.push_back(Vector{{n(rng), n(rng)}});
  for (int i = 0; i < 50; ++i) pts.push_back(Vector{{10 + n(rng), 10 + n(rng)}});
  return pts;
}

}  // namespace

TEST_CASE("k=1 yields the mean") {
  std::vector<Vector> pts = {Vector{{1, 2}}, Vector{{3, 4}}, Vector{{5, 0}}};
  auto r = kmeans(pts, 1, 3);
  CHECK(r.centroids[0].isApprox(Vector{{3, 2}}));
}

TEST_CASE("two blobs are separated exactly") {
  auto pts = two_blobs(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = kmeans(pts, 2, seed);
    for (int i = 1; i < 50; ++i) CHECK(r.assignment[i] == r.assignment[0]);
    for (int i = 51; i < 100; ++i) CHECK(r.assignment[i] == r.assignment[50]);
    CHECK(r.assignment[0] != r.assignment[50]);
    CHECK(r.converged);
  }
}

TEST_CASE("identical points terminate with an empty cluster") {
  std::vector<Vector> pts(10, Vector{{1.0, 1.0}});
  auto r = kmeans(pts, 2, 1, 50);
  CHECK(r.iterations < 50);
  auto sizes = r.cluster_sizes();
  CHECK(std::min(sizes[0], sizes[1]) == 0);
}

TEST_CASE("input errors") {
  CHECK_THROWS_AS(kmeans(std::vector<Vector>{}, 2, 0), ValidationError);
  CHECK_THROWS_AS(kmeans(std::vector<Vector>{Vector{{1.0}}}, 2, 0), ValidationError);
}

TEST_CASE("objective is nonincreasing and each point sits at its nearest centroid") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vector> pts;
    for (int i = 0; i < 200; ++i) pts.push_back(oracle::random_vector(3, rng));
    auto r = kmeans(pts, 4, static_cast<std::uint64_t>(trial), 200);
    for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
    REQUIRE(r.converged);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double own = (pts[i] - r.centroids[static_cast<std::size_t>(r.assignment[i])]).squaredNorm();
      for (const auto& c : r.centroids) CHECK(own <= (pts[i] - c).squaredNorm() + 1e-12);
    }
  }
}

TEST_CASE("result does not depend on input order") {
  std::mt19937_64 rng(21);
  std::vector<Vector> pts;
  for (int i = 0; i < 120; ++i) pts.push_back(oracle::random_vector(2, rng));
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Vector> shuffled;
  for (auto p : perm) shuffled.push_back(pts[p]);
  auto a = kmeans(pts, 3, 4);
  auto b = kmeans(shuffled, 3, 4);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(b.assignment[i] == a.assignment[perm[i]]);
}

TEST_CASE("seed tags: minority cluster is the entity cluster") {
  ClusterAssignment a;
  a.centroids = {Vector{{0.0}}, Vector{{1.0}}};
  std::vector<std::string> vocab;
  for (int i = 0; i < 100; ++i) {
    vocab.push_back("w" + std::to_string(i));
    a.assignment.push_back(i < 90 ? 1 : 0);
  }
  auto tags = assign_seed_tags(a, vocab);
  CHECK(tags.coarse_dictionary.size() == 10);
  for (int i = 0; i < 100; ++i) CHECK(tags(vocab[static_cast<std::size_t>(i)]) == (i >= 90 ? 1 : 0));

  std::set<std::string> ones;
  for (const auto& [t, v] : tags.tag)
    if (v == 1) ones.insert(t);
  CHECK(ones == tags.coarse_dictionary);
  CHECK(tags.tag.size() == vocab.size());
}

TEST_CASE("seed tags: equal sizes tag cluster 1") {
  ClusterAssignment a;
  a.centroids = {Vector{{0.0}}, Vector{{1.0}}};
  a.assignment = {0, 1, 0, 1};
  std::vector<std::string> vocab = {"a", "b", "c", "d"};
  auto tags = assign_seed_tags(a, vocab);
  CHECK(tags.coarse_dictionary == std::set<std::string>{"b", "d"});
}

TEST_CASE("tag file round trip") {
  oracle::TempDir dir;
  SeedTags t;
  t.tag = {{"Paris", 1}, {"the", 0}};
  t.coarse_dictionary = {"Paris"};
  std::vector<std::string> vocab = {"the", "Paris"};
  write_tags(t, vocab, dir.file("tags.tsv"));
  auto back = read_tags(dir.file("tags.tsv"));
  CHECK(back.tag == t.tag);
  CHECK(back.coarse_dictionary == t.coarse_dictionary);
}
