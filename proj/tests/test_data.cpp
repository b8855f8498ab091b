#include <doctest.h>

#include <random>

#include "embner/data.hpp"
#include "embner/error.hpp"
#include "embner/iob.hpp"
#include "oracles.hpp"

using namespace embner;

TEST_CASE("load_embeddings parses plain and header files identically") {
  oracle::TempDir dir;
  auto plain = load_embeddings(dir.write("plain.txt", "a 1.0 2.0\nb 0.0 -1.0\n"));
  auto header = load_embeddings(dir.write("header.txt", "2 2\na 1.0 2.0\nb 0.0 -1.0\n"));
  for (const auto* t : {&plain, &header}) {
    CHECK(t->dim() == 2);
    CHECK(t->size() == 2);
    CHECK(t->lookup("a") == Vector{{1.0, 2.0}});
    CHECK(t->lookup("b") == Vector{{0.0, -1.0}});
  }
}

TEST_CASE("load_embeddings reports the offending line") {
  oracle::TempDir dir;
  try {
    load_embeddings(dir.write("bad.txt", "a 1.0\nb 1.0 2.0\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  try {
    load_embeddings(dir.write("nan.txt", "a 1.0 2.0\nb 1.0 x\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_embeddings(dir.write("count.txt", "3 2\na 1 2\nb 1 2\n")), ParseError);
  CHECK_THROWS_AS(load_embeddings(dir.write("utf8.txt", "a 1 2\n\xff\xfe 1 2\n")), ParseError);
}

TEST_CASE("embedding lookup normalization chain and fallback") {
  EmbeddingTable t(2, {"paris", "0000", "Bonn"}, {Vector{{1, 0}}, Vector{{0, 1}}, Vector{{2, 2}}});
  CHECK(t.lookup("Paris") == Vector{{1, 0}});
  CHECK(t.lookup("PARIS") == Vector{{1, 0}});
  CHECK(t.lookup("1999") == Vector{{0, 1}});
  CHECK(t.lookup("Bonn") == Vector{{2, 2}});
  CHECK(!t.resolve("bonn").has_value());
  CHECK(t.lookup("unknown") == Vector{{1, 1}});

  EmbeddingTable exact(2, {"paris"}, {Vector{{1, 0}}}, false);
  CHECK(!exact.resolve("Paris").has_value());
}

TEST_CASE("load_conll parses sentences, labels and drops DOCSTART") {
  oracle::TempDir dir;
  auto path = dir.write("c.conll", "-DOCSTART- O\n\nEU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n");
  auto c = load_conll(path, 0, 1);
  REQUIRE(c.size() == 2);
  CHECK(c.sentences[0].tokens == std::vector<std::string>{"EU", "rejects"});
  CHECK(c.sentences[0].labels == std::vector<std::string>{"B-ORG", "O"});

  auto unlabeled = load_conll(path, 0, std::nullopt);
  CHECK(unlabeled.size() == 2);
  CHECK(!unlabeled.has_labels());

  auto conll03 = load_conll(dir.write("c3.conll", "EU NNP B-NP I-ORG\nrejects VBZ B-VP O\n"), 0, 3);
  CHECK(conll03.sentences[0].labels == std::vector<std::string>{"B-ORG", "O"});
}

TEST_CASE("load_conll rejects ragged rows with a line number") {
  oracle::TempDir dir;
  try {
    load_conll(dir.write("r.conll", "EU B-ORG\nrejects\n"), 0, 1);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("write_conll round trip, empty corpus and shape errors") {
  oracle::TempDir dir;
  Corpus c;
  c.sentences.push_back({{"Peter", "Blackburn", "spoke"}, {"B-PER", "I-PER", "O"}});
  auto path = dir.file("out.conll");
  write_conll(c, path);
  auto back = load_conll(path, 0, 1);
  REQUIRE(back.size() == 1);
  CHECK(back.sentences[0].tokens == c.sentences[0].tokens);
  CHECK(back.sentences[0].labels == c.sentences[0].labels);

  auto empty = dir.file("empty.conll");
  write_conll(Corpus{}, std::vector<std::vector<std::string>>{}, empty);
  CHECK(std::filesystem::file_size(empty) == 0);

  auto untouched = dir.write("keep.conll", "x O\n");
  CHECK_THROWS_AS(write_conll(c, {{"O", "O"}}, untouched), ValidationError);
  CHECK(std::filesystem::file_size(untouched) == 4);
}

TEST_CASE("round trip property over random corpora") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> types = {"PER", "LOC", "ORG"};
  oracle::TempDir dir;
  for (int trial = 0; trial < 20; ++trial) {
    Corpus c;
    int n = 1 + static_cast<int>(rng() % 5);
    for (int s = 0; s < n; ++s) {
      int len = 1 + static_cast<int>(rng() % 8);
      std::vector<Chunk> ch;
      for (int i = 0; i < len;) {
        if (rng() % 3 == 0) {
          int end = std::min(len - 1, i + static_cast<int>(rng() % 3));
          ch.push_back({i, end, types[rng() % 3]});
          i = end + 1;
        } else {
          ++i;
        }
      }
      Sentence sent;
      for (int i = 0; i < len; ++i) sent.tokens.push_back("w" + std::to_string(rng() % 50));
      sent.labels = labels_from_chunks(ch, len);
      c.sentences.push_back(sent);
    }
    auto path = dir.file("rt.conll");
    write_conll(c, path);
    auto back = load_conll(path, 0, 1);
    REQUIRE(back.size() == c.size());
    for (std::size_t s = 0; s < c.size(); ++s) {
      CHECK(back.sentences[s].tokens == c.sentences[s].tokens);
      CHECK(back.sentences[s].labels == c.sentences[s].labels);
    }
  }
}

TEST_CASE("collect_stats counts within sentences only") {
  Corpus c;
  c.sentences.push_back({{"a", "b", "a"}, {}});
  auto s = collect_stats(c);
  CHECK(s.total_tokens == 3);
  CHECK(s.unigram("a") == 2);
  CHECK(s.unigram("b") == 1);
  CHECK(s.bigram("a", "b") == 1);
  CHECK(s.bigram("b", "a") == 1);
  CHECK(s.bigram_counts.size() == 2);

  Corpus two;
  two.sentences.push_back({{"a"}, {}});
  two.sentences.push_back({{"b"}, {}});
  CHECK(collect_stats(two).bigram_counts.empty());
}

TEST_CASE("collect_stats invariants on random corpora") {
  std::mt19937_64 rng(11);
  Corpus c;
  int remaining = 1000;
  while (remaining > 0) {
    int len = std::min(remaining, 1 + static_cast<int>(rng() % 20));
    Sentence s;
    for (int i = 0; i < len; ++i) s.tokens.push_back("t" + std::to_string(rng() % 40));
    c.sentences.push_back(s);
    remaining -= len;
  }
  auto stats = collect_stats(c);
  CHECK(stats.total_tokens == 1000);
  std::int64_t total = 0;
  for (const auto& [w, n] : stats.unigram_counts) total += n;
  CHECK(total == stats.total_tokens);
  for (const auto& [pair, n] : stats.bigram_counts)
    CHECK(n <= std::min(stats.unigram(pair.first), stats.unigram(pair.second)));

  Corpus shuffled = c;
  std::shuffle(shuffled.sentences.begin(), shuffled.sentences.end(), rng);
  auto s2 = collect_stats(shuffled);
  CHECK(s2.unigram_counts == stats.unigram_counts);
  CHECK(s2.bigram_counts == stats.bigram_counts);
}

TEST_CASE("IOB helpers") {
  CHECK(is_valid_iob({"B-PER", "I-PER", "O", "B-LOC"}));
  CHECK(!is_valid_iob({"O", "I-PER"}));
  CHECK(!is_valid_iob({"B-PER", "I-LOC"}));
  CHECK(to_iob2({"I-PER", "I-PER", "O", "I-LOC", "B-LOC"}) ==
        std::vector<std::string>{"B-PER", "I-PER", "O", "B-LOC", "B-LOC"});
  auto ch = chunks({"B-PER", "I-PER", "O", "I-LOC"});
  REQUIRE(ch.size() == 2);
  CHECK(ch[0] == Chunk{0, 1, "PER"});
  CHECK(ch[1] == Chunk{3, 3, "LOC"});
}
