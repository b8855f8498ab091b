#include <doctest.h>

#include <fstream>
#include <sstream>

#include "embner/error.hpp"
#include "embner/eval.hpp"
#include "embner/iob.hpp"
#include "embner/json_io.hpp"
#include "embner/pipeline.hpp"
#include "embner/synthetic.hpp"
#include "oracles.hpp"

using namespace embner;
using namespace embner::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

synthetic::SyntheticConfig small_synthetic(int sentences = 150) {
  synthetic::SyntheticConfig c;
  c.sentences = sentences;
  return c;
}

PipelineConfig config_for(const fs::path& data, const fs::path& out) {
  PipelineConfig c;
  c.embeddings = data / "embeddings.txt";
  c.corpus = data / "corpus.conll";
  c.output_dir = out;
  c.dagmm.k = 3;
  c.dagmm.epochs = 30;
  return c;
}

std::vector<std::string> log_stages(const fs::path& dir) {
  std::ifstream in(dir / "log.jsonl");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line).at("stage"));
  return out;
}

int stage_error_code(const PipelineConfig& c, std::string* stage = nullptr) {
  try {
    run_pipeline(c);
  } catch (const StageError& e) {
    if (stage) *stage = e.stage();
    return e.exit_code();
  }
  return 0;
}

}  // namespace

TEST_CASE("synthetic generator: determinism and known truth") {
  oracle::TempDir dir;
  auto cfg = small_synthetic();
  cfg.corrupt_fraction = 0.3;
  synthetic::write(synthetic::generate(cfg), dir.path() / "a");
  synthetic::write(synthetic::generate(cfg), dir.path() / "b");
  for (const char* f : {"corpus.conll", "embeddings.txt", "truth.json", "noisy.conll"})
    CHECK(slurp(dir.path() / "a" / f) == slurp(dir.path() / "b" / f));
  cfg.seed = 2;
  synthetic::write(synthetic::generate(cfg), dir.path() / "c");
  CHECK(slurp(dir.path() / "a" / "corpus.conll") != slurp(dir.path() / "c" / "corpus.conll"));

  auto d = synthetic::generate(cfg);
  CHECK(d.corpus.size() == 150);
  std::map<std::string, std::string> cls;
  for (std::size_t i = 0; i < d.word_class.size(); ++i) cls[d.embeddings.tokens()[i]] = d.word_class[i];
  int corrupted = 0;
  for (std::size_t i = 0; i < d.corpus.size(); ++i) {
    const auto& s = d.corpus.sentences[i];
    CHECK(is_valid_iob(s.labels));
    CHECK(is_valid_iob(d.noisy_labels[i]));
    CHECK(static_cast<int>(s.size()) >= cfg.min_length);
    CHECK(static_cast<int>(s.size()) <= cfg.max_length);
    // Every token's label agrees with the class its vector was drawn from.
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto& c = cls.at(s.tokens[t]);
      const auto lab = parse_typed(s.labels[t]);
      if (lab.prefix == Iob::O) CHECK(c == "O");
      if (lab.prefix == Iob::B) CHECK(c == "H" + lab.type.substr(1));
      if (lab.prefix == Iob::I) CHECK(c == "T" + lab.type.substr(1));
    }
    for (const auto& ch : chunks(s.labels)) CHECK(ch.end - ch.start + 1 <= cfg.max_entity_length);
    if (d.corrupted[i]) {
      ++corrupted;
      if (s.size() >= 2) CHECK(d.noisy_labels[i] != s.labels);
    } else {
      CHECK(d.noisy_labels[i] == s.labels);
    }
  }
  CHECK(corrupted > 25);
  CHECK(corrupted < 65);

  // Clean corpus does not depend on the corruption stream.
  auto clean_cfg = cfg;
  clean_cfg.corrupt_fraction = 0.0;
  auto clean = synthetic::generate(clean_cfg);
  for (std::size_t i = 0; i < d.corpus.size(); ++i) {
    CHECK(clean.corpus.sentences[i].tokens == d.corpus.sentences[i].tokens);
    CHECK(clean.corpus.sentences[i].labels == d.corpus.sentences[i].labels);
  }

  // Class centres sit `separation` sigmas apart along each class axis.
  CHECK(d.centres.size() == 7);
  CHECK(d.centres[1][0] == cfg.separation);
  CHECK(d.centres[1][1] == cfg.separation);
  CHECK(d.centres[2][1] == 0.0);
  CHECK(d.centres[6][2 + 2] == cfg.separation);

  auto bad = cfg;
  bad.dim = 3;
  CHECK_THROWS_AS(synthetic::generate(bad), ValidationError);
}

TEST_CASE("corrupt_labels always yields a different valid sequence") {
  std::mt19937_64 rng(3);
  auto cfg = small_synthetic(300);
  auto d = synthetic::generate(cfg);
  for (const auto& s : d.corpus.sentences) {
    auto noisy = synthetic::corrupt_labels(s.labels, cfg.types, rng);
    CHECK(noisy.size() == s.labels.size());
    CHECK(is_valid_iob(noisy));
    CHECK(noisy != s.labels);
    for (const auto& l : noisy) {
      const auto t = parse_typed(l);
      if (t.prefix != Iob::O) CHECK((t.type == "T0" || t.type == "T1" || t.type == "T2"));
    }
  }
}

TEST_CASE("config json: round trip, unknown keys, relative paths") {
  PipelineConfig c;
  c.embeddings = "e.txt";
  c.corpus = "c.conll";
  c.output_dir = "out";
  c.label_column = 3;
  c.seed = 42;
  c.stages.refine = true;
  c.dagmm.k = 5;
  c.dagmm.epochs = 7;
  c.tagger.hidden = 12;
  c.selector.baseline = true;
  c.hmm.tol = 1e-3;
  c.phrase_threshold = 50;
  nlohmann::json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);

  nlohmann::json extra = j;
  extra["learning_rat"] = 0.1;
  CHECK_THROWS_AS(config_from_json(extra), ValidationError);
  nlohmann::json nested = j;
  nested["tagger"]["hiden"] = 3;
  CHECK_THROWS_AS(config_from_json(nested), ValidationError);
  nlohmann::json seeded = j;
  seeded["selector"]["seed"] = 3;
  CHECK_THROWS_AS(config_from_json(seeded), ValidationError);
  nlohmann::json stage = j;
  stage["stages"]["tagging"] = true;
  CHECK_THROWS_AS(config_from_json(stage), ValidationError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ValidationError);
  nlohmann::json wrong_type = j;
  wrong_type["seed"] = "one";
  CHECK_THROWS_AS(config_from_json(wrong_type), ValidationError);

  oracle::TempDir dir;
  write_json(j, dir.file("cfg.json"));
  PipelineConfig loaded = load_config(dir.file("cfg.json"));
  CHECK(loaded.corpus == dir.path() / "c.conll");
  CHECK(loaded.output_dir == dir.path() / "out");
  CHECK(loaded.dagmm.k == 5);

  // Referenced files must exist at validation time.
  CHECK_THROWS_AS(loaded.validate(), ValidationError);
}

TEST_CASE("config hash and stage seeds") {
  PipelineConfig a;
  a.corpus = "x.conll";
  const std::string h = config_hash(a);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  PipelineConfig b = a;
  b.output_dir = "elsewhere";
  b.resume = true;
  b.stages.refine = true;
  CHECK(config_hash(b) == h);
  b.seed = 2;
  CHECK(config_hash(b) != h);
  PipelineConfig c = a;
  c.tagger.hidden = 8;
  CHECK(config_hash(c) != h);

  std::set<std::uint64_t> seeds;
  for (const char* s : {"cluster", "hmm", "dagmm", "tagger", "selector"}) seeds.insert(stage_seed(1, s));
  CHECK(seeds.size() == 5);
  CHECK(stage_seed(1, "hmm") == stage_seed(1, "hmm"));
  CHECK(stage_seed(1, "hmm") != stage_seed(2, "hmm"));
}

TEST_CASE("end to end on synthetic data: artifacts, determinism, refine toggle") {
  oracle::TempDir dir;
  synthetic::write(synthetic::generate(small_synthetic()), dir.path() / "data");
  auto cfg = config_for(dir.path() / "data", dir.path() / "run1");
  cfg.stages.refine = true;
  cfg.tagger.hidden = 16;
  cfg.tagger.use_chars = false;
  cfg.selector.rounds = 1;
  std::ostringstream log;
  PipelineResult r = run_pipeline(cfg, &log);

  for (const char* f : {"tags.tsv", "hmm.conll", "spans.tsv", "typed.conll", "refined.conll", "output.conll",
                        "metrics.json", "log.jsonl", "cluster.json", "hmm.json", "spans.json", "dagmm.json",
                        "refine.json", "eval.json"})
    CHECK_MESSAGE(fs::exists(dir.path() / "run1" / f), f);
  CHECK(slurp(dir.path() / "run1" / "output.conll") == slurp(dir.path() / "run1" / "refined.conll"));
  for (const auto& f : fs::directory_iterator(dir.path() / "run1")) CHECK(f.path().extension() != ".tmp");

  const std::vector<std::string> order{"cluster", "hmm", "spans", "dagmm", "refine", "eval"};
  CHECK(log_stages(dir.path() / "run1") == order);
  CHECK(r.stages.size() == 6);
  std::istringstream lines(log.str());
  int n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("config_hash") == r.config_hash);
    CHECK(j.contains("seconds"));
    CHECK(j.at("stage") == order[static_cast<std::size_t>(n)]);
  }
  CHECK(n == 6);
  for (const char* m : {"cluster.json", "hmm.json", "spans.json", "dagmm.json", "refine.json", "eval.json"})
    CHECK(read_json(dir.path() / "run1" / m).at("config_hash") == r.config_hash);

  const auto metrics = read_json(dir.path() / "run1" / "metrics.json");
  CHECK(metrics == r.metrics);
  CHECK(metrics.dump().find("seconds") == std::string::npos);
  const auto& eval = metrics["stages"]["eval"];
  for (const char* s : {"cluster", "hmm", "spans", "dagmm", "refine"}) CHECK(eval["span_detection"].contains(s));
  CHECK(eval["typed"]["dagmm"]["overall"]["f1"].get<double>() > 0.8);

  // The model stored in hmm.json reads back.
  CHECK_NOTHROW(hmm::params_from_json(read_json(dir.path() / "run1" / "hmm.json").at("model")));

  // Same config and seed in a fresh directory: identical metrics, byte for byte.
  auto again = cfg;
  again.output_dir = dir.path() / "run2";
  run_pipeline(again);
  CHECK(slurp(dir.path() / "run1" / "metrics.json") == slurp(dir.path() / "run2" / "metrics.json"));
  CHECK(slurp(dir.path() / "run1" / "refined.conll") == slurp(dir.path() / "run2" / "refined.conll"));

  // Without refinement the output is the typed decode itself.
  auto basic = cfg;
  basic.stages.refine = false;
  basic.output_dir = dir.path() / "run3";
  PipelineResult b = run_pipeline(basic);
  CHECK(!fs::exists(dir.path() / "run3" / "refined.conll"));
  CHECK(slurp(dir.path() / "run3" / "output.conll") == slurp(dir.path() / "run3" / "typed.conll"));
  CHECK(slurp(dir.path() / "run3" / "typed.conll") == slurp(dir.path() / "run1" / "typed.conll"));
  CHECK(!b.metrics["stages"]["eval"]["span_detection"].contains("refine"));
}

TEST_CASE("resume, hash mismatch and failures") {
  oracle::TempDir dir;
  synthetic::write(synthetic::generate(small_synthetic(100)), dir.path() / "data");
  auto cfg = config_for(dir.path() / "data", dir.path() / "out");
  PipelineResult first = run_pipeline(cfg);
  const std::string metrics = slurp(dir.path() / "out" / "metrics.json");

  auto resumed = cfg;
  resumed.resume = true;
  PipelineResult second = run_pipeline(resumed);
  for (const auto& s : second.stages) CHECK_MESSAGE(s.resumed, s.stage);
  CHECK(slurp(dir.path() / "out" / "metrics.json") == metrics);

  // Only eval enabled: earlier stages come from their artifacts.
  auto eval_only = cfg;
  eval_only.stages = {false, false, false, false, false, true};
  PipelineResult third = run_pipeline(eval_only);
  CHECK(third.stages.back().stage == "eval");
  CHECK_FALSE(third.stages.back().resumed);
  CHECK(third.metrics["stages"]["eval"] == first.metrics["stages"]["eval"]);

  // Artifacts from another config are refused.
  auto other = resumed;
  other.seed = 99;
  std::string stage;
  CHECK(stage_error_code(other, &stage) == 2);
  CHECK(stage == "cluster");

  // A disabled stage with nothing to load from.
  auto missing = config_for(dir.path() / "data", dir.path() / "fresh");
  missing.stages.cluster = false;
  CHECK(stage_error_code(missing, &stage) == 2);
  CHECK(stage == "cluster");

  // Too many components for the spans found: the failing stage is named and
  // earlier artifacts stay in place.
  auto impossible = config_for(dir.path() / "data", dir.path() / "fail");
  impossible.dagmm.k = 100000;
  CHECK(stage_error_code(impossible, &stage) == 3);
  CHECK(stage == "dagmm");
  for (const char* f : {"tags.tsv", "hmm.conll", "spans.tsv", "spans.json"}) CHECK(fs::exists(dir.path() / "fail" / f));
  CHECK(!fs::exists(dir.path() / "fail" / "dagmm.json"));

  auto no_corpus = cfg;
  no_corpus.corpus = dir.path() / "nope.conll";
  CHECK(stage_error_code(no_corpus, &stage) == 2);
  CHECK(stage == "setup");
}

TEST_CASE("zero-entity corpus exercises the empty-gold path") {
  oracle::TempDir dir;
  auto sc = small_synthetic(100);
  sc.entity_rate = 0.0;
  auto d = synthetic::generate(sc);
  for (const auto& s : d.corpus.sentences)
    for (const auto& l : s.labels) CHECK(l == "O");
  synthetic::write(d, dir.path() / "data");
  auto cfg = config_for(dir.path() / "data", dir.path() / "out");
  PipelineResult r = run_pipeline(cfg);
  const auto& typed = r.metrics["stages"]["eval"]["typed"]["dagmm"];
  CHECK(typed["overall"]["gold"] == 0);
  CHECK(typed["overall"]["recall"] == 0.0);
  CHECK(typed["overall"]["f1"] == 0.0);
  bool noted = false;
  for (const auto& n : typed["notes"]) noted = noted || n.get<std::string>().find("no gold spans") != std::string::npos;
  CHECK(noted);
}
