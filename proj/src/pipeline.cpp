#include "embner/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "embner/error.hpp"
#include "embner/eval.hpp"
#include "embner/iob.hpp"
#include "embner/json_io.hpp"
#include "embner/spans.hpp"

namespace embner::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

nlohmann::json stages_json(const Stages& s) {
  return {{"cluster", s.cluster}, {"hmm", s.hmm},       {"spans", s.spans},
          {"dagmm", s.dagmm},     {"refine", s.refine}, {"eval", s.eval}};
}

// Writes through a temporary file so an interrupted stage never leaves a
// half-written artifact behind.
template <typename F>
void write_atomic(const fs::path& path, F&& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  write(tmp);
  fs::rename(tmp, path);
}

void write_json_atomic(const nlohmann::json& j, const fs::path& path) {
  write_atomic(path, [&](const fs::path& p) { write_json(j, p); });
}

void write_labels_atomic(const Corpus& corpus, const std::vector<std::vector<std::string>>& labels,
                         const fs::path& path) {
  write_atomic(path, [&](const fs::path& p) { write_conll(corpus, labels, p); });
}

std::vector<std::vector<std::string>> read_labels(const fs::path& path, const Corpus& corpus) {
  Corpus c = load_conll(path, 0, -1);
  if (c.size() != corpus.size()) throw ValidationError(path.string() + " does not match the corpus");
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.sentences[i].tokens != corpus.sentences[i].tokens)
      throw ValidationError(path.string() + ": sentence " + std::to_string(i) + " does not match the corpus");
  return eval::labels_of(c);
}

std::vector<std::vector<Iob>> to_iob_labels(const std::vector<std::vector<std::string>>& labels) {
  std::vector<std::vector<Iob>> out;
  for (const auto& s : labels) {
    std::vector<Iob> row;
    for (const auto& l : s) row.push_back(parse_typed(l).prefix);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<std::string>> from_iob_labels(const std::vector<std::vector<Iob>>& labels) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : labels) {
    std::vector<std::string> row;
    for (Iob t : s) row.emplace_back(1, iob_char(t));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::string> component_names(int k) {
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back("C" + std::to_string(i));
  return out;
}

class Runner {
 public:
  Runner(const PipelineConfig& config, std::ostream* log)
      : config_(config), hash_(config_hash(config)), dir_(config.output_dir), log_(log) {}

  PipelineResult run();

 private:
  fs::path manifest_path(const std::string& stage) const { return dir_ / (stage + ".json"); }

  // Manifest of a finished stage, checked against the current hash; nullopt
  // when the stage has not been run in this directory.
  std::optional<nlohmann::json> load_manifest(const std::string& stage) const {
    fs::path p = manifest_path(stage);
    if (!fs::exists(p)) return std::nullopt;
    nlohmann::json j = read_json(p);
    const std::string found = j.value("config_hash", std::string());
    if (found != hash_)
      throw ValidationError("artifact " + p.string() + " was produced by config " + found + ", current config is " +
                            hash_);
    return j;
  }

  void save_manifest(const std::string& stage, nlohmann::json extra, const nlohmann::json& metrics) {
    extra["stage"] = stage;
    extra["config_hash"] = hash_;
    extra["metrics"] = metrics;
    write_json_atomic(extra, manifest_path(stage));
  }

  // Runs `compute` unless the stage is disabled or resumable, in which case
  // `load` restores its outputs from the manifest.
  template <typename Compute, typename Load>
  void stage(const std::string& name, bool enabled, bool needed, Compute&& compute, Load&& load) {
    auto t0 = std::chrono::steady_clock::now();
    StageRecord rec;
    rec.stage = name;
    try {
      std::optional<nlohmann::json> prior;
      if (!enabled || config_.resume) prior = load_manifest(name);
      if (enabled && !prior) {
        rec.metrics = compute();
      } else if (prior) {
        load(*prior);
        rec.metrics = prior->at("metrics");
        rec.resumed = true;
      } else if (needed) {
        throw ValidationError("stage is disabled and " + manifest_path(name).string() + " does not exist");
      } else {
        return;
      }
    } catch (const StageError&) {
      throw;
    } catch (const ParseError& e) {
      throw StageError(name, 2, e.what());
    } catch (const ValidationError& e) {
      throw StageError(name, 2, e.what());
    } catch (const std::exception& e) {
      throw StageError(name, 3, e.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json line = {{"stage", name},        {"resumed", rec.resumed}, {"seconds", rec.seconds},
                           {"config_hash", hash_}, {"metrics", rec.metrics}};
    const std::string text = line.dump();
    if (log_) *log_ << text << std::endl;
    std::ofstream(dir_ / "log.jsonl", std::ios::app) << text << '\n';
    result_.metrics["stages"][name] = rec.metrics;
    result_.stages.push_back(std::move(rec));
  }

  const PipelineConfig& config_;
  std::string hash_;
  fs::path dir_;
  std::ostream* log_;
  PipelineResult result_;

  Corpus corpus_;
  std::shared_ptr<EmbeddingTable> embeddings_;
  kcluster::SeedTags tags_;
  std::vector<std::vector<Iob>> decoded_;
  std::vector<spans::Span> spans_;
  std::vector<std::vector<std::string>> typed_;
  std::vector<std::vector<std::string>> refined_;
  bool have_refined_ = false;
};

PipelineResult Runner::run() {
  result_.config_hash = hash_;
  result_.metrics = {{"config_hash", hash_}, {"stages", nlohmann::json::object()}};
  try {
    config_.validate();
    fs::create_directories(dir_);
    corpus_ = load_conll(config_.corpus, config_.token_column, config_.label_column);
    if (corpus_.size() == 0) throw ValidationError("corpus " + config_.corpus.string() + " has no sentences");
    embeddings_ = std::make_shared<EmbeddingTable>(load_embeddings(config_.embeddings));
  } catch (const std::exception& e) {
    throw StageError("setup", 2, e.what());
  }
  const auto& st = config_.stages;
  const int K = config_.dagmm.k;

  stage(
      "cluster", st.cluster, true,
      [&] {
        tags_ = kcluster::cluster_corpus(corpus_, *embeddings_, stage_seed(config_.seed, "cluster"),
                                         config_.kmeans_max_iters);
        auto vocab = kcluster::corpus_vocabulary(corpus_);
        kcluster::write_tags(tags_, vocab, dir_ / "tags.tsv");
        std::int64_t tagged = 0;
        for (const auto& s : corpus_.sentences)
          for (const auto& t : s.tokens) tagged += tags_(t);
        nlohmann::json m = {{"vocabulary", vocab.size()},
                            {"dictionary", tags_.coarse_dictionary.size()},
                            {"entity_tokens", tagged}};
        save_manifest("cluster", {{"artifacts", {"tags.tsv"}}}, m);
        return m;
      },
      [&](const nlohmann::json&) { tags_ = kcluster::read_tags(dir_ / "tags.tsv"); });

  stage(
      "hmm", st.hmm, true,
      [&] {
        auto obs = hmm::observe(corpus_, *embeddings_, tags_);
        hmm::HmmParams init = hmm::initial_params(obs, stage_seed(config_.seed, "hmm"), config_.hmm.cov_floor);
        hmm::FitResult fit = hmm::em_fit(obs, init, config_.hmm);
        decoded_.clear();
        std::int64_t entity_tokens = 0;
        for (const auto& o : obs) {
          decoded_.push_back(hmm::viterbi_decode(o, fit.params));
          for (Iob t : decoded_.back()) entity_tokens += t != Iob::O;
        }
        write_labels_atomic(corpus_, from_iob_labels(decoded_), dir_ / "hmm.conll");
        nlohmann::json m = {{"iterations", fit.report.iterations},
                            {"converged", fit.report.converged},
                            {"loglik", fit.report.loglik},
                            {"entity_tokens", entity_tokens}};
        save_manifest("hmm", {{"artifacts", {"hmm.conll"}}, {"model", hmm::to_json(fit.params)}}, m);
        return m;
      },
      [&](const nlohmann::json&) { decoded_ = to_iob_labels(read_labels(dir_ / "hmm.conll", corpus_)); });

  stage(
      "spans", st.spans, true,
      [&] {
        spans::SpanSet extracted = spans::extract_spans(corpus_, decoded_);
        spans::SpanSet filtered = spans::filter_single_word(extracted, corpus_, tags_.coarse_dictionary);
        spans::PhraseFilterConfig pf;
        pf.threshold = config_.phrase_threshold;
        spans::SpanSet merged = spans::merge_phrases(filtered, corpus_, collect_stats(corpus_), pf);
        spans_ = merged.spans;
        write_atomic(dir_ / "spans.tsv", [&](const fs::path& p) { spans::write_spans(spans_, p); });
        nlohmann::json m = {{"extracted", extracted.spans.size()},
                            {"repairs", extracted.repairs},
                            {"after_filter", filtered.spans.size()},
                            {"after_merge", merged.spans.size()}};
        save_manifest("spans", {{"artifacts", {"spans.tsv"}}}, m);
        return m;
      },
      [&](const nlohmann::json&) { spans_ = spans::read_spans(dir_ / "spans.tsv"); });

  stage(
      "dagmm", st.dagmm, st.refine || st.eval,
      [&] {
        if (static_cast<int>(spans_.size()) < K)
          throw NumericError("only " + std::to_string(spans_.size()) + " spans for " + std::to_string(K) +
                             " components");
        std::vector<Vector> reps;
        for (const auto& s : spans_) reps.push_back(spans::span_representation(s, corpus_, *embeddings_));
        dagmm::DagmmConfig dc = config_.dagmm;
        dc.input_dim = static_cast<int>(reps.front().size());
        dc.seed = stage_seed(config_.seed, "dagmm");
        dagmm::TrainResult tr = dagmm::train(reps, dc);
        std::vector<int> types = dagmm::assign_types(reps, tr.model);
        std::vector<std::int64_t> sizes(static_cast<std::size_t>(K), 0);
        for (std::size_t i = 0; i < spans_.size(); ++i) {
          spans_[i].type = types[i];
          ++sizes[static_cast<std::size_t>(types[i])];
        }
        typed_ = spans::to_labels(spans_, corpus_, true);
        write_labels_atomic(corpus_, typed_, dir_ / "typed.conll");
        nlohmann::json m = {{"spans", spans_.size()},
                            {"component_sizes", sizes},
                            {"final_objective", tr.report.epoch_objective.empty()
                                                    ? 0.0
                                                    : tr.report.epoch_objective.back()},
                            {"degenerate_batches", tr.report.degenerate_batches}};
        save_manifest("dagmm", {{"artifacts", {"typed.conll"}}, {"model", dagmm::to_json(tr.model)}}, m);
        return m;
      },
      [&](const nlohmann::json&) { typed_ = read_labels(dir_ / "typed.conll", corpus_); });

  stage(
      "refine", st.refine, false,
      [&] {
        Corpus noisy = corpus_;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy.sentences[i].labels = typed_[i];
        tagger::TaggerConfig tc = config_.tagger;
        tc.seed = stage_seed(config_.seed, "tagger");
        selector::SelectorConfig sc = config_.selector;
        sc.seed = stage_seed(config_.seed, "selector");
        tagger::TaggerModel model = tagger::init_tagger(tc, tagger::Tagset::components(K), embeddings_, noisy);
        selector::RefineResult r = selector::refine_loop(noisy, std::move(model), sc);
        refined_ = r.labels;
        have_refined_ = true;
        write_labels_atomic(corpus_, refined_, dir_ / "refined.conll");
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& rr : r.rounds) rounds.push_back(selector::to_json(rr));
        std::int64_t kept = 0;
        for (bool b : r.selected) kept += b;
        nlohmann::json m = {{"rounds", rounds}, {"selected_final", kept}};
        save_manifest("refine",
                      {{"artifacts", {"refined.conll"}},
                       {"tagger", tagger::to_json(r.tagger)},
                       {"selector", selector::to_json(r.params)}},
                      m);
        return m;
      },
      [&](const nlohmann::json&) {
        refined_ = read_labels(dir_ / "refined.conll", corpus_);
        have_refined_ = true;
      });

  // The pipeline's answer: refined labels when refinement ran, else the typed decode.
  if (!typed_.empty())
    write_labels_atomic(corpus_, have_refined_ ? refined_ : typed_, dir_ / "output.conll");

  stage(
      "eval", st.eval, false,
      [&] {
        fs::path gold_path = config_.gold.empty() ? config_.corpus : config_.gold;
        Corpus gold_corpus = load_conll(gold_path, config_.token_column, config_.gold_label_column);
        if (gold_corpus.size() != corpus_.size())
          throw ValidationError("gold file has " + std::to_string(gold_corpus.size()) + " sentences, corpus has " +
                                std::to_string(corpus_.size()));
        auto gold = eval::labels_of(gold_corpus);
        const auto comps = component_names(K);
        nlohmann::json detection = {
            {"cluster", eval::to_json(eval::span_detection_prf(seed_tag_labels(corpus_, tags_), gold))},
            {"hmm", eval::to_json(eval::span_detection_prf(from_iob_labels(decoded_), gold))},
            {"spans", eval::to_json(eval::span_detection_prf(spans::to_labels(spans_, corpus_, false), gold))},
            {"dagmm", eval::to_json(eval::span_detection_prf(typed_, gold))}};
        nlohmann::json typed = {{"dagmm", eval::to_json(eval::evaluate_typed(typed_, gold, comps))}};
        if (have_refined_) {
          detection["refine"] = eval::to_json(eval::span_detection_prf(refined_, gold));
          typed["refine"] = eval::to_json(eval::evaluate_typed(refined_, gold, comps));
        }
        nlohmann::json m = {{"span_detection", detection}, {"typed", typed}};
        save_manifest("eval", {{"artifacts", nlohmann::json::array()}}, m);
        return m;
      },
      [&](const nlohmann::json&) {});

  write_json_atomic(result_.metrics, dir_ / "metrics.json");
  return result_;
}

}  // namespace

void PipelineConfig::validate() const {
  if (embeddings.empty() || !fs::exists(embeddings))
    throw ValidationError("embeddings file not found: " + embeddings.string());
  if (corpus.empty() || !fs::exists(corpus)) throw ValidationError("corpus file not found: " + corpus.string());
  if (!gold.empty() && !fs::exists(gold)) throw ValidationError("gold file not found: " + gold.string());
  if (output_dir.empty()) throw ValidationError("output_dir is required");
  if (token_column < 0) throw ValidationError("token_column must be >= 0");
  if (dagmm.k < 2) throw ValidationError("k must be at least 2");
  if (kmeans_max_iters < 1 || hmm.max_iters < 0) throw ValidationError("iteration limits must be positive");
  if (!(phrase_threshold > 0.0)) throw ValidationError("phrase_threshold must be positive");
  dagmm::DagmmConfig d = dagmm;
  d.input_dim = std::max(d.input_dim, 1);
  d.validate();
  tagger.validate();
  selector.validate();
}

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = {{"embeddings", c.embeddings.string()},
                      {"corpus", c.corpus.string()},
                      {"output_dir", c.output_dir.string()},
                      {"token_column", c.token_column},
                      {"label_column", c.label_column ? nlohmann::json(*c.label_column) : nlohmann::json()},
                      {"gold", c.gold.string()},
                      {"gold_label_column", c.gold_label_column},
                      {"seed", c.seed},
                      {"stages", stages_json(c.stages)},
                      {"resume", c.resume},
                      {"kmeans_max_iters", c.kmeans_max_iters},
                      {"hmm_max_iters", c.hmm.max_iters},
                      {"hmm_tol", c.hmm.tol},
                      {"hmm_cov_floor", c.hmm.cov_floor},
                      {"phrase_threshold", c.phrase_threshold},
                      {"k", c.dagmm.k}};
  nlohmann::json d = dagmm::to_json(c.dagmm);
  d.erase("k");
  d.erase("seed");
  d.erase("input_dim");
  j["dagmm"] = d;
  nlohmann::json t = tagger::to_json(c.tagger);
  t.erase("seed");
  j["tagger"] = t;
  nlohmann::json s = selector::to_json(c.selector);
  s.erase("seed");
  j["selector"] = s;
  return j;
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "embeddings", "corpus",   "output_dir",       "token_column",  "label_column", "gold",
      "gold_label_column", "seed", "stages",       "resume",        "kmeans_max_iters", "hmm_max_iters",
      "hmm_tol",    "hmm_cov_floor", "phrase_threshold", "k",        "dagmm",        "tagger",
      "selector"};
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ValidationError("unknown config key: " + key);
  PipelineConfig c;
  try {
    c.embeddings = j.value("embeddings", std::string());
    c.corpus = j.value("corpus", std::string());
    c.output_dir = j.value("output_dir", std::string());
    c.token_column = j.value("token_column", c.token_column);
    if (j.contains("label_column") && !j["label_column"].is_null()) c.label_column = j["label_column"].get<int>();
    c.gold = j.value("gold", std::string());
    c.gold_label_column = j.value("gold_label_column", c.gold_label_column);
    c.seed = j.value("seed", c.seed);
    if (j.contains("stages")) {
      const auto& s = j["stages"];
      for (const auto& [key, value] : s.items()) {
        bool* flag = key == "cluster" ? &c.stages.cluster
                     : key == "hmm"   ? &c.stages.hmm
                     : key == "spans" ? &c.stages.spans
                     : key == "dagmm" ? &c.stages.dagmm
                     : key == "refine" ? &c.stages.refine
                     : key == "eval"  ? &c.stages.eval
                                      : nullptr;
        if (!flag) throw ValidationError("unknown stage: " + key);
        *flag = value.get<bool>();
      }
    }
    c.resume = j.value("resume", c.resume);
    c.kmeans_max_iters = j.value("kmeans_max_iters", c.kmeans_max_iters);
    c.hmm.max_iters = j.value("hmm_max_iters", c.hmm.max_iters);
    c.hmm.tol = j.value("hmm_tol", c.hmm.tol);
    c.hmm.cov_floor = j.value("hmm_cov_floor", c.hmm.cov_floor);
    c.phrase_threshold = j.value("phrase_threshold", c.phrase_threshold);
    // Section keys are checked against the section's own serialized defaults.
    auto section = [&](const char* name, const nlohmann::json& defaults) {
      const auto& sec = j[name];
      if (!sec.is_object()) throw ValidationError(std::string("config: ") + name + " must be an object");
      for (const auto& [key, value] : sec.items())
        if (!defaults.contains(key) || key == "seed" || key == "k" || key == "input_dim")
          throw ValidationError(std::string("unknown config key: ") + name + "." + key);
      return sec;
    };
    if (j.contains("dagmm")) c.dagmm = dagmm::config_from_json(section("dagmm", dagmm::to_json(c.dagmm)));
    c.dagmm.k = j.value("k", c.dagmm.k);
    if (j.contains("tagger")) c.tagger = tagger::tagger_config_from_json(section("tagger", tagger::to_json(c.tagger)));
    if (j.contains("selector"))
      c.selector = selector::selector_config_from_json(section("selector", selector::to_json(c.selector)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig c = config_from_json(read_json(path));
  // Relative paths inside the file are relative to the file itself.
  const fs::path base = path.parent_path();
  for (fs::path* p : {&c.embeddings, &c.corpus, &c.output_dir, &c.gold})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  return c;
}

std::string config_hash(const PipelineConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  j.erase("resume");
  j.erase("stages");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return splitmix64(seed ^ fnv1a(stage)); }

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log) { return Runner(config, log).run(); }

std::vector<std::vector<std::string>> seed_tag_labels(const Corpus& corpus, const kcluster::SeedTags& tags) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : corpus.sentences) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (!tags(s.tokens[i]))
        row.push_back("O");
      else
        row.push_back(i > 0 && row.back() != "O" ? "I" : "B");
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace embner::pipeline
