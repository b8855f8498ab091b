// embner: command-line front end. Every stage can run on its own from files,
// or all of them through `pipeline` with one JSON config.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <random>

#include "embner/error.hpp"
#include "embner/eval.hpp"
#include "embner/json_io.hpp"
#include "embner/pipeline.hpp"
#include "embner/spans.hpp"
#include "embner/synthetic.hpp"

using namespace embner;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kFailed = 3;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string embeddings, corpus;
  int token_column = 0;
};

// Hyperparameters come from --config when given; command-line flags override.
pipeline::PipelineConfig base_config(const Common& c) {
  pipeline::PipelineConfig p;
  if (!c.config.empty()) p = pipeline::load_config(c.config);
  if (c.seed_set) p.seed = c.seed;
  if (!c.embeddings.empty()) p.embeddings = c.embeddings;
  if (!c.corpus.empty()) p.corpus = c.corpus;
  return p;
}

void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw ValidationError(std::string(flag) + " is required");
  if (!fs::exists(p)) throw ValidationError(std::string(flag) + ": file not found: " + p.string());
}

std::vector<std::vector<Iob>> iob_of(const Corpus& c) {
  std::vector<std::vector<Iob>> out;
  for (const auto& s : c.sentences) {
    std::vector<Iob> row;
    for (const auto& l : s.labels) row.push_back(parse_typed(l).prefix);
    out.push_back(std::move(row));
  }
  return out;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity spans and types from raw text and word embeddings"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Pipeline JSON config supplying defaults");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { common.seed = s, common.seed_set = true; }, "Global seed");
  };
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--embeddings", common.embeddings, "Embedding text file");
    sub->add_option("--corpus", common.corpus, "CoNLL corpus");
    sub->add_option("--token-column", common.token_column, "Token column of the corpus")->default_val(0);
  };

  // cluster
  auto* cluster = app.add_subcommand("cluster", "K-means seed tags for every corpus word");
  add_common(cluster);
  add_inputs(cluster);
  std::string tags_out = "tags.tsv";
  int kmeans_iters = -1;
  cluster->add_option("--out", tags_out, "token TAB {0|1} per line");
  cluster->add_option("--max-iters", kmeans_iters);

  // hmm
  auto* hmm_cmd = app.add_subcommand("hmm", "Fit the Gaussian HMM and decode IOB tags");
  add_common(hmm_cmd);
  add_inputs(hmm_cmd);
  std::string tags_in, model_out = "model.json", decode_out;
  int hmm_iters = -1;
  double hmm_tol = -1.0;
  hmm_cmd->add_option("--tags", tags_in, "Seed tags from `cluster`")->required();
  hmm_cmd->add_option("--max-iters", hmm_iters);
  hmm_cmd->add_option("--tol", hmm_tol);
  hmm_cmd->add_option("--out", model_out);
  hmm_cmd->add_option("--decode", decode_out, "CoNLL file of decoded tags");

  // spans
  auto* spans_cmd = app.add_subcommand("spans", "Extract, filter and merge spans from decoded tags");
  add_common(spans_cmd);
  std::string decoded_in, spans_out = "spans.tsv";
  double threshold = -1.0;
  spans_cmd->add_option("--decoded", decoded_in, "CoNLL file from `hmm --decode`")->required();
  spans_cmd->add_option("--tags", tags_in, "Seed tags from `cluster`")->required();
  spans_cmd->add_option("--threshold", threshold, "Phrase score threshold");
  spans_cmd->add_option("--out", spans_out, "sentence TAB start TAB end per line");

  // dagmm
  auto* dagmm_cmd = app.add_subcommand("dagmm", "Induce entity types for spans");
  add_common(dagmm_cmd);
  add_inputs(dagmm_cmd);
  std::string spans_in, assign_out;
  int k = -1, dagmm_epochs = -1;
  dagmm_cmd->add_option("--spans", spans_in)->required();
  dagmm_cmd->add_option("--k", k, "Number of types");
  dagmm_cmd->add_option("--epochs", dagmm_epochs);
  dagmm_cmd->add_option("--out", model_out);
  dagmm_cmd->add_option("--assign", assign_out, "Spans with a C<k> type column");
  dagmm_cmd->add_option("--decode", decode_out, "CoNLL file with typed labels");

  // tagger
  auto* tagger_cmd = app.add_subcommand("tagger", "Train the BiLSTM-CRF tagger on labelled sentences");
  add_common(tagger_cmd);
  std::string train_in;
  int epochs = -1;
  tagger_cmd->add_option("--train", train_in)->required();
  tagger_cmd->add_option("--embeddings", common.embeddings)->required();
  tagger_cmd->add_option("--epochs", epochs);
  tagger_cmd->add_option("--out", model_out);
  tagger_cmd->add_option("--decode", decode_out, "CoNLL file of the tagger's predictions");

  // refine
  auto* refine_cmd = app.add_subcommand("refine", "Refine noisy labels with the tagger and instance selector");
  add_common(refine_cmd);
  std::string noisy_in, refined_out = "refined.conll", tagger_out, baseline, selector_out;
  int rounds = -1, batch = -1;
  refine_cmd->add_option("--noisy", noisy_in)->required();
  refine_cmd->add_option("--embeddings", common.embeddings)->required();
  refine_cmd->add_option("--rounds", rounds);
  refine_cmd->add_option("--n", batch, "Sentences per reward");
  refine_cmd->add_option("--epochs", epochs, "Tagger warm-up epochs");
  refine_cmd->add_option("--baseline", baseline)->check(CLI::IsMember({"on", "off"}));
  refine_cmd->add_option("--out", refined_out);
  refine_cmd->add_option("--tagger-out", tagger_out);
  refine_cmd->add_option("--selector-out", selector_out);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Exact-match span scores");
  std::string pred_in, gold_in, mode = "typed", json_out;
  eval_cmd->add_option("--pred", pred_in)->required();
  eval_cmd->add_option("--gold", gold_in)->required();
  eval_cmd->add_option("--mode", mode)->check(CLI::IsMember({"typed", "span"}));
  eval_cmd->add_option("--json", json_out, "Also write the JSON block here");

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run all stages from one config");
  add_common(pipe_cmd);
  add_inputs(pipe_cmd);
  std::string output_dir, refine_toggle;
  bool resume = false;
  pipe_cmd->add_option("--output-dir", output_dir);
  pipe_cmd->add_flag("--resume", resume, "Reuse finished stages in the output directory");
  pipe_cmd->add_option("--refine", refine_toggle)->check(CLI::IsMember({"on", "off"}));

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a known-truth corpus with embeddings");
  add_common(synth_cmd);
  std::string synth_out = "synthetic";
  synthetic::SyntheticConfig sc;
  synth_cmd->add_option("--out", synth_out, "Output directory");
  synth_cmd->add_option("--sentences", sc.sentences)->default_val(sc.sentences);
  synth_cmd->add_option("--types", sc.types)->default_val(sc.types);
  synth_cmd->add_option("--dim", sc.dim)->default_val(sc.dim);
  synth_cmd->add_option("--separation", sc.separation, "Centre offset in sigmas")->default_val(sc.separation);
  synth_cmd->add_option("--entity-rate", sc.entity_rate)->default_val(sc.entity_rate);
  synth_cmd->add_option("--corrupt", sc.corrupt_fraction, "Share of sentences with damaged labels")
      ->default_val(sc.corrupt_fraction);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*cluster) {
      auto cfg = base_config(common);
      require(cfg.embeddings, "--embeddings");
      require(cfg.corpus, "--corpus");
      Corpus corpus = load_conll(cfg.corpus, common.token_column, std::nullopt);
      EmbeddingTable emb = load_embeddings(cfg.embeddings);
      auto tags = kcluster::cluster_corpus(corpus, emb, pipeline::stage_seed(cfg.seed, "cluster"),
                                           kmeans_iters > 0 ? kmeans_iters : cfg.kmeans_max_iters);
      kcluster::write_tags(tags, kcluster::corpus_vocabulary(corpus), tags_out);
      print_json({{"stage", "cluster"}, {"dictionary", tags.coarse_dictionary.size()}});
    } else if (*hmm_cmd) {
      auto cfg = base_config(common);
      require(cfg.embeddings, "--embeddings");
      require(cfg.corpus, "--corpus");
      require(tags_in, "--tags");
      if (hmm_iters >= 0) cfg.hmm.max_iters = hmm_iters;
      if (hmm_tol >= 0) cfg.hmm.tol = hmm_tol;
      Corpus corpus = load_conll(cfg.corpus, common.token_column, std::nullopt);
      EmbeddingTable emb = load_embeddings(cfg.embeddings);
      auto obs = hmm::observe(corpus, emb, kcluster::read_tags(tags_in));
      auto fit = hmm::em_fit(obs, hmm::initial_params(obs, pipeline::stage_seed(cfg.seed, "hmm"), cfg.hmm.cov_floor),
                             cfg.hmm);
      write_json(hmm::to_json(fit.params), model_out);
      if (!decode_out.empty()) {
        std::vector<std::vector<std::string>> labels;
        for (const auto& o : obs) {
          std::vector<std::string> row;
          for (Iob t : hmm::viterbi_decode(o, fit.params)) row.emplace_back(1, iob_char(t));
          labels.push_back(std::move(row));
        }
        write_conll(corpus, labels, decode_out);
      }
      print_json({{"stage", "hmm"},
                  {"loglik", fit.report.loglik},
                  {"iterations", fit.report.iterations},
                  {"converged", fit.report.converged}});
    } else if (*spans_cmd) {
      auto cfg = base_config(common);
      require(decoded_in, "--decoded");
      require(tags_in, "--tags");
      if (threshold > 0) cfg.phrase_threshold = threshold;
      Corpus decoded = load_conll(decoded_in, 0, -1);
      auto tags = kcluster::read_tags(tags_in);
      auto extracted = spans::extract_spans(decoded, iob_of(decoded));
      auto filtered = spans::filter_single_word(extracted, decoded, tags.coarse_dictionary);
      spans::PhraseFilterConfig pf;
      pf.threshold = cfg.phrase_threshold;
      auto merged = spans::merge_phrases(filtered, decoded, collect_stats(decoded), pf);
      spans::write_spans(merged.spans, spans_out);
      print_json({{"stage", "spans"},
                  {"extracted", extracted.spans.size()},
                  {"after_filter", filtered.spans.size()},
                  {"after_merge", merged.spans.size()}});
    } else if (*dagmm_cmd) {
      auto cfg = base_config(common);
      require(cfg.embeddings, "--embeddings");
      require(cfg.corpus, "--corpus");
      require(spans_in, "--spans");
      if (k > 0) cfg.dagmm.k = k;
      if (dagmm_epochs > 0) cfg.dagmm.epochs = dagmm_epochs;
      Corpus corpus = load_conll(cfg.corpus, common.token_column, std::nullopt);
      EmbeddingTable emb = load_embeddings(cfg.embeddings);
      auto spans = spans::read_spans(spans_in);
      if (static_cast<int>(spans.size()) < cfg.dagmm.k)
        throw NumericError("only " + std::to_string(spans.size()) + " spans for k = " + std::to_string(cfg.dagmm.k));
      std::vector<Vector> reps;
      for (const auto& s : spans) reps.push_back(spans::span_representation(s, corpus, emb));
      cfg.dagmm.input_dim = static_cast<int>(reps.front().size());
      cfg.dagmm.seed = pipeline::stage_seed(cfg.seed, "dagmm");
      auto tr = dagmm::train(reps, cfg.dagmm);
      auto types = dagmm::assign_types(reps, tr.model);
      for (std::size_t i = 0; i < spans.size(); ++i) spans[i].type = types[i];
      write_json(dagmm::to_json(tr.model), model_out);
      if (!assign_out.empty()) spans::write_spans(spans, assign_out, true);
      if (!decode_out.empty()) write_conll(corpus, spans::to_labels(spans, corpus, true), decode_out);
      print_json({{"stage", "dagmm"}, {"spans", spans.size()}, {"degenerate_batches", tr.report.degenerate_batches}});
    } else if (*tagger_cmd) {
      auto cfg = base_config(common);
      require(train_in, "--train");
      require(cfg.embeddings, "--embeddings");
      if (epochs > 0) cfg.tagger.epochs = epochs;
      cfg.tagger.seed = pipeline::stage_seed(cfg.seed, "tagger");
      Corpus train = load_conll(train_in, 0, -1);
      auto emb = std::make_shared<EmbeddingTable>(load_embeddings(cfg.embeddings));
      auto tagset = tagger::Tagset::from_corpus(train);
      auto model = tagger::init_tagger(cfg.tagger, tagset, emb, train);
      std::mt19937_64 rng(cfg.tagger.seed);
      auto examples = tagger::make_examples(train, tagset);
      auto losses = tagger::train(model, examples, rng);
      write_json(tagger::to_json(model), model_out);
      if (!decode_out.empty()) write_conll(train, tagger::decode_corpus(model, train), decode_out);
      print_json({{"stage", "tagger"}, {"losses", losses}});
    } else if (*refine_cmd) {
      auto cfg = base_config(common);
      require(noisy_in, "--noisy");
      require(cfg.embeddings, "--embeddings");
      if (rounds >= 0) cfg.selector.rounds = rounds;
      if (batch > 0) cfg.selector.batch_size = batch;
      if (epochs >= 0) cfg.selector.warmup_epochs = epochs;
      if (!baseline.empty()) cfg.selector.baseline = baseline == "on";
      cfg.tagger.seed = pipeline::stage_seed(cfg.seed, "tagger");
      cfg.selector.seed = pipeline::stage_seed(cfg.seed, "selector");
      Corpus noisy = load_conll(noisy_in, 0, -1);
      auto emb = std::make_shared<EmbeddingTable>(load_embeddings(cfg.embeddings));
      auto model = tagger::init_tagger(cfg.tagger, tagger::Tagset::from_corpus(noisy), emb, noisy);
      auto r = selector::refine_loop(noisy, std::move(model), cfg.selector);
      write_conll(noisy, r.labels, refined_out);
      if (!tagger_out.empty()) write_json(tagger::to_json(r.tagger), tagger_out);
      if (!selector_out.empty()) write_json(selector::to_json(r.params), selector_out);
      nlohmann::json rounds_json = nlohmann::json::array();
      for (const auto& rr : r.rounds) rounds_json.push_back(selector::to_json(rr));
      print_json({{"stage", "refine"}, {"rounds", rounds_json}});
    } else if (*eval_cmd) {
      require(pred_in, "--pred");
      require(gold_in, "--gold");
      auto pred = eval::labels_of(load_conll(pred_in, 0, -1));
      auto gold = eval::labels_of(load_conll(gold_in, 0, -1));
      nlohmann::json j;
      if (mode == "span") {
        eval::PRF p = eval::span_detection_prf(pred, gold);
        std::cout << eval::format_prf("spans", p);
        j = {{"mode", "span"}, {"overall", eval::to_json(p)}};
      } else {
        eval::TypedReport r = eval::evaluate_typed(pred, gold);
        std::cout << eval::format_report(r);
        j = eval::to_json(r);
        j["mode"] = "typed";
      }
      std::cout << j.dump(2) << '\n';
      if (!json_out.empty()) write_json(j, json_out);
    } else if (*pipe_cmd) {
      auto cfg = base_config(common);
      cfg.token_column = common.token_column;
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      if (resume) cfg.resume = true;
      if (!refine_toggle.empty()) cfg.stages.refine = refine_toggle == "on";
      auto result = pipeline::run_pipeline(cfg, &std::cerr);
      const auto& m = result.metrics["stages"];
      if (m.contains("eval")) {
        const auto& e = m["eval"];
        std::cout << "stage    span F1  typed F1\n";
        for (const auto& stage : {"cluster", "hmm", "spans", "dagmm", "refine"}) {
          if (!e["span_detection"].contains(stage)) continue;
          std::cout << std::left << std::setw(8) << stage << ' ' << std::right << std::fixed << std::setprecision(2)
                    << std::setw(7) << 100.0 * e["span_detection"][stage]["f1"].get<double>();
          if (e["typed"].contains(stage))
            std::cout << "  " << std::setw(8) << 100.0 * e["typed"][stage]["overall"]["f1"].get<double>();
          std::cout << '\n';
        }
      }
      std::cout << "artifacts in " << cfg.output_dir.string() << '\n';
    } else if (*synth_cmd) {
      if (!common.config.empty()) {
        // Flags given on the command line win over the file.
        auto file = synthetic::synthetic_config_from_json(read_json(common.config));
        if (!synth_cmd->count("--sentences")) file.sentences = sc.sentences;
        if (!synth_cmd->count("--types")) file.types = sc.types;
        if (!synth_cmd->count("--dim")) file.dim = sc.dim;
        if (!synth_cmd->count("--separation")) file.separation = sc.separation;
        if (!synth_cmd->count("--entity-rate")) file.entity_rate = sc.entity_rate;
        if (!synth_cmd->count("--corrupt")) file.corrupt_fraction = sc.corrupt_fraction;
        sc = file;
      }
      if (common.seed_set) sc.seed = common.seed;
      auto data = synthetic::generate(sc);
      synthetic::write(data, synth_out);
      print_json({{"stage", "synth"}, {"sentences", data.corpus.size()}, {"out", synth_out}});
    }
  } catch (const pipeline::StageError& e) {
    std::cerr << "error in stage " << e.what() << '\n';
    return e.exit_code();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kOk;
}
