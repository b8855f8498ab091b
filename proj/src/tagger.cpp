#include "embner/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "embner/crf.hpp"
#include "embner/error.hpp"
#include "embner/iob.hpp"
#include "embner/json_io.hpp"

namespace embner::tagger {

namespace {

LstmParams make_lstm(int in, int hidden, std::mt19937_64& rng) {
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.block(0, hidden, 1, hidden).setOnes();  // forget gate
  return LstmParams{ad::Parameter(ad::glorot(in + hidden, 4 * hidden, rng)), ad::Parameter(std::move(b))};
}

ad::Var dropout(ad::Graph& g, ad::Var x, double p, std::mt19937_64* rng) {
  if (!rng || p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return ad::mul(x, g.constant(std::move(mask)));
}

std::vector<int> char_ids(const TaggerModel& m, const std::string& token) {
  std::vector<int> ids;
  for (unsigned char c : token) ids.push_back(m.char_index[c]);
  if (ids.empty()) ids.push_back(0);
  return ids;
}

nlohmann::json lstm_json(const LstmParams& p) {
  return {{"W", matrix_to_json(p.W.value)}, {"b", matrix_to_json(p.b.value)}};
}

LstmParams lstm_from(const nlohmann::json& j) {
  return LstmParams{ad::Parameter(matrix_from_json(j.at("W"))), ad::Parameter(matrix_from_json(j.at("b")))};
}

}  // namespace

Tagset::Tagset(std::vector<std::string> types) : types_(std::move(types)) {
  std::set<std::string> seen;
  for (const auto& t : types_) {
    if (t.empty()) throw ValidationError("tagset: empty type name");
    if (!seen.insert(t).second) throw ValidationError("tagset: duplicate type " + t);
  }
}

Tagset Tagset::components(int k) {
  if (k <= 0) throw ValidationError("tagset: need at least one component");
  std::vector<std::string> types;
  for (int i = 0; i < k; ++i) types.push_back("C" + std::to_string(i));
  return Tagset(std::move(types));
}

Tagset Tagset::from_corpus(const Corpus& corpus) {
  std::set<std::string> types;
  for (const auto& s : corpus.sentences)
    for (const auto& l : s.labels) {
      TypedLabel t = parse_typed(l);
      if (t.prefix != Iob::O) types.insert(t.type);
    }
  if (types.empty()) throw ValidationError("tagset: corpus has no typed entity labels");
  return Tagset(std::vector<std::string>(types.begin(), types.end()));
}

std::string Tagset::label(int index) const {
  if (index < 0 || index >= size()) throw ValidationError("tagset: index " + std::to_string(index) + " out of range");
  if (index == 0) return "O";
  const auto& type = types_[static_cast<std::size_t>((index - 1) / 2)];
  return ((index - 1) % 2 == 0 ? "B-" : "I-") + type;
}

int Tagset::index(std::string_view label) const {
  TypedLabel t = parse_typed(label);
  if (t.prefix == Iob::O) return 0;
  auto it = std::find(types_.begin(), types_.end(), t.type);
  if (it == types_.end()) throw ValidationError("tagset: unknown label " + std::string(label));
  const int k = static_cast<int>(it - types_.begin());
  return t.prefix == Iob::B ? 1 + 2 * k : 2 + 2 * k;
}

bool Tagset::allowed(int from, int to) const {
  if (to == start() || from == stop()) return false;
  if (from == start() && to == stop()) return false;
  if (to == stop() || to == 0) return true;
  if ((to - 1) % 2 == 0) return true;  // B-X
  // I-X continues only B-X or I-X of the same type.
  if (from == start() || from == 0) return false;
  return (from - 1) / 2 == (to - 1) / 2;
}

std::vector<int> Tagset::encode(const std::vector<std::string>& labels) const {
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : to_iob2(labels)) out.push_back(index(l));
  return out;
}

std::vector<std::string> Tagset::decode(std::span<const int> tags) const {
  std::vector<std::string> out;
  out.reserve(tags.size());
  for (int t : tags) out.push_back(label(t));
  return out;
}

void TaggerConfig::validate() const {
  if (hidden <= 0) throw ValidationError("tagger: hidden must be positive");
  if (use_chars && (char_dim <= 0 || char_hidden <= 0))
    throw ValidationError("tagger: char_dim and char_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("tagger: dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw ValidationError("tagger: learning_rate must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ValidationError("tagger: decay must be in (0, 1]");
  if (epochs < 0) throw ValidationError("tagger: epochs must be >= 0");
}

nlohmann::json to_json(const TaggerConfig& c) {
  return {{"hidden", c.hidden},   {"use_chars", c.use_chars},         {"char_dim", c.char_dim},
          {"char_hidden", c.char_hidden}, {"dropout", c.dropout}, {"learning_rate", c.learning_rate},
          {"decay", c.decay},     {"clip", c.clip},                   {"epochs", c.epochs},
          {"seed", c.seed}};
}

TaggerConfig tagger_config_from_json(const nlohmann::json& j) {
  TaggerConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.use_chars = j.value("use_chars", c.use_chars);
  c.char_dim = j.value("char_dim", c.char_dim);
  c.char_hidden = j.value("char_hidden", c.char_hidden);
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay = j.value("decay", c.decay);
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

double learning_rate(const TaggerConfig& config, int epoch) {
  return config.learning_rate * std::pow(config.decay, static_cast<double>(epoch));
}

std::vector<ad::Parameter*> TaggerModel::parameters() {
  std::vector<ad::Parameter*> out;
  if (config.use_chars)
    out = {&char_embedding, &char_forward.W, &char_forward.b, &char_backward.W, &char_backward.b};
  for (ad::Parameter* p : {&word_forward.W, &word_forward.b, &word_backward.W, &word_backward.b, &proj_W, &proj_b,
                           &transitions})
    out.push_back(p);
  return out;
}

void TaggerModel::apply_mask() {
  const int n = tagset.size();
  for (int i = 0; i < n + 2; ++i)
    for (int j = 0; j < n + 2; ++j)
      if (!tagset.allowed(i, j)) {
        transitions.value(i, j) = crf::kMasked;
        if (transitions.grad.size() != 0) transitions.grad(i, j) = 0.0;
      }
}

TaggerModel init_tagger(const TaggerConfig& config, const Tagset& tagset,
                        std::shared_ptr<const EmbeddingTable> embeddings, const Corpus& corpus) {
  config.validate();
  if (!embeddings || embeddings->dim() == 0) throw ValidationError("tagger: embeddings are required");
  if (tagset.num_types() == 0) throw ValidationError("tagger: tagset has no types");
  TaggerModel m;
  m.config = config;
  m.tagset = tagset;
  m.embeddings = std::move(embeddings);
  std::mt19937_64 rng(config.seed);
  const int d = static_cast<int>(m.embeddings->dim());
  const int H = config.hidden;
  int in = d;
  if (config.use_chars) {
    std::set<unsigned char> bytes;
    for (const auto& s : corpus.sentences)
      for (const auto& tok : s.tokens)
        for (unsigned char c : tok) bytes.insert(c);
    int next = 1;
    for (unsigned char c : bytes) m.char_index[c] = next++;
    std::normal_distribution<double> nd(0.0, 0.1);
    Matrix ce(next, config.char_dim);
    for (Eigen::Index i = 0; i < ce.size(); ++i) ce.data()[i] = nd(rng);
    m.char_embedding = ad::Parameter(std::move(ce));
    m.char_forward = make_lstm(config.char_dim, config.char_hidden, rng);
    m.char_backward = make_lstm(config.char_dim, config.char_hidden, rng);
    in += 2 * config.char_hidden;
  }
  m.word_forward = make_lstm(in, H, rng);
  m.word_backward = make_lstm(in, H, rng);
  const int n = tagset.size();
  m.proj_W = ad::Parameter(ad::glorot(2 * H, n, rng));
  m.proj_b = ad::Parameter(Matrix::Zero(1, n));
  m.transitions = ad::Parameter(Matrix::Zero(n + 2, n + 2));
  m.apply_mask();
  return m;
}

Encoded encode(ad::Graph& g, TaggerModel& model, const std::vector<std::string>& tokens, std::mt19937_64* rng) {
  const auto l = static_cast<Eigen::Index>(tokens.size());
  if (l == 0) throw ValidationError("tagger: empty sentence");
  const auto& emb = *model.embeddings;
  Matrix words(l, static_cast<Eigen::Index>(emb.dim()));
  for (Eigen::Index t = 0; t < l; ++t) words.row(t) = emb.lookup(tokens[static_cast<std::size_t>(t)]).transpose();
  ad::Var x = g.constant(std::move(words));

  const auto& cfg = model.config;
  if (cfg.use_chars) {
    ad::Var table = g.param(model.char_embedding);
    ad::Var fw = g.param(model.char_forward.W), fb = g.param(model.char_forward.b);
    ad::Var bw = g.param(model.char_backward.W), bb = g.param(model.char_backward.b);
    std::vector<ad::Var> per_word;
    for (const auto& tok : tokens) {
      ad::Var chars = ad::gather_rows(table, char_ids(model, tok));
      ad::Var f = ad::lstm(chars, fw, fb, false);
      ad::Var b = ad::lstm(chars, bw, bb, true);
      per_word.push_back(
          ad::concat_cols({ad::slice(f, f.rows() - 1, 1, 0, cfg.char_hidden), ad::slice(b, 0, 1, 0, cfg.char_hidden)}));
    }
    x = ad::concat_cols({x, ad::concat_rows(per_word)});
  }
  x = dropout(g, x, cfg.dropout, rng);
  ad::Var hf = ad::lstm(x, g.param(model.word_forward.W), g.param(model.word_forward.b), false);
  ad::Var hb = ad::lstm(x, g.param(model.word_backward.W), g.param(model.word_backward.b), true);
  Encoded out;
  out.features = ad::concat_cols({hf, hb});
  ad::Var h = dropout(g, out.features, cfg.dropout, rng);
  out.scores = ad::matmul(h, g.param(model.proj_W)) + g.param(model.proj_b);
  return out;
}

Inference infer(const TaggerModel& model, const std::vector<std::string>& tokens) {
  // Without dropout and without a backward pass the graph only reads the parameters.
  ad::Graph g;
  Encoded e = encode(g, const_cast<TaggerModel&>(model), tokens, nullptr);
  return Inference{e.features.value(), e.scores.value()};
}

std::vector<Example> make_examples(const Corpus& corpus, const Tagset& tagset) {
  if (!corpus.has_labels()) throw ValidationError("tagger: training corpus has no labels");
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.push_back(Example{s.tokens, tagset.encode(s.labels)});
  return out;
}

double train_epoch(TaggerModel& model, std::span<const Example> data, int epoch, std::mt19937_64& rng) {
  if (data.empty()) return 0.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const double lr = learning_rate(model.config, epoch);
  auto params = model.parameters();
  double total = 0.0;
  for (std::size_t idx : order) {
    const Example& ex = data[idx];
    ad::Graph g;
    Encoded enc = encode(g, model, ex.tokens, &rng);
    ad::Var loss = crf::nll(enc.scores, g.param(model.transitions), ex.tags);
    const double value = loss.scalar();
    if (!std::isfinite(value))
      throw NumericError("tagger: non-finite loss on sentence " + std::to_string(idx) + " in epoch " +
                         std::to_string(epoch));
    g.backward(loss);
    model.apply_mask();
    ad::sgd_step(params, lr, model.config.clip);
    model.apply_mask();
    total += value;
  }
  return total / static_cast<double>(data.size());
}

std::vector<double> train(TaggerModel& model, std::span<const Example> data, std::mt19937_64& rng) {
  std::vector<double> losses;
  for (int e = 0; e < model.config.epochs; ++e) losses.push_back(train_epoch(model, data, e, rng));
  return losses;
}

double sentence_log_prob(const TaggerModel& model, const std::vector<std::string>& tokens,
                         std::span<const int> tags) {
  Inference inf = infer(model, tokens);
  const Matrix& T = model.transitions.value;
  return crf::score(inf.scores, T, tags) - crf::log_partition(inf.scores, T);
}

std::vector<int> decode(const TaggerModel& model, const std::vector<std::string>& tokens) {
  return crf::viterbi(infer(model, tokens).scores, model.transitions.value);
}

std::vector<std::vector<std::string>> decode_corpus(const TaggerModel& model, const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.push_back(model.tagset.decode(decode(model, s.tokens)));
  return out;
}

nlohmann::json to_json(const TaggerModel& m) {
  nlohmann::json j;
  j["config"] = to_json(m.config);
  j["types"] = m.tagset.types();
  j["embedding_dim"] = m.embeddings ? m.embeddings->dim() : 0;
  if (m.config.use_chars) {
    std::vector<int> bytes;
    for (int c = 0; c < 256; ++c)
      if (m.char_index[static_cast<std::size_t>(c)] != 0) bytes.push_back(c);
    j["char_bytes"] = bytes;
    j["char_embedding"] = matrix_to_json(m.char_embedding.value);
    j["char_forward"] = lstm_json(m.char_forward);
    j["char_backward"] = lstm_json(m.char_backward);
  }
  j["word_forward"] = lstm_json(m.word_forward);
  j["word_backward"] = lstm_json(m.word_backward);
  j["proj_W"] = matrix_to_json(m.proj_W.value);
  j["proj_b"] = matrix_to_json(m.proj_b.value);
  j["transitions"] = matrix_to_json(m.transitions.value);
  return j;
}

TaggerModel model_from_json(const nlohmann::json& j, std::shared_ptr<const EmbeddingTable> embeddings) {
  TaggerModel m;
  m.config = tagger_config_from_json(j.at("config"));
  m.config.validate();
  m.tagset = Tagset(j.at("types").get<std::vector<std::string>>());
  if (!embeddings || embeddings->dim() != j.at("embedding_dim").get<std::size_t>())
    throw ValidationError("tagger model expects embeddings of dimension " + j.at("embedding_dim").dump());
  m.embeddings = std::move(embeddings);
  if (m.config.use_chars) {
    int next = 1;
    for (int c : j.at("char_bytes").get<std::vector<int>>()) m.char_index[static_cast<std::size_t>(c & 0xff)] = next++;
    m.char_embedding = ad::Parameter(matrix_from_json(j.at("char_embedding")));
    m.char_forward = lstm_from(j.at("char_forward"));
    m.char_backward = lstm_from(j.at("char_backward"));
  }
  m.word_forward = lstm_from(j.at("word_forward"));
  m.word_backward = lstm_from(j.at("word_backward"));
  m.proj_W = ad::Parameter(matrix_from_json(j.at("proj_W")));
  m.proj_b = ad::Parameter(matrix_from_json(j.at("proj_b")));
  m.transitions = ad::Parameter(matrix_from_json(j.at("transitions")));
  const int n = m.tagset.size();
  if (m.transitions.value.rows() != n + 2 || m.proj_W.value.cols() != n)
    throw ValidationError("tagger model: parameter shapes do not match the tagset");
  return m;
}

}  // namespace embner::tagger
