#include "embner/eval.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <set>

#include "embner/error.hpp"
#include "embner/iob.hpp"

namespace embner::eval {

namespace {

void check_shapes(const LabelSeqs& predicted, const LabelSeqs& gold) {
  if (predicted.size() != gold.size())
    throw ValidationError("eval: " + std::to_string(predicted.size()) + " predicted sentences but " +
                          std::to_string(gold.size()) + " gold sentences");
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (predicted[i].size() != gold[i].size())
      throw ValidationError("eval: sentence " + std::to_string(i) + " has " + std::to_string(predicted[i].size()) +
                            " predicted labels but " + std::to_string(gold[i].size()) + " gold labels");
}

struct Boundary {
  int start, end;
  friend auto operator<=>(const Boundary&, const Boundary&) = default;
};

std::map<Boundary, std::string> by_boundary(const std::vector<std::string>& labels) {
  std::map<Boundary, std::string> out;
  for (const auto& c : chunks(labels)) out.emplace(Boundary{c.start, c.end}, c.type);
  return out;
}

}  // namespace

PRF make_prf(std::int64_t matched, std::int64_t predicted, std::int64_t gold) {
  PRF p;
  p.matched = matched;
  p.predicted = predicted;
  p.gold = gold;
  p.precision = predicted > 0 ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0;
  p.recall = gold > 0 ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0;
  p.f1 = p.precision + p.recall > 0 ? 2 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
  return p;
}

ConfusionCounts confusion(const LabelSeqs& predicted, const LabelSeqs& gold,
                          const std::vector<std::string>& components) {
  check_shapes(predicted, gold);
  std::set<std::string> comps(components.begin(), components.end()), types;
  std::map<std::pair<std::string, std::string>, std::int64_t> pairs;
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto p = by_boundary(predicted[i]);
    auto g = by_boundary(gold[i]);
    for (const auto& [b, t] : p) comps.insert(t);
    for (const auto& [b, t] : g) types.insert(t);
    c.predicted_total += static_cast<std::int64_t>(p.size());
    c.gold_total += static_cast<std::int64_t>(g.size());
    for (const auto& [b, t] : p)
      if (auto it = g.find(b); it != g.end()) ++pairs[{t, it->second}];
  }
  if (!components.empty() && comps.size() != std::set<std::string>(components.begin(), components.end()).size())
    throw ValidationError("eval: predicted labels use types outside the given components");
  c.components.assign(comps.begin(), comps.end());
  c.types.assign(types.begin(), types.end());
  c.counts = Matrix::Zero(static_cast<Eigen::Index>(c.components.size()), static_cast<Eigen::Index>(c.types.size()));
  for (const auto& [key, n] : pairs) {
    auto r = std::lower_bound(c.components.begin(), c.components.end(), key.first) - c.components.begin();
    auto col = std::lower_bound(c.types.begin(), c.types.end(), key.second) - c.types.begin();
    c.counts(r, col) = static_cast<double>(n);
  }
  return c;
}

std::vector<int> max_assignment(const Matrix& input) {
  const int rows = static_cast<int>(input.rows()), cols = static_cast<int>(input.cols());
  const int n = std::max(rows, cols);
  if (n == 0 || rows == 0) return std::vector<int>(static_cast<std::size_t>(rows), -1);
  // Zero padding to a square matrix; pairs in the padding are reported as -1.
  Matrix weights = Matrix::Zero(n, n);
  weights.topLeftCorner(rows, cols) = input;
  // Shortest augmenting path Hungarian method on cost = max - weight, with
  // 1-based potentials u (rows) and v (columns).
  const double top = weights.maxCoeff();
  auto cost = [&](int i, int j) { return top - weights(i - 1, j - 1); };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);  // match[col] = row
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] - 1 < rows && j - 1 < cols) result[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  return result;
}

std::map<std::string, std::string> match_components_to_types(const ConfusionCounts& counts) {
  std::vector<int> assigned = max_assignment(counts.counts);
  std::map<std::string, std::string> mapping;
  for (std::size_t i = 0; i < assigned.size(); ++i)
    if (assigned[i] >= 0) mapping[counts.components[i]] = counts.types[static_cast<std::size_t>(assigned[i])];
  return mapping;
}

TypedReport span_prf(const LabelSeqs& predicted, const LabelSeqs& gold,
                     const std::map<std::string, std::string>& mapping) {
  check_shapes(predicted, gold);
  auto mapped = [&](const std::string& t) {
    auto it = mapping.find(t);
    return it == mapping.end() ? t : it->second;
  };
  std::map<std::string, std::array<std::int64_t, 3>> per;  // matched, predicted, gold
  std::int64_t matched = 0, npred = 0, ngold = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = by_boundary(gold[i]);
    for (const auto& [b, t] : g) ++per[t][2];
    ngold += static_cast<std::int64_t>(g.size());
    for (const auto& c : chunks(predicted[i])) {
      const std::string t = mapped(c.type);
      ++per[t][1];
      ++npred;
      if (auto it = g.find(Boundary{c.start, c.end}); it != g.end() && it->second == t) {
        ++per[t][0];
        ++matched;
      }
    }
  }
  TypedReport r;
  r.overall = make_prf(matched, npred, ngold);
  for (const auto& [t, n] : per) r.per_type[t] = make_prf(n[0], n[1], n[2]);
  r.mapping = mapping;
  if (npred == 0) r.notes.push_back("no predicted spans; precision set to 0");
  if (ngold == 0) r.notes.push_back("no gold spans; recall set to 0");
  return r;
}

PRF span_detection_prf(const LabelSeqs& predicted, const LabelSeqs& gold) {
  check_shapes(predicted, gold);
  std::int64_t matched = 0, npred = 0, ngold = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto p = by_boundary(predicted[i]);
    auto g = by_boundary(gold[i]);
    npred += static_cast<std::int64_t>(p.size());
    ngold += static_cast<std::int64_t>(g.size());
    for (const auto& [b, t] : p) matched += g.count(b) ? 1 : 0;
  }
  return make_prf(matched, npred, ngold);
}

TypedReport evaluate_typed(const LabelSeqs& predicted, const LabelSeqs& gold,
                           const std::vector<std::string>& components) {
  ConfusionCounts c = confusion(predicted, gold, components);
  const bool named = std::all_of(c.components.begin(), c.components.end(), [&](const std::string& t) {
    return std::binary_search(c.types.begin(), c.types.end(), t);
  });
  std::map<std::string, std::string> mapping;
  if (named) {
    for (const auto& t : c.components) mapping[t] = t;
  } else {
    mapping = match_components_to_types(c);
  }
  TypedReport r = span_prf(predicted, gold, mapping);
  for (const auto& comp : c.components)
    if (!mapping.count(comp)) r.notes.push_back("component " + comp + " has no gold type; its spans count as errors");
  return r;
}

LabelSeqs labels_of(const Corpus& corpus) {
  LabelSeqs out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) {
    if (s.labels.size() != s.tokens.size()) throw ValidationError("eval: corpus has no labels");
    out.push_back(s.labels);
  }
  return out;
}

nlohmann::json to_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
          {"matched", p.matched},     {"predicted", p.predicted}, {"gold", p.gold}};
}

nlohmann::json to_json(const TypedReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [t, p] : r.per_type) per[t] = to_json(p);
  return {{"overall", to_json(r.overall)}, {"per_type", per}, {"mapping", r.mapping}, {"notes", r.notes}};
}

nlohmann::json to_json(const ConfusionCounts& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < c.counts.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < c.counts.cols(); ++j) row.push_back(static_cast<std::int64_t>(c.counts(i, j)));
    rows.push_back(row);
  }
  return {{"components", c.components}, {"types", c.types}, {"counts", rows},
          {"predicted_total", c.predicted_total}, {"gold_total", c.gold_total}};
}

std::string format_prf(const std::string& name, const PRF& p) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s precision %6.2f  recall %6.2f  F1 %6.2f  (%lld/%lld/%lld)", name.c_str(),
                100 * p.precision, 100 * p.recall, 100 * p.f1, static_cast<long long>(p.matched),
                static_cast<long long>(p.predicted), static_cast<long long>(p.gold));
  return buf;
}

std::string format_report(const TypedReport& r) {
  std::string out = format_prf("overall", r.overall) + "\n";
  for (const auto& [t, p] : r.per_type) out += format_prf(t, p) + "\n";
  bool identity = true;
  for (const auto& [from, to] : r.mapping) identity = identity && from == to;
  if (!identity) {
    out += "mapping:";
    for (const auto& [from, to] : r.mapping) out += " " + from + "->" + to;
    out += "\n";
  }
  for (const auto& n : r.notes) out += "note: " + n + "\n";
  return out;
}

}  // namespace embner::eval
