#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"

/// Exact-match span scoring and cluster-to-type matching.
namespace embner::eval {

using LabelSeqs = std::vector<std::vector<std::string>>;

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t matched = 0;
  std::int64_t predicted = 0;
  std::int64_t gold = 0;
};

/// P = matched / predicted and R = matched / gold, each 0 when its denominator is 0.
PRF make_prf(std::int64_t matched, std::int64_t predicted, std::int64_t gold);

/// Boundary-exact span matches between predicted components (rows) and gold
/// types (columns).
struct ConfusionCounts {
  std::vector<std::string> components;  // sorted
  std::vector<std::string> types;       // sorted
  Matrix counts;                        // components x types
  std::int64_t predicted_total = 0;
  std::int64_t gold_total = 0;
};

/// `components`, when given, fixes the row set so that components that never
/// appear in `predicted` still take part in matching.
ConfusionCounts confusion(const LabelSeqs& predicted, const LabelSeqs& gold,
                          const std::vector<std::string>& components = {});

/// Maximum-weight matching that pairs min(rows, cols) rows with distinct
/// columns; result[row] = column, or -1 for a row left unpaired.
std::vector<int> max_assignment(const Matrix& weights);

/// One-to-one component -> type mapping maximizing matched spans. With more
/// components than types the surplus components stay unmapped.
std::map<std::string, std::string> match_components_to_types(const ConfusionCounts& counts);

struct TypedReport {
  PRF overall;
  std::map<std::string, PRF> per_type;  // keyed by gold type
  std::map<std::string, std::string> mapping;
  std::vector<std::string> notes;
};

/// A predicted span is correct when its boundaries and its mapped type equal a
/// gold span. Types absent from `mapping` are compared unchanged.
TypedReport span_prf(const LabelSeqs& predicted, const LabelSeqs& gold,
                     const std::map<std::string, std::string>& mapping);

/// Type-blind boundary matching.
PRF span_detection_prf(const LabelSeqs& predicted, const LabelSeqs& gold);

/// span_prf after matching components to types on these same sentences. When
/// every predicted type is already a gold type the identity mapping is used.
/// Unmapped components keep their own names, so their spans never match.
TypedReport evaluate_typed(const LabelSeqs& predicted, const LabelSeqs& gold,
                           const std::vector<std::string>& components = {});

LabelSeqs labels_of(const Corpus& corpus);

nlohmann::json to_json(const PRF& prf);
nlohmann::json to_json(const TypedReport& report);
nlohmann::json to_json(const ConfusionCounts& counts);

std::string format_prf(const std::string& name, const PRF& prf);
std::string format_report(const TypedReport& report);

}  // namespace embner::eval
