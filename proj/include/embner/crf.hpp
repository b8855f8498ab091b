#pragma once

#include <span>
#include <vector>

#include "embner/data.hpp"
#include "embner/tensor.hpp"

/// Linear-chain CRF over n tags. The transition matrix is (n + 2) x (n + 2)
/// indexed [from, to]; row n is START and column n + 1 is STOP. Emission
/// scores P are l x n.
namespace embner::crf {

/// Score standing in for an impossible transition.
inline constexpr double kMasked = -1e4;

inline int start_index(const Matrix& T) { return static_cast<int>(T.rows()) - 2; }
inline int stop_index(const Matrix& T) { return static_cast<int>(T.rows()) - 1; }

double score(const Matrix& P, const Matrix& T, std::span<const int> y);
double log_partition(const Matrix& P, const Matrix& T);

struct Marginals {
  Matrix unary;        // l x n posterior tag probabilities
  Matrix transitions;  // expected transition counts, shaped like T
  double log_z = 0.0;
};

Marginals marginals(const Matrix& P, const Matrix& T);

/// Highest-scoring path. Ties go to the lower tag index, deciding the last
/// token first and then each backpointer.
std::vector<int> viterbi(const Matrix& P, const Matrix& T);

/// log Z - score(y) as a graph node with the forward-backward gradient.
ad::Var nll(ad::Var P, ad::Var T, std::vector<int> y);

}  // namespace embner::crf
