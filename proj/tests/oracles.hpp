#pragma once

// Brute-force reference computations used only by tests. Nothing here calls
// into the recursions being checked.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Calls f on every sequence in {0..states-1}^length.
inline void for_each_path(int length, int states, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> path(static_cast<std::size_t>(length), 0);
  while (true) {
    f(path);
    int pos = length - 1;
    while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == states) path[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
}

/// Gaussian log density via explicit inverse and determinant.
inline double naive_log_gaussian(const Vector& x, const Vector& mu, const Matrix& sigma) {
  Matrix inv = sigma.inverse();
  Vector d = x - mu;
  double quad = d.dot(inv * d);
  return -0.5 * quad - 0.5 * std::log(sigma.determinant()) -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

inline Matrix random_spd(int d, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix a(d, d);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return a * a.transpose() / d + ridge * Matrix::Identity(d, d);
}

inline Vector random_vector(int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

/// Linear-chain CRF score with START = n, STOP = n + 1 in an (n+2)x(n+2) matrix.
inline double crf_path_score(const Matrix& emissions, const Matrix& trans, const std::vector<int>& y) {
  const int n = static_cast<int>(emissions.cols());
  double s = trans(n, y.front()) + trans(y.back(), n + 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += emissions(static_cast<Eigen::Index>(i), y[i]);
    if (i > 0) s += trans(y[i - 1], y[i]);
  }
  return s;
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Best total over all permutations: returns perm with perm[row] = column.
inline std::vector<int> best_permutation(const Matrix& counts) {
  const int k = static_cast<int>(counts.rows());
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::vector<int> best = perm;
  double best_total = -1.0;
  do {
    double total = 0.0;
    for (int i = 0; i < k; ++i) total += counts(i, perm[static_cast<std::size_t>(i)]);
    if (total > best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double permutation_total(const Matrix& counts, const std::vector<int>& perm) {
  double t = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) t += counts(static_cast<Eigen::Index>(i), perm[i]);
  return t;
}

/// Temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("embner_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }
  std::filesystem::path write(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name) << content;
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
