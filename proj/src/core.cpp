#include "softlabel/core.hpp"

#include <cmath>
#include <numeric>

namespace softlabel {

bool is_valid_distribution(std::span<const double> probs) {
  if (probs.empty()) return false;
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= kSumTolerance;
}

void require_distributions(const Matrix &rows, const std::string &what) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (!is_valid_distribution(row_span(rows, r)))
      throw ConfigError(what + ": row " + std::to_string(r) + " is not a probability distribution");
  }
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::size_t second_ranked(std::span<const double> values) {
  const std::size_t first = argmax(values);
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i == first) continue;
    if (values[i] > values[second]) second = i;
  }
  return second;
}

Matrix to_matrix(const std::vector<LabelDistribution> &dists) {
  if (dists.empty()) return Matrix(0, 0);
  const auto k = dists.front().probs.size();
  Matrix out(static_cast<Eigen::Index>(dists.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (dists[i].probs.size() != k) throw ConfigError("to_matrix: inconsistent class counts");
    for (std::size_t c = 0; c < k; ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = dists[i].probs[c];
  }
  return out;
}

std::vector<LabelDistribution> to_distributions(const Matrix &rows) {
  std::vector<LabelDistribution> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    auto s = row_span(rows, r);
    out[static_cast<std::size_t>(r)].probs.assign(s.begin(), s.end());
  }
  return out;
}

Matrix gather_rows(const Matrix &m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(seed);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, Engine &rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    if (j >= i) j = i - 1;
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

ClassIndex sample_categorical(std::span<const double> probs, Engine &rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] <= 0.0) continue;
    last_positive = c;
    cumulative += probs[c];
    if (u < cumulative) return static_cast<ClassIndex>(c);
  }
  // rounding left u above the cumulative sum
  return static_cast<ClassIndex>(last_positive);
}

double sample_beta(double alpha, double beta, Engine &rng) {
  std::gamma_distribution<double> ga(alpha, 1.0);
  std::gamma_distribution<double> gb(beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return uniform01(rng) < alpha / (alpha + beta) ? 1.0 : 0.0;
  return x / (x + y);
}

} // namespace softlabel
