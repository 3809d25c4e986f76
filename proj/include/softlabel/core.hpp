#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace softlabel {

/// Row-major dense matrix; rows are examples.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using ClassIndex = int;
using Labels = std::vector<ClassIndex>;

/// Malformed or inconsistent input data (files, joins, schemas).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during optimisation or attacks.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or parameter values supplied by the caller.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Tolerance on the sum of a probability vector.
inline constexpr double kSumTolerance = 1e-9;

/// Floor applied to predicted probabilities before taking logarithms.
inline constexpr double kLogClamp = 1e-12;

/**
 * A probability vector over K classes together with the number of raw
 * judgments it was estimated from (0 for derived distributions).
 */
struct LabelDistribution {
  std::vector<double> probs;
  std::size_t support_count = 0;

  [[nodiscard]] std::size_t num_classes() const { return probs.size(); }
};

/// True if entries lie in [0,1] and sum to 1 within kSumTolerance.
[[nodiscard]] bool is_valid_distribution(std::span<const double> probs);

/// Throws ConfigError naming `what` unless every row of `rows` is a valid distribution.
void require_distributions(const Matrix &rows, const std::string &what);

/// Index of the largest entry; ties go to the lowest index.
[[nodiscard]] std::size_t argmax(std::span<const double> values);

/// Index of the second-ranked entry under lowest-index tie breaking.
[[nodiscard]] std::size_t second_ranked(std::span<const double> values);

[[nodiscard]] inline std::span<const double> row_span(const Matrix &m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

[[nodiscard]] Matrix to_matrix(const std::vector<LabelDistribution> &dists);
[[nodiscard]] std::vector<LabelDistribution> to_distributions(const Matrix &rows);

/// Gathers the given rows of `m` into a new matrix, in order.
[[nodiscard]] Matrix gather_rows(const Matrix &m, std::span<const std::size_t> rows);

template <typename T>
[[nodiscard]] std::vector<T> gather(const std::vector<T> &v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v.at(i));
  return out;
}

// -- deterministic random streams ------------------------------------------

using Engine = std::mt19937_64;

/// Mixes a seed with stream coordinates into an independent 64-bit seed.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

[[nodiscard]] inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> coords = {}) {
  return Engine(derive_seed(seed, coords));
}

/// Uniform double in [0,1) built from the top 53 bits of one engine draw.
[[nodiscard]] inline double uniform01(Engine &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates permutation of 0..n-1 using uniform01 draws.
[[nodiscard]] std::vector<std::size_t> seeded_permutation(std::size_t n, Engine &rng);

/// Draws from the categorical distribution `probs` by inverse CDF.
[[nodiscard]] ClassIndex sample_categorical(std::span<const double> probs, Engine &rng);

/// Draws from Beta(alpha, beta) through two Gamma variates.
[[nodiscard]] double sample_beta(double alpha, double beta, Engine &rng);

} // namespace softlabel
