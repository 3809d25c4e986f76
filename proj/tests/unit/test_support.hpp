#pragma once

#include "softlabel/core.hpp"

#include <cmath>
#include <random>

namespace softlabel::test {

// Random distribution with a random number of exact zeros.
inline RowVector random_distribution(std::size_t k, std::mt19937_64 &rng, bool allow_zeros = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowVector p(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) p(static_cast<Eigen::Index>(c)) = u(rng);
  if (allow_zeros)
    for (std::size_t c = 0; c < k; ++c)
      if (u(rng) < 0.3) p(static_cast<Eigen::Index>(c)) = 0.0;
  if (p.sum() == 0.0) p(0) = 1.0;
  return p / p.sum();
}

inline Matrix random_distributions(std::size_t n, std::size_t k, std::mt19937_64 &rng, bool allow_zeros = true) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) m.row(static_cast<Eigen::Index>(i)) = random_distribution(k, rng, allow_zeros);
  return m;
}

inline Matrix random_features(std::size_t n, std::size_t d, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Labels random_labels(std::size_t n, std::size_t k, std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(k) - 1);
  Labels y(n);
  for (auto &v : y) v = u(rng);
  return y;
}

} // namespace softlabel::test

#include "softlabel/model.hpp"

namespace softlabel::test {

// Backend that predicts the same distribution for every input.
class ConstantBackend final : public ClassifierBackend {
public:
  ConstantBackend(std::size_t inputs, RowVector probs) : inputs_(inputs), probs_(std::move(probs)) {}
  [[nodiscard]] std::size_t input_dim() const override { return inputs_; }
  [[nodiscard]] std::size_t num_classes() const override { return static_cast<std::size_t>(probs_.size()); }
  [[nodiscard]] Matrix predict_proba(const Matrix &x) const override {
    Matrix p(x.rows(), probs_.size());
    for (Eigen::Index i = 0; i < x.rows(); ++i) p.row(i) = probs_;
    return p;
  }
  [[nodiscard]] Matrix loss_input_gradient(const Matrix &x, const Matrix &) const override {
    return Matrix::Zero(x.rows(), x.cols());
  }
  double fit_step(const Matrix &, const Matrix &, double) override { return 0.0; }
  void reset_optimizer(OptimizerKind) override {}
  [[nodiscard]] std::vector<double> snapshot() const override { return {}; }
  void restore(std::span<const double>) override {}
  [[nodiscard]] std::unique_ptr<ClassifierBackend> clone() const override {
    return std::make_unique<ConstantBackend>(*this);
  }

private:
  std::size_t inputs_;
  RowVector probs_;
};

} // namespace softlabel::test
