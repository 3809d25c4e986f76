#pragma once

#include "softlabel/core.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace softlabel {
class ClassifierBackend;
}

namespace softlabel::targets {

enum class PolicyKind { OneHot, HumanSoft, SampledHard, ClassSoft, Mixup, Distill };

enum class Resample { PerEpoch, PerStep };

/// How training targets are produced. Only the fields of `kind` are read.
struct TargetPolicy {
  PolicyKind kind = PolicyKind::OneHot;
  double mixup_alpha = 1.0;
  double distill_temperature = 1.0;
  /// Number of pretrained source models averaged for Distill.
  std::size_t distill_sources = 1;
  Resample resample = Resample::PerEpoch;

  /// Throws ConfigError if kind-specific parameters are invalid.
  void validate() const;
  /// True if the policy reads per-example soft reference labels.
  [[nodiscard]] bool needs_soft_labels() const;
};

[[nodiscard]] std::string to_string(PolicyKind kind);
[[nodiscard]] PolicyKind parse_policy_kind(const std::string &name);

/// Mixing coefficients accepted for the mixup baseline search: 0.1, 0.2, ..., 1.0.
[[nodiscard]] std::vector<double> mixup_alpha_grid();

[[nodiscard]] Matrix one_hot_targets(const Labels &hard_labels, std::size_t num_classes);

/// Looks up each id in `distributions`; throws DataError on a missing id.
[[nodiscard]] Matrix human_soft_targets(const std::map<std::string, LabelDistribution> &distributions,
                                        const std::vector<std::string> &image_ids);

/**
 * Draws one class per row of `distributions`. Example i uses the stream
 * (seed, epoch_index, i), so the result is independent of evaluation order.
 */
[[nodiscard]] Labels sample_hard_targets(const Matrix &distributions, std::uint64_t seed, std::size_t epoch_index);

struct ClassLevelTargets {
  Matrix penalty;     ///< K x K; row c is the renormalised sum over examples labelled c.
  Matrix per_example; ///< penalty.row(hard_label) for each example.
};

[[nodiscard]] ClassLevelTargets class_level_targets(const Matrix &distributions, const Labels &hard_labels,
                                                    std::size_t num_classes);

void write_penalty_matrix(std::ostream &out, const Matrix &penalty, char delimiter = ',');

struct VirtualExample {
  RowVector features;
  RowVector target;
  double lambda = 1.0;
  std::size_t first = 0;
  std::size_t second = 0;
};

/// lambda * (x_i, y_i) + (1 - lambda) * (x_j, y_j).
[[nodiscard]] VirtualExample mix_pair(const Matrix &features, const Matrix &targets, std::size_t i, std::size_t j,
                                      double lambda);

/**
 * One virtual example per input row: partner j from a seeded permutation of
 * the batch, lambda ~ Beta(alpha, alpha) from stream (seed, i).
 */
[[nodiscard]] std::vector<VirtualExample> mixup_batch(const Matrix &features, const Matrix &targets, double alpha,
                                                      std::uint64_t seed);

/// softmax(log p / T) per row; T = 1 returns the input unchanged.
[[nodiscard]] Matrix temperature_scale(const Matrix &probs, double temperature);

/// Mean of the temperature-scaled predictions of every source model.
[[nodiscard]] Matrix distillation_targets(const std::vector<const ClassifierBackend *> &source_models,
                                          const Matrix &features, double temperature, std::size_t num_classes);

// -- per-epoch target sources --------------------------------------------------

struct Batch {
  Matrix features;
  Matrix targets;
};

/**
 * Supplies mini-batches of (features, targets) to the training loop. Lazily
 * sampled policies derive every random draw from (seed, epoch, step, example)
 * so batches are reproducible.
 */
class TargetProvider {
public:
  virtual ~TargetProvider() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  [[nodiscard]] virtual std::size_t num_classes() const = 0;
  [[nodiscard]] virtual Batch batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const = 0;
};

/// Constant targets (one-hot, human soft, class-level, distillation).
class FixedTargets final : public TargetProvider {
public:
  FixedTargets(Matrix features, Matrix targets);
  [[nodiscard]] std::size_t size() const override { return static_cast<std::size_t>(features_.rows()); }
  [[nodiscard]] std::size_t num_classes() const override { return static_cast<std::size_t>(targets_.cols()); }
  [[nodiscard]] Batch batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const override;

private:
  Matrix features_;
  Matrix targets_;
};

/// One-hot labels redrawn from soft distributions every epoch (or every step).
class SampledHardTargets final : public TargetProvider {
public:
  SampledHardTargets(Matrix features, Matrix distributions, std::uint64_t seed, Resample resample);
  [[nodiscard]] std::size_t size() const override { return static_cast<std::size_t>(features_.rows()); }
  [[nodiscard]] std::size_t num_classes() const override { return static_cast<std::size_t>(dists_.cols()); }
  [[nodiscard]] Batch batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const override;

private:
  Matrix features_;
  Matrix dists_;
  std::uint64_t seed_;
  Resample resample_;
};

/// Virtual examples mixed within each mini-batch.
class MixupTargets final : public TargetProvider {
public:
  MixupTargets(Matrix features, Matrix targets, double alpha, std::uint64_t seed);
  [[nodiscard]] std::size_t size() const override { return static_cast<std::size_t>(features_.rows()); }
  [[nodiscard]] std::size_t num_classes() const override { return static_cast<std::size_t>(targets_.cols()); }
  [[nodiscard]] Batch batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const override;

private:
  Matrix features_;
  Matrix targets_;
  double alpha_;
  std::uint64_t seed_;
};

/// Inputs from which any policy's targets can be built for one training split.
struct PolicyInputs {
  const Matrix *features = nullptr;
  const Labels *hard_labels = nullptr;
  const Matrix *soft_labels = nullptr; ///< required by HumanSoft, SampledHard, ClassSoft
  std::vector<const ClassifierBackend *> distill_sources;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
};

[[nodiscard]] std::unique_ptr<TargetProvider> make_provider(const TargetPolicy &policy, const PolicyInputs &inputs);

} // namespace softlabel::targets
