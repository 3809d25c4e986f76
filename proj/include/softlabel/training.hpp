#pragma once

#include "softlabel/core.hpp"
#include "softlabel/metrics.hpp"
#include "softlabel/model.hpp"
#include "softlabel/targets.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace softlabel::training {

struct TrainConfig {
  std::size_t epochs = 150;
  double learning_rate = 0.1;
  std::size_t batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  targets::TargetPolicy policy;

  void validate() const;
};

/// Learning rates searched when training from scratch.
[[nodiscard]] std::vector<double> default_training_rates();
/// Learning rates searched when fine-tuning a pretrained model.
[[nodiscard]] std::vector<double> default_finetune_rates();

struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::size_t> assignments; ///< example index -> fold id

  [[nodiscard]] std::vector<std::size_t> holdout(std::size_t fold) const;
  [[nodiscard]] std::vector<std::size_t> training(std::size_t fold) const;
};

/// Seeded permutation cut into k contiguous chunks whose sizes differ by at most one.
[[nodiscard]] FoldSplit kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct TrainResult {
  std::vector<double> history; ///< mean train loss per epoch
};

/**
 * Mini-batch crossentropy minimisation for config.epochs epochs. Example
 * order is reshuffled each epoch from stream (seed, epoch). The optimiser is
 * reset before the first step.
 */
TrainResult train(ClassifierBackend &backend, const targets::TargetProvider &provider, const TrainConfig &config);

struct FineTuneResult {
  std::unique_ptr<ClassifierBackend> model;
  std::vector<double> history;
};

/// Trains a copy of `pretrained` with a fresh optimiser; `pretrained` is untouched.
[[nodiscard]] FineTuneResult fine_tune(const ClassifierBackend &pretrained, const targets::TargetProvider &provider,
                                       const TrainConfig &config);

void write_history(std::ostream &out, const std::vector<double> &history);

using BackendFactory = std::function<std::unique_ptr<ClassifierBackend>(std::uint64_t seed)>;

struct ValidationSet {
  const Matrix *features = nullptr;
  const Matrix *targets = nullptr;
};

struct GridSearchResult {
  double best_rate = 0.0;
  std::vector<std::pair<double, double>> validation_ce; ///< (rate, CE); CE is NaN when training diverged
};

/**
 * Trains one model per candidate rate and keeps the rate with the lowest
 * validation crossentropy (ties go to the larger rate). When `pretrained` is
 * set every candidate fine-tunes a copy of it.
 */
[[nodiscard]] GridSearchResult grid_search_lr(const BackendFactory &factory, const targets::TargetProvider &provider,
                                              const std::vector<double> &candidate_rates,
                                              const TrainConfig &config_template, const ValidationSet &validation,
                                              const ClassifierBackend *pretrained = nullptr);

/// A labelled evaluation set used by cross_validated_run.
struct LabelledData {
  const Matrix *features = nullptr;
  const Labels *hard_labels = nullptr;
  const Matrix *soft_labels = nullptr; ///< optional
};

struct FoldOutcome {
  std::size_t fold = 0;
  std::vector<std::size_t> holdout_indices;
  Matrix holdout_predictions;
  metrics::EvalReport report;
  std::vector<double> history;
  std::unique_ptr<ClassifierBackend> model;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0; ///< sample standard deviation; 0 for a single value
  std::size_t count = 0;
};

[[nodiscard]] Aggregate aggregate(const std::vector<double> &values);

struct CrossValResult {
  std::vector<FoldOutcome> folds;
  Aggregate top1_accuracy;
  Aggregate crossentropy_vs_hard;
  std::optional<Aggregate> crossentropy_vs_soft;
};

struct CrossValOptions {
  std::size_t k = 10;
  /// Fine-tune from this model instead of training fresh ones.
  const ClassifierBackend *pretrained = nullptr;
  std::vector<const ClassifierBackend *> distill_sources;
  metrics::SbaMode sba_mode = metrics::SbaMode::SecondRankMatch;
  /// Called after each fold; lets callers persist or evaluate fold models.
  std::function<void(const FoldOutcome &)> on_fold;
};

/// Trains and evaluates a single fold of `split`.
[[nodiscard]] FoldOutcome run_fold(const BackendFactory &factory, const LabelledData &data, const FoldSplit &split,
                                   std::size_t fold, const TrainConfig &config, const CrossValOptions &options);

/**
 * Trains one model per fold on the other k-1 folds and evaluates it on its
 * holdout fold. Fold f uses seed stream (config.seed, f).
 */
[[nodiscard]] CrossValResult cross_validated_run(const BackendFactory &factory, const LabelledData &data,
                                                 const TrainConfig &config, const CrossValOptions &options);

/// Training seed of fold `fold` under base seed `seed`.
[[nodiscard]] std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

} // namespace softlabel::training
