#pragma once

#include "softlabel/core.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace softlabel {
class ClassifierBackend;
}

namespace softlabel::metrics {

/// -sum_c target[c] * ln(max(predicted[c], kLogClamp)), in nats.
[[nodiscard]] double cross_entropy(std::span<const double> predicted, std::span<const double> target);

/// Mean per-row crossentropy.
[[nodiscard]] double cross_entropy(const Matrix &predicted, const Matrix &targets);

/// Mean crossentropy against one-hot labels.
[[nodiscard]] double cross_entropy(const Matrix &predicted, const Labels &hard_labels);

[[nodiscard]] double top1_accuracy(const Matrix &predictions, const Labels &hard_labels);

enum class SbaMode {
  /// Model's second-ranked class equals the reference's second-ranked class.
  SecondRankMatch,
  /// Reference's top class is among the model's two highest-ranked classes.
  TopTwoContainsTruth,
};

struct SbaResult {
  std::optional<double> accuracy; ///< absent when every example was excluded
  std::size_t included = 0;
  std::size_t excluded = 0; ///< references with fewer than two nonzero entries
};

[[nodiscard]] SbaResult second_best_accuracy(const Matrix &predictions, const Matrix &reference,
                                             SbaMode mode = SbaMode::SecondRankMatch);

struct ConfidenceSplit {
  std::optional<double> correct;
  std::optional<double> incorrect;
};

/// Mean max-probability over correctly and incorrectly classified examples.
[[nodiscard]] ConfidenceSplit confidence_split(const Matrix &predictions, const Labels &hard_labels);

struct EvalReport {
  std::string dataset_name;
  std::size_t n_examples = 0;
  double top1_accuracy = 0.0;
  std::optional<double> sba;
  std::size_t sba_excluded = 0;
  double crossentropy_vs_hard = 0.0;
  std::optional<double> crossentropy_vs_soft;
  std::optional<double> mean_confidence_correct;
  std::optional<double> mean_confidence_incorrect;
};

/// Builds a report from precomputed predictions.
[[nodiscard]] EvalReport evaluate_predictions(const std::string &dataset_name, const Matrix &predictions,
                                              const Labels &hard_labels, const Matrix *soft_reference,
                                              SbaMode mode = SbaMode::SecondRankMatch);

[[nodiscard]] EvalReport evaluate(const ClassifierBackend &model, const std::string &dataset_name,
                                  const Matrix &features, const Labels &hard_labels, const Matrix *soft_reference,
                                  SbaMode mode = SbaMode::SecondRankMatch);

/// Marker printed for absent metrics.
inline constexpr const char *kAbsent = "NA";

/// key: value lines; absent metrics print kAbsent.
void write_report(std::ostream &out, const EvalReport &report);
[[nodiscard]] EvalReport read_report(std::istream &in);

} // namespace softlabel::metrics
