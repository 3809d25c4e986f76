#include "softlabel/metrics.hpp"

#include "softlabel/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <map>
#include <ostream>

namespace softlabel::metrics {

namespace {

void require_same_shape(const Matrix &a, Eigen::Index rows, Eigen::Index cols, const char *what) {
  if (a.rows() != rows || a.cols() != cols)
    throw ConfigError(fmt::format("{}: shape {}x{} does not match {}x{}", what, a.rows(), a.cols(), rows, cols));
}

void require_labels(const Matrix &predictions, const Labels &labels) {
  if (static_cast<std::size_t>(predictions.rows()) != labels.size())
    throw ConfigError(fmt::format("{} predictions but {} labels", predictions.rows(), labels.size()));
  for (auto y : labels)
    if (y < 0 || y >= predictions.cols())
      throw ConfigError(fmt::format("label {} outside [0, {})", y, predictions.cols()));
}

} // namespace

double cross_entropy(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size())
    throw ConfigError(fmt::format("crossentropy: {} predicted classes vs {} target classes", predicted.size(),
                                  target.size()));
  double ce = 0.0;
  for (std::size_t c = 0; c < target.size(); ++c)
    if (target[c] != 0.0) ce -= target[c] * std::log(std::max(predicted[c], kLogClamp));
  return ce;
}

double cross_entropy(const Matrix &predicted, const Matrix &targets) {
  require_same_shape(targets, predicted.rows(), predicted.cols(), "crossentropy targets");
  if (predicted.rows() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index r = 0; r < predicted.rows(); ++r) sum += cross_entropy(row_span(predicted, r), row_span(targets, r));
  return sum / static_cast<double>(predicted.rows());
}

double cross_entropy(const Matrix &predicted, const Labels &hard_labels) {
  require_labels(predicted, hard_labels);
  if (predicted.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < hard_labels.size(); ++i)
    sum -= std::log(std::max(predicted(static_cast<Eigen::Index>(i), hard_labels[i]), kLogClamp));
  return sum / static_cast<double>(hard_labels.size());
}

double top1_accuracy(const Matrix &predictions, const Labels &hard_labels) {
  require_labels(predictions, hard_labels);
  if (hard_labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hard_labels.size(); ++i)
    if (argmax(row_span(predictions, static_cast<Eigen::Index>(i))) == static_cast<std::size_t>(hard_labels[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(hard_labels.size());
}

SbaResult second_best_accuracy(const Matrix &predictions, const Matrix &reference, SbaMode mode) {
  require_same_shape(reference, predictions.rows(), predictions.cols(), "SBA reference");
  SbaResult res;
  if (predictions.cols() < 2) {
    res.excluded = static_cast<std::size_t>(predictions.rows());
    return res;
  }
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < predictions.rows(); ++r) {
    const auto ref = row_span(reference, r);
    const auto pred = row_span(predictions, r);
    std::size_t nonzero = 0;
    for (double p : ref)
      if (p > 0.0) ++nonzero;
    if (nonzero < 2) {
      ++res.excluded;
      continue;
    }
    ++res.included;
    if (mode == SbaMode::SecondRankMatch) {
      if (second_ranked(pred) == second_ranked(ref)) ++hits;
    } else {
      const auto truth = argmax(ref);
      if (argmax(pred) == truth || second_ranked(pred) == truth) ++hits;
    }
  }
  if (res.included > 0) res.accuracy = static_cast<double>(hits) / static_cast<double>(res.included);
  return res;
}

ConfidenceSplit confidence_split(const Matrix &predictions, const Labels &hard_labels) {
  require_labels(predictions, hard_labels);
  double sum_correct = 0.0, sum_incorrect = 0.0;
  std::size_t n_correct = 0, n_incorrect = 0;
  for (std::size_t i = 0; i < hard_labels.size(); ++i) {
    const auto row = row_span(predictions, static_cast<Eigen::Index>(i));
    const auto top = argmax(row);
    if (top == static_cast<std::size_t>(hard_labels[i])) {
      sum_correct += row[top];
      ++n_correct;
    } else {
      sum_incorrect += row[top];
      ++n_incorrect;
    }
  }
  ConfidenceSplit out;
  if (n_correct) out.correct = sum_correct / static_cast<double>(n_correct);
  if (n_incorrect) out.incorrect = sum_incorrect / static_cast<double>(n_incorrect);
  return out;
}

EvalReport evaluate_predictions(const std::string &dataset_name, const Matrix &predictions, const Labels &hard_labels,
                                const Matrix *soft_reference, SbaMode mode) {
  EvalReport r;
  r.dataset_name = dataset_name;
  r.n_examples = hard_labels.size();
  r.top1_accuracy = top1_accuracy(predictions, hard_labels);
  r.crossentropy_vs_hard = cross_entropy(predictions, hard_labels);
  const auto conf = confidence_split(predictions, hard_labels);
  r.mean_confidence_correct = conf.correct;
  r.mean_confidence_incorrect = conf.incorrect;
  if (soft_reference) {
    r.crossentropy_vs_soft = cross_entropy(predictions, *soft_reference);
    const auto sba = second_best_accuracy(predictions, *soft_reference, mode);
    r.sba = sba.accuracy;
    r.sba_excluded = sba.excluded;
  }
  return r;
}

EvalReport evaluate(const ClassifierBackend &model, const std::string &dataset_name, const Matrix &features,
                    const Labels &hard_labels, const Matrix *soft_reference, SbaMode mode) {
  if (soft_reference && static_cast<std::size_t>(soft_reference->cols()) != model.num_classes())
    throw ConfigError("soft reference width differs from the model's class count");
  return evaluate_predictions(dataset_name, model.predict_proba(features), hard_labels, soft_reference, mode);
}

namespace {

std::string fmt_opt(const std::optional<double> &v) { return v ? fmt::format("{:.17g}", *v) : std::string(kAbsent); }

std::optional<double> parse_opt(const std::string &s) {
  if (s == kAbsent) return std::nullopt;
  return std::stod(s);
}

} // namespace

void write_report(std::ostream &out, const EvalReport &r) {
  out << "dataset: " << r.dataset_name << '\n'
      << "n_examples: " << r.n_examples << '\n'
      << "top1_accuracy: " << fmt::format("{:.17g}", r.top1_accuracy) << '\n'
      << "sba: " << fmt_opt(r.sba) << '\n'
      << "sba_excluded: " << r.sba_excluded << '\n'
      << "crossentropy_vs_hard: " << fmt::format("{:.17g}", r.crossentropy_vs_hard) << '\n'
      << "crossentropy_vs_soft: " << fmt_opt(r.crossentropy_vs_soft) << '\n'
      << "mean_confidence_correct: " << fmt_opt(r.mean_confidence_correct) << '\n'
      << "mean_confidence_incorrect: " << fmt_opt(r.mean_confidence_incorrect) << '\n';
}

EvalReport read_report(std::istream &in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    kv[line.substr(0, colon)] = line.substr(colon + 2);
  }
  auto need = [&](const char *key) -> const std::string & {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(fmt::format("report is missing '{}'", key));
    return it->second;
  };
  EvalReport r;
  try {
    r.dataset_name = need("dataset");
    r.n_examples = std::stoull(need("n_examples"));
    r.top1_accuracy = std::stod(need("top1_accuracy"));
    r.sba = parse_opt(need("sba"));
    r.sba_excluded = std::stoull(need("sba_excluded"));
    r.crossentropy_vs_hard = std::stod(need("crossentropy_vs_hard"));
    r.crossentropy_vs_soft = parse_opt(need("crossentropy_vs_soft"));
    r.mean_confidence_correct = parse_opt(need("mean_confidence_correct"));
    r.mean_confidence_incorrect = parse_opt(need("mean_confidence_incorrect"));
  } catch (const std::logic_error &e) {
    throw DataError(fmt::format("malformed report value: {}", e.what()));
  }
  return r;
}

} // namespace softlabel::metrics
