#include "softlabel/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace softlabel::training {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  policy.validate();
}

std::vector<double> default_training_rates() { return {0.2, 0.1, 0.01, 0.001}; }
std::vector<double> default_finetune_rates() { return {0.1, 0.01, 0.001}; }

std::vector<std::size_t> FoldSplit::holdout(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldSplit::training(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != fold) out.push_back(i);
  return out;
}

FoldSplit kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold split needs k >= 2");
  if (k > n) throw ConfigError(fmt::format("cannot split {} examples into {} folds", n, k));
  auto rng = make_engine(seed, {0x666f6c64ULL});
  const auto perm = seeded_permutation(n, rng);
  FoldSplit split;
  split.k = k;
  split.assignments.resize(n);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) split.assignments[perm[pos++]] = f;
  }
  return split;
}

TrainResult train(ClassifierBackend &backend, const targets::TargetProvider &provider, const TrainConfig &config) {
  config.validate();
  if (provider.num_classes() != backend.num_classes())
    throw ConfigError(fmt::format("targets have {} classes, model has {}", provider.num_classes(), backend.num_classes()));
  backend.reset_optimizer(config.optimizer);

  TrainResult result;
  result.history.reserve(config.epochs);
  const std::size_t n = provider.size();
  if (n == 0) throw ConfigError("training set is empty");
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto rng = make_engine(config.seed, {0x7368756666ULL, epoch});
    const auto order = seeded_permutation(n, rng);
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto batch = provider.batch(epoch, step, idx);
      const double loss = backend.fit_step(batch.features, batch.targets, config.learning_rate);
      if (!std::isfinite(loss))
        throw NumericError(fmt::format("non-finite training loss at epoch {}, batch {}", epoch, step));
      loss_sum += loss * static_cast<double>(end - start);
    }
    result.history.push_back(loss_sum / static_cast<double>(n));
  }
  return result;
}

FineTuneResult fine_tune(const ClassifierBackend &pretrained, const targets::TargetProvider &provider,
                         const TrainConfig &config) {
  FineTuneResult out;
  out.model = pretrained.clone();
  out.history = train(*out.model, provider, config).history;
  return out;
}

void write_history(std::ostream &out, const std::vector<double> &history) {
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) out << e << ',' << fmt::format("{:.17g}", history[e]) << '\n';
}

GridSearchResult grid_search_lr(const BackendFactory &factory, const targets::TargetProvider &provider,
                                const std::vector<double> &candidate_rates, const TrainConfig &config_template,
                                const ValidationSet &validation, const ClassifierBackend *pretrained) {
  if (candidate_rates.empty()) throw ConfigError("grid search needs at least one learning rate");
  if (!validation.features || !validation.targets) throw ConfigError("grid search needs a validation set");

  GridSearchResult result;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidate_rates.size(); ++i) {
    TrainConfig cfg = config_template;
    cfg.learning_rate = candidate_rates[i];
    double ce = std::numeric_limits<double>::quiet_NaN();
    try {
      auto model = pretrained ? pretrained->clone() : factory(config_template.seed);
      train(*model, provider, cfg);
      const Matrix pred = model->predict_proba(*validation.features);
      if (pred.allFinite()) ce = metrics::cross_entropy(pred, *validation.targets);
    } catch (const NumericError &) {
      // diverged: leave NaN
    }
    result.validation_ce.emplace_back(candidate_rates[i], ce);
    if (!std::isfinite(ce)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const double best_ce = result.validation_ce[*best].second;
    if (ce < best_ce || (ce == best_ce && candidate_rates[i] > candidate_rates[*best])) best = i;
  }
  if (!best) {
    std::string rates;
    for (double r : candidate_rates) rates += fmt::format("{}{}", rates.empty() ? "" : ", ", r);
    throw NumericError(fmt::format("every candidate learning rate diverged: {}", rates));
  }
  result.best_rate = candidate_rates[*best];
  return result;
}

Aggregate aggregate(const std::vector<double> &values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return derive_seed(seed, {0x666f6c64ULL, fold}); }

FoldOutcome run_fold(const BackendFactory &factory, const LabelledData &data, const FoldSplit &split, std::size_t fold,
                     const TrainConfig &config, const CrossValOptions &options) {
  if (!data.features || !data.hard_labels) throw ConfigError("cross-validation needs features and hard labels");
  const auto train_idx = split.training(fold);
  FoldOutcome out;
  out.fold = fold;
  out.holdout_indices = split.holdout(fold);

  const Matrix x_train = gather_rows(*data.features, train_idx);
  const Labels y_train = gather(*data.hard_labels, train_idx);
  std::optional<Matrix> soft_train;
  if (data.soft_labels) soft_train = gather_rows(*data.soft_labels, train_idx);

  TrainConfig cfg = config;
  cfg.seed = fold_seed(config.seed, fold);

  auto model = options.pretrained ? options.pretrained->clone() : factory(cfg.seed);
  targets::PolicyInputs inputs;
  inputs.features = &x_train;
  inputs.hard_labels = &y_train;
  inputs.soft_labels = soft_train ? &*soft_train : nullptr;
  inputs.distill_sources = options.distill_sources;
  inputs.num_classes = model->num_classes();
  inputs.seed = derive_seed(cfg.seed, {0x74617267ULL});
  const auto provider = targets::make_provider(cfg.policy, inputs);

  out.history = train(*model, *provider, cfg).history;

  const Matrix x_hold = gather_rows(*data.features, out.holdout_indices);
  const Labels y_hold = gather(*data.hard_labels, out.holdout_indices);
  std::optional<Matrix> soft_hold;
  if (data.soft_labels) soft_hold = gather_rows(*data.soft_labels, out.holdout_indices);
  out.holdout_predictions = model->predict_proba(x_hold);
  out.report = metrics::evaluate_predictions(fmt::format("holdout_fold{}", fold), out.holdout_predictions, y_hold,
                                             soft_hold ? &*soft_hold : nullptr, options.sba_mode);
  out.model = std::move(model);
  return out;
}

CrossValResult cross_validated_run(const BackendFactory &factory, const LabelledData &data, const TrainConfig &config,
                                   const CrossValOptions &options) {
  if (!data.features || !data.hard_labels) throw ConfigError("cross-validation needs features and hard labels");
  const auto split = kfold_split(data.hard_labels->size(), options.k, config.seed);
  CrossValResult result;
  std::vector<double> acc, ce_hard, ce_soft;
  for (std::size_t f = 0; f < options.k; ++f) {
    auto outcome = run_fold(factory, data, split, f, config, options);
    if (options.on_fold) options.on_fold(outcome);
    acc.push_back(outcome.report.top1_accuracy);
    ce_hard.push_back(outcome.report.crossentropy_vs_hard);
    if (outcome.report.crossentropy_vs_soft) ce_soft.push_back(*outcome.report.crossentropy_vs_soft);
    result.folds.push_back(std::move(outcome));
  }
  result.top1_accuracy = aggregate(acc);
  result.crossentropy_vs_hard = aggregate(ce_hard);
  if (!ce_soft.empty()) result.crossentropy_vs_soft = aggregate(ce_soft);
  return result;
}

} // namespace softlabel::training
