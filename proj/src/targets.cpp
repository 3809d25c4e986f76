#include "softlabel/targets.hpp"

#include "softlabel/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>

namespace softlabel::targets {

void TargetPolicy::validate() const {
  switch (kind) {
  case PolicyKind::Mixup:
    if (!(mixup_alpha > 0.0) || !std::isfinite(mixup_alpha)) throw ConfigError("mixup alpha must be positive");
    break;
  case PolicyKind::Distill:
    if (!(distill_temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
    if (distill_sources == 0) throw ConfigError("distillation needs at least one source model");
    break;
  default:
    break;
  }
}

bool TargetPolicy::needs_soft_labels() const {
  return kind == PolicyKind::HumanSoft || kind == PolicyKind::SampledHard || kind == PolicyKind::ClassSoft;
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
  case PolicyKind::OneHot: return "one_hot";
  case PolicyKind::HumanSoft: return "human_soft";
  case PolicyKind::SampledHard: return "sampled_hard";
  case PolicyKind::ClassSoft: return "class_soft";
  case PolicyKind::Mixup: return "mixup";
  case PolicyKind::Distill: return "distill";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(const std::string &name) {
  for (auto k : {PolicyKind::OneHot, PolicyKind::HumanSoft, PolicyKind::SampledHard, PolicyKind::ClassSoft,
                 PolicyKind::Mixup, PolicyKind::Distill})
    if (to_string(k) == name) return k;
  throw ConfigError(fmt::format("unknown target policy '{}'", name));
}

std::vector<double> mixup_alpha_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back(static_cast<double>(i) / 10.0);
  return grid;
}

Matrix one_hot_targets(const Labels &hard_labels, std::size_t num_classes) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(hard_labels.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < hard_labels.size(); ++i) {
    const auto y = hard_labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ConfigError(fmt::format("label {} at position {} outside [0, {})", y, i, num_classes));
    out(static_cast<Eigen::Index>(i), y) = 1.0;
  }
  return out;
}

Matrix human_soft_targets(const std::map<std::string, LabelDistribution> &distributions,
                          const std::vector<std::string> &image_ids) {
  std::vector<LabelDistribution> rows;
  rows.reserve(image_ids.size());
  for (const auto &id : image_ids) {
    auto it = distributions.find(id);
    if (it == distributions.end()) throw DataError(fmt::format("no human distribution for image '{}'", id));
    rows.push_back(it->second);
  }
  return to_matrix(rows);
}

Labels sample_hard_targets(const Matrix &distributions, std::uint64_t seed, std::size_t epoch_index) {
  Labels out(static_cast<std::size_t>(distributions.rows()));
  for (Eigen::Index i = 0; i < distributions.rows(); ++i) {
    auto rng = make_engine(seed, {epoch_index, static_cast<std::uint64_t>(i)});
    out[static_cast<std::size_t>(i)] = sample_categorical(row_span(distributions, i), rng);
  }
  return out;
}

ClassLevelTargets class_level_targets(const Matrix &distributions, const Labels &hard_labels, std::size_t num_classes) {
  if (static_cast<std::size_t>(distributions.rows()) != hard_labels.size())
    throw ConfigError("distributions and hard labels differ in length");
  if (static_cast<std::size_t>(distributions.cols()) != num_classes)
    throw ConfigError("distribution width differs from the class count");

  const auto k = static_cast<Eigen::Index>(num_classes);
  Matrix sums = Matrix::Zero(k, k);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < hard_labels.size(); ++i) {
    const auto y = hard_labels[i];
    if (y < 0 || y >= k) throw ConfigError(fmt::format("label {} outside [0, {})", y, num_classes));
    sums.row(y) += distributions.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw DataError(fmt::format("class {} has no examples; its penalty row is undefined", c));
    sums.row(static_cast<Eigen::Index>(c)) /= sums.row(static_cast<Eigen::Index>(c)).sum();
  }

  ClassLevelTargets out;
  out.per_example.resize(distributions.rows(), k);
  for (std::size_t i = 0; i < hard_labels.size(); ++i)
    out.per_example.row(static_cast<Eigen::Index>(i)) = sums.row(hard_labels[i]);
  out.penalty = std::move(sums);
  return out;
}

void write_penalty_matrix(std::ostream &out, const Matrix &penalty, char delimiter) {
  for (Eigen::Index r = 0; r < penalty.rows(); ++r) {
    for (Eigen::Index c = 0; c < penalty.cols(); ++c) {
      if (c) out << delimiter;
      out << fmt::format("{:.17g}", penalty(r, c));
    }
    out << '\n';
  }
}

VirtualExample mix_pair(const Matrix &features, const Matrix &targets, std::size_t i, std::size_t j, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixing weight must lie in [0, 1]");
  const auto ii = static_cast<Eigen::Index>(i);
  const auto jj = static_cast<Eigen::Index>(j);
  VirtualExample v;
  v.lambda = lambda;
  v.first = i;
  v.second = j;
  v.features = lambda * features.row(ii) + (1.0 - lambda) * features.row(jj);
  v.target = lambda * targets.row(ii) + (1.0 - lambda) * targets.row(jj);
  return v;
}

std::vector<VirtualExample> mixup_batch(const Matrix &features, const Matrix &targets, double alpha,
                                        std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  if (features.rows() != targets.rows()) throw ConfigError("features and targets differ in length");
  const auto n = static_cast<std::size_t>(features.rows());
  auto perm_rng = make_engine(seed, {0x7065726dULL});
  const auto partner = seeded_permutation(n, perm_rng);
  std::vector<VirtualExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_engine(seed, {0x6c616dULL, i});
    out.push_back(mix_pair(features, targets, i, partner[i], sample_beta(alpha, alpha, rng)));
  }
  return out;
}

Matrix temperature_scale(const Matrix &probs, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (temperature == 1.0) return probs;
  Matrix logits = probs.cwiseMax(1e-300).array().log().matrix() / temperature;
  return softmax_rows(logits);
}

Matrix distillation_targets(const std::vector<const ClassifierBackend *> &source_models, const Matrix &features,
                            double temperature, std::size_t num_classes) {
  if (source_models.empty()) throw ConfigError("distillation needs at least one source model");
  Matrix sum = Matrix::Zero(features.rows(), static_cast<Eigen::Index>(num_classes));
  for (const auto *model : source_models) {
    if (model->num_classes() != num_classes)
      throw ConfigError(fmt::format("source model predicts {} classes, expected {}", model->num_classes(), num_classes));
    sum += temperature_scale(model->predict_proba(features), temperature);
  }
  return sum / static_cast<double>(source_models.size());
}

// -- providers -------------------------------------------------------------------

FixedTargets::FixedTargets(Matrix features, Matrix targets) : features_(std::move(features)), targets_(std::move(targets)) {
  if (features_.rows() != targets_.rows()) throw ConfigError("features and targets differ in length");
}

Batch FixedTargets::batch(std::size_t, std::size_t, std::span<const std::size_t> indices) const {
  return {gather_rows(features_, indices), gather_rows(targets_, indices)};
}

SampledHardTargets::SampledHardTargets(Matrix features, Matrix distributions, std::uint64_t seed, Resample resample)
    : features_(std::move(features)), dists_(std::move(distributions)), seed_(seed), resample_(resample) {
  if (features_.rows() != dists_.rows()) throw ConfigError("features and distributions differ in length");
}

Batch SampledHardTargets::batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const {
  Batch b;
  b.features = gather_rows(features_, indices);
  b.targets = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), dists_.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    auto rng = resample_ == Resample::PerEpoch ? make_engine(seed_, {epoch, i}) : make_engine(seed_, {epoch, i, step, 1});
    b.targets(static_cast<Eigen::Index>(r), sample_categorical(row_span(dists_, static_cast<Eigen::Index>(i)), rng)) = 1.0;
  }
  return b;
}

MixupTargets::MixupTargets(Matrix features, Matrix targets, double alpha, std::uint64_t seed)
    : features_(std::move(features)), targets_(std::move(targets)), alpha_(alpha), seed_(seed) {
  if (!(alpha_ > 0.0)) throw ConfigError("mixup alpha must be positive");
  if (features_.rows() != targets_.rows()) throw ConfigError("features and targets differ in length");
}

Batch MixupTargets::batch(std::size_t epoch, std::size_t step, std::span<const std::size_t> indices) const {
  const Matrix x = gather_rows(features_, indices);
  const Matrix y = gather_rows(targets_, indices);
  const auto mixed = mixup_batch(x, y, alpha_, derive_seed(seed_, {epoch, step}));
  Batch b;
  b.features.resize(x.rows(), x.cols());
  b.targets.resize(y.rows(), y.cols());
  for (std::size_t r = 0; r < mixed.size(); ++r) {
    b.features.row(static_cast<Eigen::Index>(r)) = mixed[r].features;
    b.targets.row(static_cast<Eigen::Index>(r)) = mixed[r].target;
  }
  return b;
}

std::unique_ptr<TargetProvider> make_provider(const TargetPolicy &policy, const PolicyInputs &in) {
  policy.validate();
  if (!in.features || !in.hard_labels) throw ConfigError("policy inputs need features and hard labels");
  if (policy.needs_soft_labels() && !in.soft_labels)
    throw ConfigError(fmt::format("policy {} needs soft labels", to_string(policy.kind)));

  const Matrix &x = *in.features;
  switch (policy.kind) {
  case PolicyKind::OneHot:
    return std::make_unique<FixedTargets>(x, one_hot_targets(*in.hard_labels, in.num_classes));
  case PolicyKind::HumanSoft:
    return std::make_unique<FixedTargets>(x, *in.soft_labels);
  case PolicyKind::SampledHard:
    return std::make_unique<SampledHardTargets>(x, *in.soft_labels, in.seed, policy.resample);
  case PolicyKind::ClassSoft:
    return std::make_unique<FixedTargets>(
        x, class_level_targets(*in.soft_labels, *in.hard_labels, in.num_classes).per_example);
  case PolicyKind::Mixup:
    return std::make_unique<MixupTargets>(x, one_hot_targets(*in.hard_labels, in.num_classes), policy.mixup_alpha,
                                          in.seed);
  case PolicyKind::Distill:
    return std::make_unique<FixedTargets>(
        x, distillation_targets(in.distill_sources, x, policy.distill_temperature, in.num_classes));
  }
  throw ConfigError("unhandled policy kind");
}

} // namespace softlabel::targets
