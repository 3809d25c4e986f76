#include "softlabel/model.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace softlabel {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(const std::string &name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "gd") return OptimizerKind::GradientDescent;
  throw ConfigError(fmt::format("unknown optimizer '{}'", name));
}

Matrix softmax_rows(const Matrix &logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

} // namespace

ReferenceModel::ReferenceModel(ReferenceModelShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape.inputs == 0 || shape.hidden == 0 || shape.classes < 2)
    throw ConfigError("reference model needs inputs > 0, hidden > 0 and at least two classes");
  params_.assign(parameter_count(), 0.0);

  auto rng = make_engine(seed, {0x6d6f64656cULL});
  const std::size_t n_w1 = shape.hidden * shape.inputs;
  const std::size_t n_w2 = shape.classes * shape.hidden;
  const double limit1 = std::sqrt(6.0 / static_cast<double>(shape.inputs));
  const double limit2 = std::sqrt(6.0 / static_cast<double>(shape.hidden + shape.classes));
  for (std::size_t i = 0; i < n_w1; ++i) params_[i] = (2.0 * uniform01(rng) - 1.0) * limit1;
  const std::size_t w2_off = n_w1 + shape.hidden;
  for (std::size_t i = 0; i < n_w2; ++i) params_[w2_off + i] = (2.0 * uniform01(rng) - 1.0) * limit2;
  reset_optimizer(OptimizerKind::Adam);
}

std::size_t ReferenceModel::parameter_count() const {
  return shape_.hidden * shape_.inputs + shape_.hidden + shape_.classes * shape_.hidden + shape_.classes;
}

ReferenceModel::ConstMatrixMap ReferenceModel::w1() const {
  return {params_.data(), static_cast<Eigen::Index>(shape_.hidden), static_cast<Eigen::Index>(shape_.inputs)};
}
ReferenceModel::ConstVectorMap ReferenceModel::b1() const {
  return {params_.data() + shape_.hidden * shape_.inputs, static_cast<Eigen::Index>(shape_.hidden)};
}
ReferenceModel::ConstMatrixMap ReferenceModel::w2() const {
  return {params_.data() + shape_.hidden * shape_.inputs + shape_.hidden, static_cast<Eigen::Index>(shape_.classes),
          static_cast<Eigen::Index>(shape_.hidden)};
}
ReferenceModel::ConstVectorMap ReferenceModel::b2() const {
  return {params_.data() + parameter_count() - shape_.classes, static_cast<Eigen::Index>(shape_.classes)};
}

void ReferenceModel::check_batch(const Matrix &features, const Matrix *targets) const {
  if (static_cast<std::size_t>(features.cols()) != shape_.inputs)
    throw ConfigError(fmt::format("model expects {} input features, got {}", shape_.inputs, features.cols()));
  if (targets) {
    if (targets->rows() != features.rows())
      throw ConfigError(fmt::format("{} feature rows but {} target rows", features.rows(), targets->rows()));
    if (static_cast<std::size_t>(targets->cols()) != shape_.classes)
      throw ConfigError(fmt::format("model has {} classes, targets have {}", shape_.classes, targets->cols()));
  }
}

ReferenceModel::Forward ReferenceModel::forward(const Matrix &features) const {
  Forward f;
  f.pre = features * w1().transpose();
  f.pre.rowwise() += b1().transpose();
  f.hidden = f.pre.cwiseMax(0.0);
  Matrix logits = f.hidden * w2().transpose();
  logits.rowwise() += b2().transpose();
  f.probs = softmax_rows(logits);
  return f;
}

Matrix ReferenceModel::predict_proba(const Matrix &features) const {
  check_batch(features, nullptr);
  return forward(features).probs;
}

Matrix ReferenceModel::loss_input_gradient(const Matrix &features, const Matrix &targets) const {
  check_batch(features, &targets);
  const Forward f = forward(features);
  // dL/dlogits = p * sum(t) - t
  Matrix d_logits = f.probs.array().colwise() * targets.rowwise().sum().array();
  d_logits -= targets;
  Matrix d_hidden = d_logits * w2();
  d_hidden = d_hidden.cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
  return d_hidden * w1();
}

double ReferenceModel::fit_step(const Matrix &features, const Matrix &targets, double learning_rate) {
  check_batch(features, &targets);
  if (features.rows() == 0) return 0.0;
  const Forward f = forward(features);
  const auto batch = static_cast<double>(features.rows());

  double loss = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r)
    for (Eigen::Index c = 0; c < targets.cols(); ++c)
      if (targets(r, c) != 0.0) loss -= targets(r, c) * std::log(std::max(f.probs(r, c), 1e-300));
  loss /= batch;

  Matrix d_logits = f.probs.array().colwise() * targets.rowwise().sum().array();
  d_logits -= targets;
  d_logits /= batch;
  Matrix d_w2 = d_logits.transpose() * f.hidden;
  Vector d_b2 = d_logits.colwise().sum().transpose();
  Matrix d_pre = (d_logits * w2()).cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
  Matrix d_w1 = d_pre.transpose() * features;
  Vector d_b1 = d_pre.colwise().sum().transpose();

  std::vector<double> grad(params_.size());
  std::size_t off = 0;
  auto append = [&](const double *src, std::size_t n) {
    std::memcpy(grad.data() + off, src, n * sizeof(double));
    off += n;
  };
  append(d_w1.data(), static_cast<std::size_t>(d_w1.size()));
  append(d_b1.data(), static_cast<std::size_t>(d_b1.size()));
  append(d_w2.data(), static_cast<std::size_t>(d_w2.size()));
  append(d_b2.data(), static_cast<std::size_t>(d_b2.size()));

  if (optimizer_ == OptimizerKind::GradientDescent) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= learning_rate * grad[i];
  } else {
    ++step_;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * grad[i];
      v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
      params_[i] -= learning_rate * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + kAdamEps);
    }
  }
  return loss;
}

void ReferenceModel::reset_optimizer(OptimizerKind kind) {
  optimizer_ = kind;
  m_.assign(params_.size(), 0.0);
  v_.assign(params_.size(), 0.0);
  step_ = 0;
}

std::vector<double> ReferenceModel::snapshot() const { return params_; }

void ReferenceModel::restore(std::span<const double> parameters) {
  if (parameters.size() != params_.size())
    throw ConfigError(fmt::format("snapshot has {} parameters, model has {}", parameters.size(), params_.size()));
  params_.assign(parameters.begin(), parameters.end());
}

std::unique_ptr<ClassifierBackend> ReferenceModel::clone() const { return std::make_unique<ReferenceModel>(*this); }

// -- snapshot files ----------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'L', 'R', 'M'};

template <typename T>
void put(std::ostream &out, T value) {
  static_assert(std::endian::native == std::endian::little, "snapshot format assumes a little-endian host");
  out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T>
T get(std::istream &in) {
  T value{};
  if (!in.read(reinterpret_cast<char *>(&value), sizeof(T))) throw DataError("model file is truncated");
  return value;
}

} // namespace

void write_model(std::ostream &out, const ReferenceModel &model, const std::string &config_digest) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kSnapshotVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_digest.size()));
  out.write(config_digest.data(), static_cast<std::streamsize>(config_digest.size()));
  put<std::uint64_t>(out, model.shape().inputs);
  put<std::uint64_t>(out, model.shape().hidden);
  put<std::uint64_t>(out, model.shape().classes);
  const auto params = model.snapshot();
  put<std::uint64_t>(out, params.size());
  for (double p : params) put<double>(out, p);
}

ModelFile read_model_file(std::istream &in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("not a model snapshot file");
  const auto version = get<std::uint32_t>(in);
  if (version != kSnapshotVersion) throw DataError(fmt::format("unsupported snapshot version {}", version));
  ModelFile file;
  const auto digest_len = get<std::uint32_t>(in);
  if (digest_len > 4096) throw DataError("corrupt snapshot digest length");
  file.config_digest.resize(digest_len);
  if (!in.read(file.config_digest.data(), digest_len)) throw DataError("model file is truncated");
  file.shape.inputs = get<std::uint64_t>(in);
  file.shape.hidden = get<std::uint64_t>(in);
  file.shape.classes = get<std::uint64_t>(in);
  const auto n = get<std::uint64_t>(in);
  const auto expected = file.shape.hidden * file.shape.inputs + file.shape.hidden +
                        file.shape.classes * file.shape.hidden + file.shape.classes;
  if (n != expected) throw DataError("snapshot parameter count does not match its shape");
  file.parameters.resize(n);
  for (auto &p : file.parameters) p = get<double>(in);
  return file;
}

ReferenceModel load_model(const ModelFile &file) {
  ReferenceModel model(file.shape, 0);
  model.restore(file.parameters);
  return model;
}

} // namespace softlabel
