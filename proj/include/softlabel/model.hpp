#pragma once

#include "softlabel/core.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace softlabel {

enum class OptimizerKind { Adam, GradientDescent };

[[nodiscard]] std::string to_string(OptimizerKind kind);
[[nodiscard]] OptimizerKind parse_optimizer(const std::string &name);

/**
 * Contract every classifier exposes to training, evaluation and attacks.
 *
 * The loss is the crossentropy -sum_c t_c log p_c between a target row t and
 * the predicted distribution p.
 */
class ClassifierBackend {
public:
  virtual ~ClassifierBackend() = default;

  [[nodiscard]] virtual std::size_t input_dim() const = 0;
  [[nodiscard]] virtual std::size_t num_classes() const = 0;

  /// One probability row per input row.
  [[nodiscard]] virtual Matrix predict_proba(const Matrix &features) const = 0;

  /// Gradient of each example's own loss with respect to its input row.
  [[nodiscard]] virtual Matrix loss_input_gradient(const Matrix &features, const Matrix &targets) const = 0;

  /// One optimiser update on the batch-mean loss; returns that loss before the update.
  virtual double fit_step(const Matrix &features, const Matrix &targets, double learning_rate) = 0;

  /// Clears optimiser state and selects the update rule for later fit_step calls.
  virtual void reset_optimizer(OptimizerKind kind) = 0;

  [[nodiscard]] virtual std::vector<double> snapshot() const = 0;
  virtual void restore(std::span<const double> parameters) = 0;

  [[nodiscard]] virtual std::unique_ptr<ClassifierBackend> clone() const = 0;
};

struct ReferenceModelShape {
  std::size_t inputs = 0;
  std::size_t hidden = 64;
  std::size_t classes = 0;
};

/// inputs -> ReLU hidden layer -> softmax over classes, with analytic gradients.
class ReferenceModel final : public ClassifierBackend {
public:
  ReferenceModel(ReferenceModelShape shape, std::uint64_t seed);

  [[nodiscard]] std::size_t input_dim() const override { return shape_.inputs; }
  [[nodiscard]] std::size_t num_classes() const override { return shape_.classes; }
  [[nodiscard]] const ReferenceModelShape &shape() const { return shape_; }

  [[nodiscard]] Matrix predict_proba(const Matrix &features) const override;
  [[nodiscard]] Matrix loss_input_gradient(const Matrix &features, const Matrix &targets) const override;
  double fit_step(const Matrix &features, const Matrix &targets, double learning_rate) override;
  void reset_optimizer(OptimizerKind kind) override;

  [[nodiscard]] std::vector<double> snapshot() const override;
  void restore(std::span<const double> parameters) override;
  [[nodiscard]] std::unique_ptr<ClassifierBackend> clone() const override;

  [[nodiscard]] std::size_t parameter_count() const;

private:
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  struct Forward {
    Matrix pre;    // hidden pre-activations
    Matrix hidden; // ReLU output
    Matrix probs;
  };
  [[nodiscard]] Forward forward(const Matrix &features) const;
  void check_batch(const Matrix &features, const Matrix *targets) const;

  [[nodiscard]] ConstMatrixMap w1() const; // hidden x inputs
  [[nodiscard]] ConstVectorMap b1() const;
  [[nodiscard]] ConstMatrixMap w2() const; // classes x hidden
  [[nodiscard]] ConstVectorMap b2() const;

  ReferenceModelShape shape_;
  std::vector<double> params_; // w1, b1, w2, b2 packed row-major

  OptimizerKind optimizer_ = OptimizerKind::Adam;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t step_ = 0;
};

/// Row-wise softmax, stabilised by subtracting the row maximum.
[[nodiscard]] Matrix softmax_rows(const Matrix &logits);

// -- snapshot files ----------------------------------------------------------

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct ModelFile {
  ReferenceModelShape shape;
  std::string config_digest;
  std::vector<double> parameters;
};

/// Binary blob: magic "SLRM", version, digest, shape, parameters (little-endian).
void write_model(std::ostream &out, const ReferenceModel &model, const std::string &config_digest);
[[nodiscard]] ModelFile read_model_file(std::istream &in);
[[nodiscard]] ReferenceModel load_model(const ModelFile &file);

} // namespace softlabel
