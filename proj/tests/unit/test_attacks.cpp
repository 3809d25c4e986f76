#include "softlabel/attacks.hpp"
#include "softlabel/dataset.hpp"
#include "softlabel/targets.hpp"
#include "softlabel/training.hpp"

#include "unit/test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace softlabel;
using namespace softlabel::attacks;

namespace {

// p(y=1|x) = sigmoid(w x + b) on a single feature.
class Logistic1D final : public ClassifierBackend {
public:
  Logistic1D(double w, double b) : w_(w), b_(b) {}
  [[nodiscard]] std::size_t input_dim() const override { return 1; }
  [[nodiscard]] std::size_t num_classes() const override { return 2; }
  [[nodiscard]] Matrix predict_proba(const Matrix &x) const override {
    Matrix p(x.rows(), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-(w_ * x(i, 0) + b_)));
      p(i, 0) = 1.0 - s;
      p(i, 1) = s;
    }
    return p;
  }
  [[nodiscard]] Matrix loss_input_gradient(const Matrix &x, const Matrix &t) const override {
    const Matrix p = predict_proba(x);
    Matrix g(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) g(i, 0) = (p(i, 1) - t(i, 1)) * w_;
    return g;
  }
  double fit_step(const Matrix &, const Matrix &, double) override { return 0.0; }
  void reset_optimizer(OptimizerKind) override {}
  [[nodiscard]] std::vector<double> snapshot() const override { return {w_, b_}; }
  void restore(std::span<const double> p) override {
    w_ = p[0];
    b_ = p[1];
  }
  [[nodiscard]] std::unique_ptr<ClassifierBackend> clone() const override {
    return std::make_unique<Logistic1D>(*this);
  }

private:
  double w_, b_;
};

struct Trained {
  std::unique_ptr<ReferenceModel> model;
  bench::SoftLabelDataset data;
};

Trained trained_model(std::size_t n = 500) {
  bench::SynthWorldConfig w;
  w.n_train = n;
  w.overlap = 0.3;
  w.seed = 17;
  auto synth = bench::make_synth_world(w);
  auto m = std::make_unique<ReferenceModel>(ReferenceModelShape{w.dims, 32, w.classes}, 5);
  targets::FixedTargets prov(synth.train.features, targets::one_hot_targets(synth.train.hard_labels, w.classes));
  training::TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 0.01;
  (void)training::train(*m, prov, cfg);
  return {std::move(m), std::move(synth.train)};
}

} // namespace

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_DOUBLE_EQ(c.epsilon(), 4.0 / 255.0);
  c.method = Method::PGD;
  EXPECT_DOUBLE_EQ(c.step_size(), c.epsilon() / 4.0);
  EXPECT_NO_THROW(c.validate());
  c.pgd_step_size = 2.0 * c.epsilon();
  EXPECT_THROW(c.validate(), ConfigError);
  c.pgd_step_size = 0.0;
  c.pgd_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon_255 = 256;
  EXPECT_THROW(c.validate(), ConfigError);
  c.epsilon_255 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW((void)parse_method("cw"), ConfigError);
}

TEST(Fgsm, EpsilonZeroIsIdentity) {
  auto t = trained_model(200);
  const Matrix adv = fgsm(*t.model, t.data.features, t.data.hard_labels, 0.0);
  EXPECT_EQ(adv, t.data.features);
}

TEST(Fgsm, StaysInBallAndBox) {
  auto t = trained_model(200);
  const double eps = 8.0 / 255.0;
  const Matrix adv = fgsm(*t.model, t.data.features, t.data.hard_labels, eps);
  EXPECT_LE((adv - t.data.features).cwiseAbs().maxCoeff(), eps + 1e-15);
  EXPECT_GE(adv.minCoeff(), 0.0);
  EXPECT_LE(adv.maxCoeff(), 1.0);
  EXPECT_NO_THROW(assert_feasible(t.data.features, adv, eps));
}

TEST(Fgsm, LogisticClosedForm) {
  // dCE/dx = (sigmoid(wx+b) - y) w, so the step direction is -sign(w) for y=1 and +sign(w) for y=0.
  Logistic1D pos(2.0, -1.0), neg(-3.0, 0.5);
  Matrix x(4, 1);
  x << 0.2, 0.5, 0.99, 0.0;
  const Labels y = {1, 0, 0, 1};
  const double eps = 0.05;
  const Matrix a = fgsm(pos, x, y, eps);
  EXPECT_DOUBLE_EQ(a(0, 0), 0.15);
  EXPECT_DOUBLE_EQ(a(1, 0), 0.55);
  EXPECT_DOUBLE_EQ(a(2, 0), 1.0); // clipped
  EXPECT_DOUBLE_EQ(a(3, 0), 0.0); // clipped
  const Matrix b = fgsm(neg, x, y, eps);
  EXPECT_DOUBLE_EQ(b(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(b(1, 0), 0.45);
}

TEST(Fgsm, ZeroGradientMeansNoStep) {
  test::ConstantBackend flat(3, RowVector::Constant(2, 0.5));
  const Matrix x = Matrix::Constant(2, 3, 0.5);
  EXPECT_EQ(fgsm(flat, x, {0, 1}, 0.1), x);
}

TEST(Pgd, SingleFullStepEqualsFgsm) {
  auto t = trained_model(200);
  AttackConfig c;
  c.method = Method::PGD;
  c.pgd_steps = 1;
  c.epsilon_255 = 6;
  c.pgd_step_size = c.epsilon();
  const auto r = pgd(*t.model, t.data.features, t.data.hard_labels, c);
  EXPECT_EQ(r.adversarial, fgsm(*t.model, t.data.features, t.data.hard_labels, c.epsilon()));
}

TEST(Pgd, FeasibleMonotoneDeterministicNonMutating) {
  auto t = trained_model(300);
  const auto snap = t.model->snapshot();
  AttackConfig c;
  c.method = Method::PGD;
  c.pgd_steps = 40;
  c.random_start = true;
  c.seed = 3;
  for (int steps : {1, 5, 40}) {
    c.pgd_steps = static_cast<std::size_t>(steps);
    const auto r = pgd(*t.model, t.data.features, t.data.hard_labels, c);
    EXPECT_NO_THROW(assert_feasible(t.data.features, r.adversarial, c.epsilon()));
    ASSERT_EQ(r.best_curve.size(), c.pgd_steps + 1);
    ASSERT_EQ(r.raw_curve.size(), c.pgd_steps + 1);
    for (std::size_t i = 1; i < r.best_curve.size(); ++i) EXPECT_GE(r.best_curve[i], r.best_curve[i - 1]);
    for (std::size_t i = 0; i < r.best_curve.size(); ++i) EXPECT_GE(r.best_curve[i], r.raw_curve[i] - 1e-15);
  }
  const auto a = pgd(*t.model, t.data.features, t.data.hard_labels, c);
  const auto b = pgd(*t.model, t.data.features, t.data.hard_labels, c);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(a.best_curve, b.best_curve);
  EXPECT_EQ(t.model->snapshot(), snap);
}

TEST(AssertFeasible, CatchesViolations) {
  const Matrix x = Matrix::Constant(1, 2, 0.5);
  Matrix bad = x;
  bad(0, 1) = 0.6;
  EXPECT_THROW(assert_feasible(x, bad, 0.05), std::logic_error);
  bad(0, 1) = -0.01;
  EXPECT_THROW(assert_feasible(x, bad, 1.0), std::logic_error);
}

TEST(Robustness, EpsilonZeroLeavesMetricsUnchanged) {
  auto t = trained_model(200);
  for (auto m : {Method::FGSM, Method::PGD}) {
    AttackConfig c;
    c.method = m;
    c.epsilon_255 = 0;
    c.pgd_steps = 3;
    const auto r = robustness_eval(*t.model, t.data.features, t.data.hard_labels, c);
    EXPECT_EQ(r.pre_accuracy, r.post_accuracy);
    EXPECT_EQ(r.pre_crossentropy, r.post_crossentropy);
  }
}

TEST(Robustness, AttackRaisesCrossentropyOn500Examples) {
  auto t = trained_model(500);
  for (auto m : {Method::FGSM, Method::PGD}) {
    AttackConfig c;
    c.method = m;
    const auto r = robustness_eval(*t.model, t.data.features, t.data.hard_labels, c);
    EXPECT_EQ(r.n_examples, 500u);
    EXPECT_GE(r.post_crossentropy, r.pre_crossentropy);
    EXPECT_LE(r.post_accuracy, r.pre_accuracy);
    if (m == Method::PGD) {
      EXPECT_EQ(r.curve.size(), 41u);
      EXPECT_DOUBLE_EQ(r.curve.front(), r.pre_crossentropy);
    } else {
      EXPECT_TRUE(r.curve.empty());
    }
  }
}

TEST(Robustness, ReportRoundTrip) {
  auto t = trained_model(100);
  AttackConfig c;
  c.method = Method::PGD;
  c.pgd_steps = 5;
  c.epsilon_255 = 5;
  const auto r = robustness_eval(*t.model, t.data.features, t.data.hard_labels, c);
  std::stringstream buf;
  write_report(buf, r);
  const auto back = read_report(buf);
  EXPECT_EQ(back.config.epsilon_255, 5);
  EXPECT_EQ(back.curve, r.curve);
  EXPECT_EQ(back.raw_curve, r.raw_curve);
  EXPECT_EQ(back.post_crossentropy, r.post_crossentropy);
  std::ostringstream curve;
  write_curve(curve, r);
  EXPECT_EQ(curve.str().rfind("iteration,mean_ce,raw_mean_ce\n", 0), 0u);
}
