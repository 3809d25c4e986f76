#include "softlabel/metrics.hpp"
#include "softlabel/targets.hpp"

#include "unit/test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace softlabel;
using namespace softlabel::metrics;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto &row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

} // namespace

TEST(CrossEntropy, Examples) {
  const Matrix oh = rows({{0, 1, 0}});
  EXPECT_EQ(cross_entropy(row_span(oh, 0), row_span(oh, 0)), 0.0);

  const Matrix uni = Matrix::Constant(1, 10, 0.1);
  std::mt19937_64 rng(1);
  const Matrix t = test::random_distributions(1, 10, rng);
  EXPECT_NEAR(cross_entropy(row_span(uni, 0), row_span(t, 0)), std::log(10.0), 1e-12);

  const Matrix p = rows({{0.7, 0.2, 0.1}});
  const Matrix q = rows({{0.5, 0.5, 0.0}});
  EXPECT_NEAR(cross_entropy(p, q), 0.98306, 5e-6);
  EXPECT_NEAR(cross_entropy(p, q), -(0.5 * std::log(0.7) + 0.5 * std::log(0.2)), 1e-15);
}

TEST(CrossEntropy, ClampAndDimensionMismatch) {
  const Matrix p = rows({{1.0, 0.0}});
  const Matrix t = rows({{0.0, 1.0}});
  EXPECT_DOUBLE_EQ(cross_entropy(p, t), -std::log(kLogClamp));
  EXPECT_THROW((void)cross_entropy(p, Matrix::Zero(1, 3)), ConfigError);
  EXPECT_THROW((void)cross_entropy(p, Labels{0, 1}), ConfigError);
}

TEST(CrossEntropy, OneHotEqualsNegLogOfLabelColumn) {
  std::mt19937_64 rng(2);
  const Matrix p = test::random_distributions(100, 7, rng, false);
  const Labels y = test::random_labels(100, 7, rng);
  const Matrix t = targets::one_hot_targets(y, 7);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    EXPECT_EQ(cross_entropy(row_span(p, i), row_span(t, i)), -std::log(p(i, y[static_cast<std::size_t>(i)])));
}

TEST(CrossEntropy, GibbsInequality) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const RowVector t = test::random_distribution(5, rng, false);
    const RowVector p = test::random_distribution(5, rng, false);
    const std::span<const double> ts{t.data(), 5}, ps{p.data(), 5};
    EXPECT_GE(cross_entropy(ps, ts), cross_entropy(ts, ts) - 1e-12);
  }
}

TEST(Accuracy, Examples) {
  const Matrix p = rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  EXPECT_EQ(top1_accuracy(p, {0, 1, 2, 0}), 1.0);
  EXPECT_EQ(top1_accuracy(p, {1, 2, 0, 1}), 0.0);
  EXPECT_EQ(top1_accuracy(p, {0, 1, 2, 2}), 0.75);
  const Matrix tie = rows({{0.4, 0.4, 0.2}});
  EXPECT_EQ(top1_accuracy(tie, {0}), 1.0);
  EXPECT_EQ(top1_accuracy(tie, {1}), 0.0);
}

TEST(Sba, Examples) {
  const Matrix ref = rows({{0.5, 0.4, 0.1}});
  EXPECT_EQ(second_best_accuracy(rows({{0.6, 0.3, 0.1}}), ref).accuracy, 1.0);
  EXPECT_EQ(second_best_accuracy(rows({{0.6, 0.1, 0.3}}), ref).accuracy, 0.0);

  std::mt19937_64 rng(4);
  const Matrix same = test::random_distributions(50, 6, rng, false);
  EXPECT_EQ(second_best_accuracy(same, same).accuracy, 1.0);
}

TEST(Sba, ExclusionAndAbsence) {
  const Matrix ref = rows({{1, 0, 0}, {0.5, 0.5, 0}});
  const Matrix pred = rows({{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}});
  const auto r = second_best_accuracy(pred, ref);
  EXPECT_EQ(r.included, 1u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.accuracy, 0.0); // model ranks class 0 second, reference ranks class 1 second

  const auto none = second_best_accuracy(rows({{0.6, 0.3, 0.1}}), rows({{0, 1, 0}}));
  EXPECT_FALSE(none.accuracy.has_value());
  EXPECT_EQ(none.excluded, 1u);
}

TEST(Sba, TopTwoMode) {
  // truth = reference argmax; counted when the model's top two contain it
  const Matrix ref = rows({{0.5, 0.4, 0.1}, {0.1, 0.2, 0.7}});
  const Matrix pred = rows({{0.3, 0.6, 0.1}, {0.5, 0.4, 0.1}});
  const auto r = second_best_accuracy(pred, ref, SbaMode::TopTwoContainsTruth);
  EXPECT_EQ(r.accuracy, 0.5);
}

TEST(Sba, InvariantUnderTemperatureScaling) {
  std::mt19937_64 rng(5);
  const Matrix p = test::random_distributions(200, 6, rng, false);
  const Matrix ref = test::random_distributions(200, 6, rng, false);
  const Labels y = test::random_labels(200, 6, rng);
  for (double t : {0.3, 2.0, 7.0}) {
    const Matrix s = targets::temperature_scale(p, t);
    EXPECT_EQ(top1_accuracy(s, y), top1_accuracy(p, y));
    EXPECT_EQ(second_best_accuracy(s, ref).accuracy, second_best_accuracy(p, ref).accuracy);
  }
}

TEST(Confidence, Examples) {
  const Matrix oh = rows({{1, 0}, {0, 1}});
  const auto a = confidence_split(oh, {0, 1});
  EXPECT_EQ(a.correct, 1.0);
  EXPECT_FALSE(a.incorrect.has_value());

  const Matrix uni = Matrix::Constant(4, 4, 0.25);
  const auto b = confidence_split(uni, {0, 1, 2, 3});
  EXPECT_EQ(b.correct, 0.25);
  EXPECT_EQ(b.incorrect, 0.25);

  const Matrix two = rows({{0.9, 0.1}, {0.6, 0.4}});
  const auto c = confidence_split(two, {0, 1});
  EXPECT_DOUBLE_EQ(*c.correct, 0.9);
  EXPECT_DOUBLE_EQ(*c.incorrect, 0.6);
}

TEST(Evaluate, PerfectAndUniformPredictors) {
  const Labels y = {0, 1, 2, 1, 0};
  const Matrix perfect = targets::one_hot_targets(y, 3);
  auto r = evaluate_predictions("d", perfect, y, nullptr);
  EXPECT_EQ(r.top1_accuracy, 1.0);
  EXPECT_EQ(r.crossentropy_vs_hard, 0.0);
  EXPECT_FALSE(r.sba.has_value());
  EXPECT_FALSE(r.crossentropy_vs_soft.has_value());

  const Labels y10 = {0, 3, 0, 9};
  const Matrix uni = Matrix::Constant(4, 10, 0.1);
  r = evaluate_predictions("u", uni, y10, nullptr);
  EXPECT_NEAR(r.crossentropy_vs_hard, std::log(10.0), 1e-12);
  EXPECT_EQ(r.top1_accuracy, 0.5);
}

TEST(Evaluate, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(6);
  const std::size_t n = 50, k = 5;
  const Matrix p = test::random_distributions(n, k, rng, false);
  const Matrix soft = test::random_distributions(n, k, rng);
  const Labels y = test::random_labels(n, k, rng);
  const auto r = evaluate_predictions("fx", p, y, &soft);

  double ce_h = 0, ce_s = 0, conf_c = 0, conf_i = 0;
  std::size_t hits = 0, n_i = 0, sba_hits = 0, sba_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> pr(k), sr(k);
    for (std::size_t c = 0; c < k; ++c) {
      pr[c] = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      sr[c] = soft(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
    ce_h += -std::log(pr[static_cast<std::size_t>(y[i])]);
    for (std::size_t c = 0; c < k; ++c) ce_s += sr[c] > 0 ? -sr[c] * std::log(pr[c]) : 0.0;
    // stable ranking by (value desc, index asc)
    std::vector<std::size_t> ord_p(k), ord_s(k);
    std::iota(ord_p.begin(), ord_p.end(), 0);
    std::iota(ord_s.begin(), ord_s.end(), 0);
    std::stable_sort(ord_p.begin(), ord_p.end(), [&](auto a, auto b) { return pr[a] > pr[b]; });
    std::stable_sort(ord_s.begin(), ord_s.end(), [&](auto a, auto b) { return sr[a] > sr[b]; });
    const bool ok = ord_p[0] == static_cast<std::size_t>(y[i]);
    hits += ok;
    (ok ? conf_c : conf_i) += pr[ord_p[0]];
    n_i += !ok;
    if (std::count_if(sr.begin(), sr.end(), [](double v) { return v > 0; }) >= 2) {
      ++sba_n;
      sba_hits += ord_p[1] == ord_s[1];
    }
  }
  EXPECT_NEAR(r.crossentropy_vs_hard, ce_h / n, 1e-12);
  EXPECT_NEAR(*r.crossentropy_vs_soft, ce_s / n, 1e-12);
  EXPECT_EQ(r.top1_accuracy, static_cast<double>(hits) / n);
  EXPECT_NEAR(*r.mean_confidence_correct, conf_c / static_cast<double>(hits), 1e-12);
  EXPECT_NEAR(*r.mean_confidence_incorrect, conf_i / static_cast<double>(n_i), 1e-12);
  EXPECT_EQ(*r.sba, static_cast<double>(sba_hits) / static_cast<double>(sba_n));
  EXPECT_EQ(r.sba_excluded, n - sba_n);
}

TEST(Evaluate, PermutationInvariant) {
  std::mt19937_64 rng(7);
  const Matrix p = test::random_distributions(60, 4, rng, false);
  const Matrix soft = test::random_distributions(60, 4, rng);
  const Labels y = test::random_labels(60, 4, rng);
  std::vector<std::size_t> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Matrix sp = gather_rows(soft, perm);
  const auto a = evaluate_predictions("a", p, y, &soft);
  const auto b = evaluate_predictions("a", gather_rows(p, perm), gather(y, perm), &sp);
  EXPECT_EQ(a.top1_accuracy, b.top1_accuracy);
  EXPECT_EQ(a.sba, b.sba);
  EXPECT_NEAR(a.crossentropy_vs_hard, b.crossentropy_vs_hard, 1e-12);
  EXPECT_NEAR(*a.crossentropy_vs_soft, *b.crossentropy_vs_soft, 1e-12);
}

TEST(Report, RoundTripWithAbsentMarker) {
  EvalReport r;
  r.dataset_name = "holdout";
  r.n_examples = 3;
  r.top1_accuracy = 2.0 / 3.0;
  r.crossentropy_vs_hard = 0.1234567890123;
  r.mean_confidence_correct = 0.8;
  std::stringstream buf;
  write_report(buf, r);
  EXPECT_NE(buf.str().find("sba: NA"), std::string::npos);
  const auto back = read_report(buf);
  EXPECT_EQ(back.dataset_name, "holdout");
  EXPECT_EQ(back.top1_accuracy, r.top1_accuracy);
  EXPECT_EQ(back.crossentropy_vs_hard, r.crossentropy_vs_hard);
  EXPECT_FALSE(back.sba.has_value());
  EXPECT_FALSE(back.mean_confidence_incorrect.has_value());
  EXPECT_EQ(back.mean_confidence_correct, 0.8);
}
