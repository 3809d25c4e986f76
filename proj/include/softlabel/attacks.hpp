#pragma once

#include "softlabel/core.hpp"
#include "softlabel/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace softlabel::attacks {

enum class Method { FGSM, PGD };

[[nodiscard]] std::string to_string(Method m);
[[nodiscard]] Method parse_method(const std::string &name);

struct AttackConfig {
  Method method = Method::FGSM;
  /// l-infinity bound in 0-255 pixel units; the feature-space bound is epsilon_255 / 255.
  int epsilon_255 = 4;
  std::size_t pgd_steps = 40;
  /// Feature-space step; 0 selects epsilon / 4.
  double pgd_step_size = 0.0;
  bool random_start = false;
  std::uint64_t seed = 0;

  [[nodiscard]] double epsilon() const { return static_cast<double>(epsilon_255) / 255.0; }
  [[nodiscard]] double step_size() const { return pgd_step_size > 0.0 ? pgd_step_size : epsilon() / 4.0; }
  void validate() const;
};

/// clip01(x + epsilon * sign(grad_x CE(f(x), y))), with sign(0) = 0.
[[nodiscard]] Matrix fgsm(const ClassifierBackend &backend, const Matrix &features, const Labels &hard_labels,
                          double epsilon);

struct PgdResult {
  Matrix adversarial;           ///< final iterate
  std::vector<double> best_curve; ///< mean over examples of the highest CE reached so far
  std::vector<double> raw_curve;  ///< mean CE of each iterate
};

/**
 * Iterated sign-gradient ascent projected onto the epsilon ball around the
 * clean input intersected with [0,1]. Curves have pgd_steps + 1 entries;
 * entry 0 is the starting point.
 */
[[nodiscard]] PgdResult pgd(const ClassifierBackend &backend, const Matrix &features, const Labels &hard_labels,
                            const AttackConfig &config);

/// Throws std::logic_error unless every row lies in the epsilon ball of its clean row and in [0,1].
void assert_feasible(const Matrix &clean, const Matrix &adversarial, double epsilon);

struct AttackReport {
  AttackConfig config;
  std::size_t n_examples = 0;
  double pre_accuracy = 0.0;
  double post_accuracy = 0.0;
  double pre_crossentropy = 0.0;
  double post_crossentropy = 0.0;
  std::vector<double> curve;     ///< PGD running-best curve (empty for FGSM)
  std::vector<double> raw_curve; ///< PGD per-iterate curve (empty for FGSM)
};

[[nodiscard]] AttackReport robustness_eval(const ClassifierBackend &backend, const Matrix &features,
                                           const Labels &hard_labels, const AttackConfig &config);

void write_report(std::ostream &out, const AttackReport &report);
[[nodiscard]] AttackReport read_report(std::istream &in);

/// iteration,mean_ce,raw_mean_ce rows.
void write_curve(std::ostream &out, const AttackReport &report);

} // namespace softlabel::attacks
