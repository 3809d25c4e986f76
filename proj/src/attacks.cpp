#include "softlabel/attacks.hpp"

#include "softlabel/metrics.hpp"
#include "softlabel/targets.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace softlabel::attacks {

std::string to_string(Method m) { return m == Method::FGSM ? "fgsm" : "pgd"; }

Method parse_method(const std::string &name) {
  if (name == "fgsm" || name == "FGSM") return Method::FGSM;
  if (name == "pgd" || name == "PGD") return Method::PGD;
  throw ConfigError(fmt::format("unknown attack method '{}'", name));
}

void AttackConfig::validate() const {
  if (epsilon_255 < 0 || epsilon_255 > 255) throw ConfigError("epsilon_255 must lie in [0, 255]");
  if (method == Method::PGD) {
    if (pgd_steps == 0) throw ConfigError("PGD needs at least one step");
    if (pgd_step_size < 0.0) throw ConfigError("PGD step size must be positive");
    if (epsilon() > 0.0 && step_size() > epsilon() * (1.0 + 1e-12))
      throw ConfigError("PGD step size must not exceed epsilon");
  }
}

namespace {

double sign(double g) {
  if (g > 0.0) return 1.0;
  if (g < 0.0) return -1.0;
  return 0.0;
}

Matrix loss_gradient(const ClassifierBackend &backend, const Matrix &x, const Matrix &one_hot) {
  Matrix g = backend.loss_input_gradient(x, one_hot);
  if (!g.allFinite()) throw NumericError("attack gradient is not finite");
  return g;
}

std::vector<double> per_example_ce(const ClassifierBackend &backend, const Matrix &x, const Labels &labels) {
  const Matrix p = backend.predict_proba(x);
  std::vector<double> ce(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    ce[i] = -std::log(std::max(p(static_cast<Eigen::Index>(i), labels[i]), kLogClamp));
  return ce;
}

double mean(const std::vector<double> &v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_inputs(const ClassifierBackend &backend, const Matrix &features, const Labels &labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ConfigError(fmt::format("{} feature rows but {} labels", features.rows(), labels.size()));
  if (static_cast<std::size_t>(features.cols()) != backend.input_dim())
    throw ConfigError("feature width differs from the model input dimension");
}

} // namespace

Matrix fgsm(const ClassifierBackend &backend, const Matrix &features, const Labels &hard_labels, double epsilon) {
  check_inputs(backend, features, hard_labels);
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  const Matrix y = targets::one_hot_targets(hard_labels, backend.num_classes());
  const Matrix g = loss_gradient(backend, features, y);
  Matrix adv(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index d = 0; d < features.cols(); ++d)
      adv(i, d) = std::clamp(features(i, d) + epsilon * sign(g(i, d)), 0.0, 1.0);
  return adv;
}

PgdResult pgd(const ClassifierBackend &backend, const Matrix &features, const Labels &hard_labels,
              const AttackConfig &config) {
  check_inputs(backend, features, hard_labels);
  config.validate();
  const double eps = config.epsilon();
  const double step = config.step_size();
  const Matrix y = targets::one_hot_targets(hard_labels, backend.num_classes());

  Matrix x = features;
  if (config.random_start) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto rng = make_engine(config.seed, {0x7267ULL, static_cast<std::uint64_t>(i)});
      for (Eigen::Index d = 0; d < x.cols(); ++d)
        x(i, d) = std::clamp(features(i, d) + eps * (2.0 * uniform01(rng) - 1.0), 0.0, 1.0);
    }
  }

  PgdResult result;
  auto ce = per_example_ce(backend, x, hard_labels);
  std::vector<double> best = ce;
  result.raw_curve.push_back(mean(ce));
  result.best_curve.push_back(mean(best));

  for (std::size_t t = 0; t < config.pgd_steps; ++t) {
    const Matrix g = loss_gradient(backend, x, y);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const double x0 = features(i, d);
        double v = x(i, d) + step * sign(g(i, d));
        v = std::clamp(v, x0 - eps, x0 + eps);
        x(i, d) = std::clamp(v, 0.0, 1.0);
      }
    }
    ce = per_example_ce(backend, x, hard_labels);
    for (std::size_t i = 0; i < ce.size(); ++i) best[i] = std::max(best[i], ce[i]);
    result.raw_curve.push_back(mean(ce));
    result.best_curve.push_back(mean(best));
  }
  result.adversarial = std::move(x);
  return result;
}

void assert_feasible(const Matrix &clean, const Matrix &adversarial, double epsilon) {
  if (clean.rows() != adversarial.rows() || clean.cols() != adversarial.cols())
    throw std::logic_error("adversarial batch shape differs from the clean batch");
  for (Eigen::Index i = 0; i < clean.rows(); ++i) {
    for (Eigen::Index d = 0; d < clean.cols(); ++d) {
      const double a = adversarial(i, d);
      // the bound is checked against the same float expression used for projection
      if (!(a >= 0.0 && a <= 1.0) || a < clean(i, d) - epsilon || a > clean(i, d) + epsilon)
        throw std::logic_error(fmt::format("adversarial example {} leaves the feasible set at feature {}", i, d));
    }
  }
}

AttackReport robustness_eval(const ClassifierBackend &backend, const Matrix &features, const Labels &hard_labels,
                             const AttackConfig &config) {
  config.validate();
  AttackReport r;
  r.config = config;
  r.n_examples = hard_labels.size();
  const Matrix clean_pred = backend.predict_proba(features);
  r.pre_accuracy = metrics::top1_accuracy(clean_pred, hard_labels);
  r.pre_crossentropy = metrics::cross_entropy(clean_pred, hard_labels);

  Matrix adv;
  if (config.method == Method::FGSM) {
    adv = fgsm(backend, features, hard_labels, config.epsilon());
  } else {
    auto res = pgd(backend, features, hard_labels, config);
    adv = std::move(res.adversarial);
    r.curve = std::move(res.best_curve);
    r.raw_curve = std::move(res.raw_curve);
  }
  assert_feasible(features, adv, config.epsilon());
  const Matrix adv_pred = backend.predict_proba(adv);
  r.post_accuracy = metrics::top1_accuracy(adv_pred, hard_labels);
  r.post_crossentropy = metrics::cross_entropy(adv_pred, hard_labels);
  return r;
}

namespace {

std::string join(const std::vector<double> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i ? " " : "", v[i]);
  return s;
}

std::vector<double> split_doubles(const std::string &s) {
  std::vector<double> out;
  std::istringstream in(s);
  double v;
  while (in >> v) out.push_back(v);
  return out;
}

} // namespace

void write_report(std::ostream &out, const AttackReport &r) {
  out << "method: " << to_string(r.config.method) << '\n'
      << "epsilon_255: " << r.config.epsilon_255 << '\n'
      << "epsilon: " << fmt::format("{:.17g}", r.config.epsilon()) << '\n'
      << "pgd_steps: " << r.config.pgd_steps << '\n'
      << "pgd_step_size: " << fmt::format("{:.17g}", r.config.step_size()) << '\n'
      << "random_start: " << (r.config.random_start ? 1 : 0) << '\n'
      << "seed: " << r.config.seed << '\n'
      << "n_examples: " << r.n_examples << '\n'
      << "pre_accuracy: " << fmt::format("{:.17g}", r.pre_accuracy) << '\n'
      << "post_accuracy: " << fmt::format("{:.17g}", r.post_accuracy) << '\n'
      << "pre_crossentropy: " << fmt::format("{:.17g}", r.pre_crossentropy) << '\n'
      << "post_crossentropy: " << fmt::format("{:.17g}", r.post_crossentropy) << '\n'
      << "curve: " << join(r.curve) << '\n'
      << "raw_curve: " << join(r.raw_curve) << '\n';
}

AttackReport read_report(std::istream &in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    kv[line.substr(0, colon)] = value;
  }
  auto need = [&](const char *key) -> const std::string & {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(fmt::format("attack report is missing '{}'", key));
    return it->second;
  };
  AttackReport r;
  try {
    r.config.method = parse_method(need("method"));
    r.config.epsilon_255 = std::stoi(need("epsilon_255"));
    r.config.pgd_steps = std::stoull(need("pgd_steps"));
    r.config.pgd_step_size = std::stod(need("pgd_step_size"));
    r.config.random_start = need("random_start") == "1";
    r.config.seed = std::stoull(need("seed"));
    r.n_examples = std::stoull(need("n_examples"));
    r.pre_accuracy = std::stod(need("pre_accuracy"));
    r.post_accuracy = std::stod(need("post_accuracy"));
    r.pre_crossentropy = std::stod(need("pre_crossentropy"));
    r.post_crossentropy = std::stod(need("post_crossentropy"));
    r.curve = split_doubles(need("curve"));
    r.raw_curve = split_doubles(need("raw_curve"));
  } catch (const std::logic_error &e) {
    throw DataError(fmt::format("malformed attack report: {}", e.what()));
  }
  return r;
}

void write_curve(std::ostream &out, const AttackReport &r) {
  out << "iteration,mean_ce,raw_mean_ce\n";
  for (std::size_t t = 0; t < r.curve.size(); ++t)
    out << t << ',' << fmt::format("{:.17g}", r.curve[t]) << ','
        << fmt::format("{:.17g}", t < r.raw_curve.size() ? r.raw_curve[t] : r.curve[t]) << '\n';
}

} // namespace softlabel::attacks
