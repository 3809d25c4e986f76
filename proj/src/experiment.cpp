#include "softlabel/experiment.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace softlabel::bench {

namespace fs = std::filesystem;

// -- configuration -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (policies.empty()) throw ConfigError("experiment needs at least one target policy");
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  if (hidden == 0) throw ConfigError("hidden layer width must be positive");
  train.validate();
  std::set<std::string> labels;
  for (const auto &p : policies) {
    p.policy.validate();
    if (!labels.insert(p.label).second) throw ConfigError(fmt::format("duplicate policy label '{}'", p.label));
    if (p.label == "pretrained") throw ConfigError("policy label 'pretrained' is reserved");
    if (p.policy.kind == targets::PolicyKind::Distill && !pretrain)
      throw ConfigError("the distill policy needs a pretrain section to build its source models");
  }
  for (const auto &a : attacks) a.config.validate();
  for (double r : lr_grid)
    if (!(r > 0.0)) throw ConfigError("learning-rate grid entries must be positive");
  if (dataset_kind == "synth") {
    synth.validate();
    if (pretrain && synth.n_pretrain == 0) throw ConfigError("pretraining needs dataset.synth.n_pretrain > 0");
  } else if (dataset_kind == "files") {
    if (files.train.paths.empty()) throw ConfigError("dataset.train needs at least one path");
    if (pretrain && !files.pretrain) throw ConfigError("pretraining needs dataset.pretrain");
  } else {
    throw ConfigError(fmt::format("unknown dataset kind '{}'", dataset_kind));
  }
}

namespace {

template <typename T>
T get_or(const YAML::Node &node, const char *key, T fallback) {
  if (!node || !node[key]) return fallback;
  return node[key].as<T>();
}

DatasetSpec parse_file_spec(const YAML::Node &node, const std::string &default_name) {
  DatasetSpec spec;
  spec.name = get_or<std::string>(node, "name", default_name);
  spec.format = parse_file_format(get_or<std::string>(node, "format", "feature_text"));
  if (node["paths"]) {
    for (const auto &p : node["paths"]) spec.paths.emplace_back(p.as<std::string>());
  } else if (node["path"]) {
    spec.paths.emplace_back(node["path"].as<std::string>());
  }
  if (node["soft_labels"]) spec.soft_labels = node["soft_labels"].as<std::string>();
  spec.num_classes = get_or<std::size_t>(node, "classes", 10);
  spec.strict = get_or<bool>(node, "strict", true);
  const auto delim = get_or<std::string>(node, "delimiter", ",");
  spec.delimiter = delim.empty() ? ',' : delim.front();
  return spec;
}

targets::TargetPolicy parse_policy(const YAML::Node &node) {
  targets::TargetPolicy p;
  p.kind = targets::parse_policy_kind(node.IsScalar() ? node.as<std::string>() : node["kind"].as<std::string>());
  if (node.IsMap()) {
    p.mixup_alpha = get_or<double>(node, "alpha", p.mixup_alpha);
    p.distill_temperature = get_or<double>(node, "temperature", p.distill_temperature);
    p.distill_sources = get_or<std::size_t>(node, "sources", p.distill_sources);
    const auto resample = get_or<std::string>(node, "resample", "epoch");
    if (resample == "epoch")
      p.resample = targets::Resample::PerEpoch;
    else if (resample == "step")
      p.resample = targets::Resample::PerStep;
    else
      throw ConfigError(fmt::format("unknown resample granularity '{}'", resample));
  }
  return p;
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string &text) {
  ExperimentConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception &e) {
    throw ConfigError(fmt::format("config is not valid key: value text: {}", e.what()));
  }
  try {
    cfg.name = get_or<std::string>(root, "name", cfg.name);
    cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed);
    cfg.output_dir = get_or<std::string>(root, "output_dir", cfg.output_dir.string());
    cfg.k_folds = get_or<std::size_t>(root, "k_folds", cfg.k_folds);

    const auto ds = root["dataset"];
    cfg.dataset_kind = get_or<std::string>(ds, "kind", "synth");
    if (cfg.dataset_kind == "synth") {
      const auto s = ds["synth"] ? ds["synth"] : ds;
      auto &w = cfg.synth;
      w.classes = get_or<std::size_t>(s, "classes", w.classes);
      w.dims = get_or<std::size_t>(s, "dims", w.dims);
      w.mean_spread = get_or<double>(s, "mean_spread", w.mean_spread);
      w.overlap = get_or<double>(s, "overlap", w.overlap);
      if (s && s["target_entropy"]) cfg.synth_target_entropy = s["target_entropy"].as<double>();
      if (s && s["shift_levels"]) w.shift_levels = s["shift_levels"].as<std::vector<double>>();
      if (s && s["means"]) w.means = s["means"].as<std::vector<std::vector<double>>>();
      w.n_train = get_or<std::size_t>(s, "n_train", w.n_train);
      w.n_test = get_or<std::size_t>(s, "n_test", w.n_test);
      w.n_pretrain = get_or<std::size_t>(s, "n_pretrain", w.n_pretrain);
    } else if (cfg.dataset_kind == "files") {
      cfg.files.train = parse_file_spec(ds["train"], "train");
      if (ds["tests"])
        for (std::size_t i = 0; i < ds["tests"].size(); ++i)
          cfg.files.tests.push_back(parse_file_spec(ds["tests"][i], fmt::format("test_{}", i)));
      if (ds["pretrain"]) cfg.files.pretrain = parse_file_spec(ds["pretrain"], "pretrain");
    }

    cfg.hidden = get_or<std::size_t>(root["model"], "hidden", cfg.hidden);

    const auto tr = root["train"];
    cfg.train.epochs = get_or<std::size_t>(tr, "epochs", cfg.train.epochs);
    cfg.train.learning_rate = get_or<double>(tr, "learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = get_or<std::size_t>(tr, "batch_size", cfg.train.batch_size);
    cfg.train.optimizer = parse_optimizer(get_or<std::string>(tr, "optimizer", "adam"));
    if (tr && tr["lr_grid"]) cfg.lr_grid = tr["lr_grid"].as<std::vector<double>>();

    if (const auto pt = root["pretrain"]) {
      PretrainSpec p;
      p.epochs = get_or<std::size_t>(pt, "epochs", p.epochs);
      p.learning_rate = get_or<double>(pt, "learning_rate", p.learning_rate);
      cfg.pretrain = p;
    }

    for (const auto &node : root["policies"]) {
      PolicySpec spec;
      spec.policy = parse_policy(node);
      spec.label = node.IsMap() ? get_or<std::string>(node, "label", targets::to_string(spec.policy.kind))
                                : targets::to_string(spec.policy.kind);
      cfg.policies.push_back(spec);
    }

    for (const auto &node : root["attacks"]) {
      AttackSpec a;
      a.config.method = attacks::parse_method(node["method"].as<std::string>());
      a.config.epsilon_255 = get_or<int>(node, "epsilon_255", a.config.epsilon_255);
      a.config.pgd_steps = get_or<std::size_t>(node, "steps", a.config.pgd_steps);
      a.config.pgd_step_size = get_or<double>(node, "step_size", a.config.pgd_step_size);
      a.config.random_start = get_or<bool>(node, "random_start", a.config.random_start);
      a.max_examples = get_or<std::size_t>(node, "max_examples", a.max_examples);
      cfg.attacks.push_back(a);
    }

    const auto sba = get_or<std::string>(root, "sba_mode", "second_rank");
    if (sba == "second_rank")
      cfg.sba_mode = metrics::SbaMode::SecondRankMatch;
    else if (sba == "top_two")
      cfg.sba_mode = metrics::SbaMode::TopTwoContainsTruth;
    else
      throw ConfigError(fmt::format("unknown sba_mode '{}'", sba));
  } catch (const YAML::Exception &e) {
    throw ConfigError(fmt::format("bad config value: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::string nums(const std::vector<double> &v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

void canonical_file_spec(std::ostream &out, const std::string &key, const DatasetSpec &s) {
  out << key << ".name: " << s.name << '\n'
      << key << ".format: " << (s.format == FileFormat::CifarBinary ? "cifar_binary" : "feature_text") << '\n';
  for (const auto &p : s.paths) out << key << ".path: " << p.string() << '\n';
  out << key << ".soft_labels: " << (s.soft_labels ? s.soft_labels->string() : "") << '\n'
      << key << ".classes: " << s.num_classes << '\n'
      << key << ".strict: " << s.strict << '\n'
      << key << ".delimiter: " << s.delimiter << '\n';
}

} // namespace

std::string canonical_text(const ExperimentConfig &c) {
  std::ostringstream out;
  out << "format: 1\n"
      << "name: " << c.name << '\n'
      << "seed: " << c.seed << '\n'
      << "k_folds: " << c.k_folds << '\n'
      << "dataset.kind: " << c.dataset_kind << '\n';
  if (c.dataset_kind == "synth") {
    const auto &w = c.synth;
    out << "synth.classes: " << w.classes << '\n'
        << "synth.dims: " << w.dims << '\n'
        << "synth.mean_spread: " << num(w.mean_spread) << '\n'
        << "synth.overlap: " << num(w.overlap) << '\n'
        << "synth.target_entropy: " << (c.synth_target_entropy ? num(*c.synth_target_entropy) : "none") << '\n'
        << "synth.shift_levels: " << nums(w.shift_levels) << '\n';
    for (const auto &m : w.means) out << "synth.mean: " << nums(m) << '\n';
    out << "synth.n_train: " << w.n_train << '\n'
        << "synth.n_test: " << w.n_test << '\n'
        << "synth.n_pretrain: " << w.n_pretrain << '\n';
  } else {
    canonical_file_spec(out, "train", c.files.train);
    for (const auto &t : c.files.tests) canonical_file_spec(out, "test", t);
    if (c.files.pretrain) canonical_file_spec(out, "pretrain_data", *c.files.pretrain);
  }
  out << "model.hidden: " << c.hidden << '\n'
      << "train.epochs: " << c.train.epochs << '\n'
      << "train.learning_rate: " << num(c.train.learning_rate) << '\n'
      << "train.batch_size: " << c.train.batch_size << '\n'
      << "train.optimizer: " << to_string(c.train.optimizer) << '\n'
      << "train.lr_grid: " << nums(c.lr_grid) << '\n';
  if (c.pretrain)
    out << "pretrain.epochs: " << c.pretrain->epochs << '\n'
        << "pretrain.learning_rate: " << num(c.pretrain->learning_rate) << '\n';
  for (const auto &p : c.policies)
    out << "policy: " << p.label << ' ' << targets::to_string(p.policy.kind) << " alpha=" << num(p.policy.mixup_alpha)
        << " temperature=" << num(p.policy.distill_temperature) << " sources=" << p.policy.distill_sources
        << " resample=" << (p.policy.resample == targets::Resample::PerEpoch ? "epoch" : "step") << '\n';
  for (const auto &a : c.attacks)
    out << "attack: " << attacks::to_string(a.config.method) << " eps255=" << a.config.epsilon_255
        << " steps=" << a.config.pgd_steps << " step_size=" << num(a.config.pgd_step_size)
        << " random_start=" << a.config.random_start << " max_examples=" << a.max_examples << '\n';
  out << "sba_mode: " << (c.sba_mode == metrics::SbaMode::SecondRankMatch ? "second_rank" : "top_two") << '\n';
  return out.str();
}

std::string sha256_hex(const std::string &bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string config_digest(const ExperimentConfig &config) { return sha256_hex(canonical_text(config)); }

fs::path store_path(const ExperimentConfig &config) {
  return config.output_dir / config_digest(config).substr(0, 16);
}

// -- running ------------------------------------------------------------------------

namespace {

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_matrix(const fs::path &path, const Matrix &m) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << num(m(r, c));
    out << '\n';
  }
}

struct PreparedData {
  SoftLabelDataset train;
  std::vector<SoftLabelDataset> tests;
  std::optional<SoftLabelDataset> pretrain;
};

PreparedData prepare_data(const ExperimentConfig &config) {
  PreparedData out;
  if (config.dataset_kind == "synth") {
    SynthWorldConfig w = config.synth;
    w.seed = config.seed;
    if (config.synth_target_entropy) w.overlap = overlap_for_entropy(w, *config.synth_target_entropy);
    auto synth = make_synth_world(w);
    out.train = std::move(synth.train);
    out.tests = std::move(synth.tests);
    out.pretrain = std::move(synth.pretrain);
  } else {
    out.train = load_dataset(config.files.train).dataset;
    for (const auto &t : config.files.tests) out.tests.push_back(load_dataset(t).dataset);
    if (config.files.pretrain) out.pretrain = load_dataset(*config.files.pretrain).dataset;
  }
  for (const auto &t : out.tests)
    if (t.features.cols() != out.train.features.cols() || t.num_classes != out.train.num_classes)
      throw DataError(fmt::format("test set '{}' does not match the training set's shape", t.name));
  return out;
}

struct FoldContext {
  const ExperimentConfig &config;
  const PreparedData &data;
  const training::FoldSplit &split;
};

/// Evaluates `model` on fold holdout + test sets and runs attacks, writing everything under `dir`.
void evaluate_fold_model(const FoldContext &ctx, const ClassifierBackend &model, std::size_t fold,
                         const fs::path &dir) {
  const auto &train = ctx.data.train;
  const auto holdout = ctx.split.holdout(fold);
  {
    std::ofstream idx(dir / "holdout_indices.txt");
    for (auto i : holdout) idx << i << '\n';
  }
  const Matrix x_hold = gather_rows(train.features, holdout);
  const Labels y_hold = gather(train.hard_labels, holdout);
  std::optional<Matrix> soft_hold;
  if (train.soft_labels) soft_hold = gather_rows(*train.soft_labels, holdout);

  auto eval_one = [&](const std::string &name, const Matrix &x, const Labels &y, const Matrix *soft) {
    const Matrix pred = model.predict_proba(x);
    write_matrix(dir / fmt::format("predictions_{}.csv", name), pred);
    auto report = metrics::evaluate_predictions(name, pred, y, soft, ctx.config.sba_mode);
    std::ofstream out(dir / fmt::format("eval_{}.txt", name));
    metrics::write_report(out, report);
  };
  eval_one("holdout", x_hold, y_hold, soft_hold ? &*soft_hold : nullptr);
  for (const auto &t : ctx.data.tests)
    eval_one(t.name, t.features, t.hard_labels, t.soft_labels ? &*t.soft_labels : nullptr);

  for (std::size_t a = 0; a < ctx.config.attacks.size(); ++a) {
    const auto &spec = ctx.config.attacks[a];
    std::size_t n = x_hold.rows();
    if (spec.max_examples > 0) n = std::min(n, spec.max_examples);
    std::vector<std::size_t> first(n);
    for (std::size_t i = 0; i < n; ++i) first[i] = i;
    attacks::AttackConfig cfg = spec.config;
    cfg.seed = derive_seed(ctx.config.seed, {0x61747461636bULL, fold, a});
    const auto report = attacks::robustness_eval(model, gather_rows(x_hold, first), gather(y_hold, first), cfg);
    {
      std::ofstream out(dir / fmt::format("attack_{}.txt", a));
      attacks::write_report(out, report);
    }
    if (cfg.method == attacks::Method::PGD) {
      std::ofstream out(dir / fmt::format("curve_{}.csv", a));
      attacks::write_curve(out, report);
    }
  }
}

std::unique_ptr<ClassifierBackend> train_pretrained(const ExperimentConfig &config, const SoftLabelDataset &data,
                                                    std::size_t index) {
  const std::uint64_t seed = derive_seed(config.seed, {0x707265747261696eULL, index});
  auto model = std::make_unique<ReferenceModel>(
      ReferenceModelShape{static_cast<std::size_t>(data.features.cols()), config.hidden, data.num_classes}, seed);
  training::TrainConfig tc = config.train;
  tc.epochs = config.pretrain->epochs;
  tc.learning_rate = config.pretrain->learning_rate;
  tc.seed = seed;
  tc.policy = targets::TargetPolicy{};
  targets::FixedTargets provider(data.features, targets::one_hot_targets(data.hard_labels, data.num_classes));
  training::train(*model, provider, tc);
  return model;
}

} // namespace

ResultsStore run_experiment(const ExperimentConfig &config, const RunOptions &options) {
  config.validate();
  ResultsStore store;
  store.digest = config_digest(config);
  store.root = store_path(config);

  if (fs::exists(store.root / "COMPLETE")) {
    if (!options.overwrite)
      throw StoreExistsError(fmt::format("results for config digest {} already exist at '{}'", store.digest,
                                         store.root.string()));
    fs::remove_all(store.root);
  } else if (options.overwrite && fs::exists(store.root)) {
    fs::remove_all(store.root);
  }
  fs::create_directories(store.root);
  if (fs::exists(store.root / "digest.txt") && read_text(store.root / "digest.txt") != store.digest + "\n")
    throw DataError(fmt::format("'{}' holds results for a different config", store.root.string()));
  write_text(store.root / "config.txt", canonical_text(config));
  write_text(store.root / "digest.txt", store.digest + "\n");

  const PreparedData data = prepare_data(config);
  const auto &train = data.train;
  if (train.size() < config.k_folds) throw ConfigError("fewer training examples than folds");
  {
    std::ostringstream ds;
    ds << "holdout\n";
    for (const auto &t : data.tests) {
      ds << t.name;
      if (t.shift_level) ds << ' ' << num(*t.shift_level);
      ds << '\n';
    }
    write_text(store.root / "datasets.txt", ds.str());
  }

  const auto split = training::kfold_split(train.size(), config.k_folds, config.seed);
  const FoldContext ctx{config, data, split};
  const std::size_t dims = static_cast<std::size_t>(train.features.cols());
  training::BackendFactory factory = [&](std::uint64_t seed) -> std::unique_ptr<ClassifierBackend> {
    return std::make_unique<ReferenceModel>(ReferenceModelShape{dims, config.hidden, train.num_classes}, seed);
  };

  // Source models: index 0 is the shared pretrained model, the rest only feed distillation.
  std::vector<std::unique_ptr<ClassifierBackend>> sources;
  if (config.pretrain) {
    std::size_t n_sources = 1;
    for (const auto &p : config.policies)
      if (p.policy.kind == targets::PolicyKind::Distill) n_sources = std::max(n_sources, p.policy.distill_sources);
    for (std::size_t i = 0; i < n_sources; ++i) sources.push_back(train_pretrained(config, *data.pretrain, i));
  }

  std::vector<std::string> labels;
  if (config.pretrain) labels.push_back("pretrained");
  for (const auto &p : config.policies) labels.push_back(p.label);
  {
    std::ostringstream pl;
    for (const auto &l : labels) pl << l << '\n';
    write_text(store.root / "policies.txt", pl.str());
  }

  training::LabelledData labelled{&train.features, &train.hard_labels,
                                  train.soft_labels ? &*train.soft_labels : nullptr};

  auto run_folds = [&](const std::string &label, const std::function<void(std::size_t, const fs::path &)> &body) {
    for (std::size_t f = 0; f < config.k_folds; ++f) {
      const fs::path dir = store.root / "policies" / label / fmt::format("fold_{}", f);
      if (fs::exists(dir / "DONE")) continue;
      fs::remove_all(dir);
      fs::create_directories(dir);
      try {
        body(f, dir);
        write_text(dir / "DONE", "");
        if (options.progress) options.progress(fmt::format("{} fold {} done", label, f));
      } catch (const std::exception &e) {
        write_text(dir / "error.txt", std::string(e.what()) + "\n");
        if (options.progress) options.progress(fmt::format("{} fold {} failed: {}", label, f, e.what()));
      }
    }
  };

  if (config.pretrain)
    run_folds("pretrained", [&](std::size_t f, const fs::path &dir) { evaluate_fold_model(ctx, *sources[0], f, dir); });

  for (const auto &spec : config.policies) {
    training::TrainConfig tc = config.train;
    tc.seed = config.seed;
    tc.policy = spec.policy;
    training::CrossValOptions cv;
    cv.k = config.k_folds;
    cv.sba_mode = config.sba_mode;
    if (config.pretrain) cv.pretrained = sources[0].get();
    if (spec.policy.kind == targets::PolicyKind::Distill)
      for (std::size_t i = 0; i < spec.policy.distill_sources; ++i) cv.distill_sources.push_back(sources[i].get());

    const fs::path policy_dir = store.root / "policies" / spec.label;
    fs::create_directories(policy_dir);
    if (!config.lr_grid.empty()) {
      if (fs::exists(policy_dir / "learning_rate.txt")) {
        tc.learning_rate = std::stod(read_text(policy_dir / "learning_rate.txt"));
      } else {
        // Validation split carved out of fold 0's training portion.
        const auto train_idx = split.training(0);
        const auto inner = training::kfold_split(train_idx.size(), std::max<std::size_t>(config.k_folds, 2),
                                                 derive_seed(config.seed, {0x6c72ULL}));
        std::vector<std::size_t> fit_idx, val_idx;
        for (std::size_t i = 0; i < train_idx.size(); ++i)
          (inner.assignments[i] == 0 ? val_idx : fit_idx).push_back(train_idx[i]);
        const Matrix x_fit = gather_rows(train.features, fit_idx);
        const Labels y_fit = gather(train.hard_labels, fit_idx);
        std::optional<Matrix> s_fit;
        if (train.soft_labels) s_fit = gather_rows(*train.soft_labels, fit_idx);
        const Matrix x_val = gather_rows(train.features, val_idx);
        const Matrix t_val = targets::one_hot_targets(gather(train.hard_labels, val_idx), train.num_classes);
        targets::PolicyInputs in;
        in.features = &x_fit;
        in.hard_labels = &y_fit;
        in.soft_labels = s_fit ? &*s_fit : nullptr;
        in.distill_sources = cv.distill_sources;
        in.num_classes = train.num_classes;
        in.seed = derive_seed(config.seed, {0x6c72ULL, 1});
        const auto provider = targets::make_provider(spec.policy, in);
        const auto gs = training::grid_search_lr(factory, *provider, config.lr_grid, tc, {&x_val, &t_val},
                                                 cv.pretrained);
        tc.learning_rate = gs.best_rate;
        std::ostringstream log;
        for (const auto &[rate, ce] : gs.validation_ce) log << num(rate) << ',' << num(ce) << '\n';
        write_text(policy_dir / "lr_grid.csv", "rate,validation_ce\n" + log.str());
        write_text(policy_dir / "learning_rate.txt", num(tc.learning_rate) + "\n");
      }
    }

    run_folds(spec.label, [&](std::size_t f, const fs::path &dir) {
      auto outcome = training::run_fold(factory, labelled, split, f, tc, cv);
      {
        std::ofstream h(dir / "history.csv");
        training::write_history(h, outcome.history);
      }
      if (auto *ref = dynamic_cast<const ReferenceModel *>(outcome.model.get())) {
        std::ofstream m(dir / "model.bin", std::ios::binary);
        write_model(m, *ref, store.digest);
      }
      evaluate_fold_model(ctx, *outcome.model, f, dir);
    });
  }

  write_text(store.root / "COMPLETE", "");
  return store;
}

// -- reading back ------------------------------------------------------------------

StoreContents load_store(const fs::path &root) {
  if (!fs::exists(root / "digest.txt")) throw DataError(fmt::format("'{}' is not a results store", root.string()));
  StoreContents store;
  store.digest = read_text(root / "digest.txt");
  if (!store.digest.empty() && store.digest.back() == '\n') store.digest.pop_back();

  {
    std::istringstream ds(read_text(root / "datasets.txt"));
    std::string line;
    while (std::getline(ds, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string name;
      ls >> name;
      double shift;
      if (ls >> shift) store.shift_levels[name] = shift;
      store.datasets.push_back(name);
    }
  }
  std::istringstream pl(read_text(root / "policies.txt"));
  std::string label;
  while (std::getline(pl, label)) {
    if (label.empty()) continue;
    PolicyRecord policy;
    policy.label = label;
    const fs::path pdir = root / "policies" / label;
    for (std::size_t f = 0;; ++f) {
      const fs::path dir = pdir / fmt::format("fold_{}", f);
      if (!fs::exists(dir)) break;
      FoldRecord fold;
      fold.fold = f;
      if (!fs::exists(dir / "DONE")) {
        fold.failed = true;
        fold.error = fs::exists(dir / "error.txt") ? read_text(dir / "error.txt") : "incomplete";
        policy.folds.push_back(std::move(fold));
        continue;
      }
      for (const auto &name : store.datasets) {
        std::ifstream in(dir / fmt::format("eval_{}.txt", name));
        if (!in) throw DataError(fmt::format("missing evaluation '{}' in {}", name, dir.string()));
        fold.evals[name] = metrics::read_report(in);
      }
      for (std::size_t a = 0;; ++a) {
        std::ifstream in(dir / fmt::format("attack_{}.txt", a));
        if (!in) break;
        fold.attacks.push_back(attacks::read_report(in));
      }
      policy.folds.push_back(std::move(fold));
    }
    store.policies.push_back(std::move(policy));
  }
  return store;
}

ReportFormat parse_report_format(const std::string &name) {
  if (name == "text" || name == "table") return ReportFormat::Text;
  if (name == "csv" || name == "delimited") return ReportFormat::Delimited;
  throw ConfigError(fmt::format("unknown report format '{}'", name));
}

namespace {

struct Stat {
  std::optional<training::Aggregate> agg;
};

Stat summarise(const std::vector<std::optional<double>> &values) {
  std::vector<double> present;
  for (const auto &v : values)
    if (v) present.push_back(*v);
  if (present.empty()) return {};
  return {training::aggregate(present)};
}

class Table {
public:
  Table(std::string title, std::vector<std::string> header) : title_(std::move(title)), header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  [[nodiscard]] std::string render(ReportFormat format) const {
    std::string out;
    if (format == ReportFormat::Delimited) {
      out += "# " + title_ + "\n";
      out += join(header_, ",") + "\n";
      for (const auto &r : rows_) out += join(r, ",") + "\n";
      return out;
    }
    std::vector<std::size_t> width(header_.size());
    for (std::size_t c = 0; c < header_.size(); ++c) {
      width[c] = header_[c].size();
      for (const auto &r : rows_) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string> &r) {
      std::string s;
      for (std::size_t c = 0; c < r.size(); ++c) {
        s += fmt::format("{:<{}}", r[c], width[c]);
        if (c + 1 < r.size()) s += "  ";
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s + "\n";
    };
    out += title_ + "\n";
    out += line(header_);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out += std::string(total > 2 ? total - 2 : 0, '-') + "\n";
    for (const auto &r : rows_) out += line(r);
    return out;
  }

private:
  static std::string join(const std::vector<std::string> &v, const char *sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
  }
  std::string title_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

} // namespace

std::string emit_report(const StoreContents &store, ReportFormat format) {
  if (store.policies.empty()) throw DataError("results store holds no policies");
  const bool text = format == ReportFormat::Text;
  auto value = [&](double v) { return text ? fmt::format("{:.4f}", v) : num(v); };
  auto mean_std = [&](const Stat &s) -> std::vector<std::string> {
    if (!s.agg) return text ? std::vector<std::string>{metrics::kAbsent}
                            : std::vector<std::string>{metrics::kAbsent, metrics::kAbsent};
    if (text) return {value(s.agg->mean) + " ± " + value(s.agg->stddev)};
    return {value(s.agg->mean), value(s.agg->stddev)};
  };
  auto mean_only = [&](const Stat &s) { return s.agg ? value(s.agg->mean) : std::string(metrics::kAbsent); };

  std::vector<std::string> header = {"policy", "dataset", "folds"};
  for (const char *m : {"accuracy", "ce_hard", "ce_soft", "sba"}) {
    if (text) {
      header.emplace_back(m);
    } else {
      header.push_back(std::string(m) + "_mean");
      header.push_back(std::string(m) + "_std");
    }
  }
  header.emplace_back("conf_correct");
  header.emplace_back("conf_incorrect");
  Table main("crossentropy and accuracy by policy and dataset", header);
  Table shift("metrics against shift level", {"policy", "dataset", "shift", "accuracy", "ce_hard"});
  Table attack("attacks on holdout folds", {"policy", "attack", "method", "epsilon_255", "pre_accuracy",
                                            "post_accuracy", "pre_ce", "post_ce"});
  Table curves("PGD crossentropy by iteration", {"policy", "attack", "iteration", "mean_ce"});

  for (const auto &policy : store.policies) {
    std::vector<const FoldRecord *> ok;
    for (const auto &f : policy.folds)
      if (!f.failed) ok.push_back(&f);

    for (const auto &ds : store.datasets) {
      std::vector<std::optional<double>> acc, ce_h, ce_s, sba, cc, ci;
      for (const auto *f : ok) {
        const auto &r = f->evals.at(ds);
        acc.emplace_back(r.top1_accuracy);
        ce_h.emplace_back(r.crossentropy_vs_hard);
        ce_s.push_back(r.crossentropy_vs_soft);
        sba.push_back(r.sba);
        cc.push_back(r.mean_confidence_correct);
        ci.push_back(r.mean_confidence_incorrect);
      }
      std::vector<std::string> row = {policy.label, ds, std::to_string(ok.size())};
      for (const auto *series : {&acc, &ce_h, &ce_s, &sba})
        for (auto &cell : mean_std(summarise(*series))) row.push_back(cell);
      row.push_back(mean_only(summarise(cc)));
      row.push_back(mean_only(summarise(ci)));
      main.add(std::move(row));

      if (auto it = store.shift_levels.find(ds); it != store.shift_levels.end())
        shift.add({policy.label, ds, value(it->second), mean_only(summarise(acc)), mean_only(summarise(ce_h))});
    }

    if (ok.empty()) continue;
    const std::size_t n_attacks = ok.front()->attacks.size();
    for (std::size_t a = 0; a < n_attacks; ++a) {
      std::vector<std::optional<double>> pre_a, post_a, pre_c, post_c;
      for (const auto *f : ok) {
        const auto &r = f->attacks.at(a);
        pre_a.emplace_back(r.pre_accuracy);
        post_a.emplace_back(r.post_accuracy);
        pre_c.emplace_back(r.pre_crossentropy);
        post_c.emplace_back(r.post_crossentropy);
      }
      const auto &cfg = ok.front()->attacks[a].config;
      attack.add({policy.label, std::to_string(a), attacks::to_string(cfg.method), std::to_string(cfg.epsilon_255),
                  mean_only(summarise(pre_a)), mean_only(summarise(post_a)), mean_only(summarise(pre_c)),
                  mean_only(summarise(post_c))});
      const std::size_t len = ok.front()->attacks[a].curve.size();
      for (std::size_t t = 0; t < len; ++t) {
        std::vector<std::optional<double>> pts;
        for (const auto *f : ok) pts.emplace_back(f->attacks.at(a).curve.at(t));
        curves.add({policy.label, std::to_string(a), std::to_string(t), mean_only(summarise(pts))});
      }
    }
  }

  std::string out;
  if (text) out += "results for config digest " + store.digest + "\n\n";
  out += main.render(format);
  out += "\n" + shift.render(format);
  out += "\n" + attack.render(format);
  out += "\n" + curves.render(format);
  return out;
}

} // namespace softlabel::bench
