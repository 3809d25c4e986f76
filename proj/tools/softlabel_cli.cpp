// Command-line front end: aggregate, synth, train, evaluate, attack, run, report.

#include "softlabel/attacks.hpp"
#include "softlabel/dataset.hpp"
#include "softlabel/experiment.hpp"
#include "softlabel/judgments.hpp"
#include "softlabel/metrics.hpp"
#include "softlabel/model.hpp"
#include "softlabel/targets.hpp"
#include "softlabel/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace softlabel;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::ifstream open_in(const fs::path &path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return in;
}

std::ofstream open_out(const fs::path &path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

struct DataArgs {
  std::vector<std::string> features;
  std::string soft_labels;
  std::string format = "feature_text";
  std::size_t classes = 10;
  bool lenient = false;

  void add_to(CLI::App *cmd) {
    cmd->add_option("--features", features, "feature file(s): delimited text or CIFAR-style binary batches")
        ->required();
    cmd->add_option("--soft-labels", soft_labels, "soft-label file joined by image id");
    cmd->add_option("--format", format, "feature_text | cifar_binary")->capture_default_str();
    cmd->add_option("--classes", classes, "number of classes")->capture_default_str();
    cmd->add_flag("--lenient", lenient, "drop unmatched ids instead of failing");
  }

  [[nodiscard]] bench::SoftLabelDataset load() const {
    bench::DatasetSpec spec;
    spec.name = fs::path(features.front()).stem().string();
    spec.format = bench::parse_file_format(format);
    for (const auto &f : features) spec.paths.emplace_back(f);
    if (!soft_labels.empty()) spec.soft_labels = soft_labels;
    spec.num_classes = classes;
    spec.strict = !lenient;
    auto result = bench::load_dataset(spec);
    for (const auto &id : result.unmatched_ids) std::cerr << "unmatched id: " << id << '\n';
    return std::move(result.dataset);
  }
};

std::unique_ptr<ReferenceModel> load_model_path(const std::string &path) {
  auto in = open_in(path, true);
  return std::make_unique<ReferenceModel>(load_model(read_model_file(in)));
}

// -- aggregate ---------------------------------------------------------------------

struct AggregateArgs {
  std::string input, output, summary, schema = "default";
  std::size_t classes = 10;
  double threshold = judgments::kDefaultCheckThreshold;
  double smoothing = 0.0;
  char delimiter = ',';
};

void cmd_aggregate(const AggregateArgs &a) {
  judgments::Schema schema;
  if (a.schema == "cifar10h")
    schema = judgments::Schema::cifar10h_raw();
  else if (a.schema != "default")
    throw ConfigError(fmt::format("unknown schema '{}'", a.schema));
  judgments::ParseOptions opts;
  opts.num_classes = a.classes;
  opts.delimiter = a.delimiter;
  auto in = open_in(a.input);
  const auto records = judgments::parse_judgments(in, schema, opts);
  const auto kept = judgments::filter_records(records, a.threshold);
  const auto agg = judgments::aggregate_distributions(kept, a.classes, a.smoothing);
  for (const auto &id : agg.empty_images) std::cerr << "no judgments left for image " << id << '\n';
  if (a.output.empty()) {
    judgments::write_soft_labels(std::cout, agg.distributions, a.delimiter);
  } else {
    auto out = open_out(a.output);
    judgments::write_soft_labels(out, agg.distributions, a.delimiter);
  }
  if (!a.summary.empty()) {
    auto out = open_out(a.summary);
    judgments::write_summary(out, judgments::dataset_summary(records, a.threshold));
  }
}

// -- synth -------------------------------------------------------------------------

struct SynthArgs {
  std::string config, output = "synth";
  std::optional<std::uint64_t> seed;
};

void write_split(const fs::path &dir, const bench::SoftLabelDataset &d) {
  {
    auto out = open_out(dir / (d.name + ".csv"));
    bench::write_feature_text(out, d);
  }
  if (d.soft_labels) {
    std::map<std::string, LabelDistribution> m;
    const auto dists = to_distributions(*d.soft_labels);
    for (std::size_t i = 0; i < d.size(); ++i) m[d.image_ids[i]] = dists[i];
    auto out = open_out(dir / (d.name + "_soft.csv"));
    judgments::write_soft_labels(out, m);
  }
}

void cmd_synth(const SynthArgs &a) {
  bench::SynthWorldConfig w;
  std::optional<double> target_entropy;
  if (!a.config.empty()) {
    const auto cfg = bench::load_experiment_config(a.config);
    if (cfg.dataset_kind != "synth") throw ConfigError("config does not describe a synthetic dataset");
    w = cfg.synth;
    w.seed = cfg.seed;
    target_entropy = cfg.synth_target_entropy;
  }
  if (a.seed) w.seed = *a.seed;
  if (target_entropy) w.overlap = bench::overlap_for_entropy(w, *target_entropy);
  const auto data = bench::make_synth_world(w);
  const fs::path dir = a.output;
  write_split(dir, data.train);
  for (const auto &t : data.tests) write_split(dir, t);
  if (data.pretrain) write_split(dir, *data.pretrain);
  auto out = open_out(dir / "world.txt");
  out << "classes: " << data.world.classes() << '\n'
      << "dims: " << data.world.dims() << '\n'
      << "overlap: " << fmt::format("{:.17g}", w.overlap) << '\n'
      << "sigma: " << fmt::format("{:.17g}", data.world.sigma()) << '\n';
  for (const auto &t : data.tests)
    out << "test: " << t.name << ' ' << fmt::format("{:.17g}", t.shift_level.value_or(0.0)) << '\n';
}

// -- train -------------------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string policy = "one_hot", optimizer = "adam", pretrained, output, history;
  std::vector<std::string> teachers;
  std::size_t epochs = 150, batch_size = 128, hidden = 64;
  double lr = 0.1, alpha = 1.0, temperature = 1.0;
  std::uint64_t seed = 0;
  bool per_step = false;
};

void cmd_train(const TrainArgs &a) {
  const auto data = a.data.load();
  training::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.seed = a.seed;
  cfg.policy.kind = targets::parse_policy_kind(a.policy);
  cfg.policy.mixup_alpha = a.alpha;
  cfg.policy.distill_temperature = a.temperature;
  cfg.policy.resample = a.per_step ? targets::Resample::PerStep : targets::Resample::PerEpoch;

  std::vector<std::unique_ptr<ReferenceModel>> teacher_models;
  targets::PolicyInputs in;
  in.features = &data.features;
  in.hard_labels = &data.hard_labels;
  in.soft_labels = data.soft_labels ? &*data.soft_labels : nullptr;
  in.num_classes = data.num_classes;
  in.seed = derive_seed(a.seed, {0x74617267ULL});
  for (const auto &t : a.teachers) {
    teacher_models.push_back(load_model_path(t));
    in.distill_sources.push_back(teacher_models.back().get());
  }
  cfg.policy.distill_sources = std::max<std::size_t>(1, in.distill_sources.size());
  cfg.validate();
  const auto provider = targets::make_provider(cfg.policy, in);

  std::unique_ptr<ClassifierBackend> model;
  std::vector<double> history;
  if (!a.pretrained.empty()) {
    const auto base = load_model_path(a.pretrained);
    auto res = training::fine_tune(*base, *provider, cfg);
    model = std::move(res.model);
    history = std::move(res.history);
  } else {
    model = std::make_unique<ReferenceModel>(
        ReferenceModelShape{static_cast<std::size_t>(data.features.cols()), a.hidden, data.num_classes},
        derive_seed(a.seed, {0x696e6974ULL}));
    history = training::train(*model, *provider, cfg).history;
  }
  if (!a.history.empty()) {
    auto out = open_out(a.history);
    training::write_history(out, history);
  }
  auto out = open_out(a.output, true);
  write_model(out, dynamic_cast<const ReferenceModel &>(*model), "");
  std::cout << fmt::format("final_loss: {:.6f}\n", history.empty() ? 0.0 : history.back());
}

// -- evaluate ----------------------------------------------------------------------

struct EvaluateArgs {
  DataArgs data;
  std::string model, output, sba = "second_rank";
};

void cmd_evaluate(const EvaluateArgs &a) {
  const auto data = a.data.load();
  const auto model = load_model_path(a.model);
  metrics::SbaMode mode;
  if (a.sba == "second_rank")
    mode = metrics::SbaMode::SecondRankMatch;
  else if (a.sba == "top_two")
    mode = metrics::SbaMode::TopTwoContainsTruth;
  else
    throw ConfigError(fmt::format("unknown sba mode '{}'", a.sba));
  const auto report = metrics::evaluate(*model, data.name, data.features, data.hard_labels,
                                        data.soft_labels ? &*data.soft_labels : nullptr, mode);
  if (a.output.empty()) {
    metrics::write_report(std::cout, report);
  } else {
    auto out = open_out(a.output);
    metrics::write_report(out, report);
  }
}

// -- attack ------------------------------------------------------------------------

struct AttackArgs {
  DataArgs data;
  std::string model, method = "fgsm", output, curve;
  int epsilon = 4;
  std::size_t steps = 40, max_examples = 0;
  double step_size = 0.0;
  bool random_start = false;
  std::uint64_t seed = 0;
};

void cmd_attack(const AttackArgs &a) {
  const auto data = a.data.load();
  const auto model = load_model_path(a.model);
  attacks::AttackConfig cfg;
  cfg.method = attacks::parse_method(a.method);
  cfg.epsilon_255 = a.epsilon;
  cfg.pgd_steps = a.steps;
  cfg.pgd_step_size = a.step_size;
  cfg.random_start = a.random_start;
  cfg.seed = a.seed;
  cfg.validate();
  Matrix x = data.features;
  Labels y = data.hard_labels;
  if (a.max_examples > 0 && a.max_examples < y.size()) {
    x = x.topRows(static_cast<Eigen::Index>(a.max_examples)).eval();
    y.resize(a.max_examples);
  }
  const auto report = attacks::robustness_eval(*model, x, y, cfg);
  if (a.output.empty()) {
    attacks::write_report(std::cout, report);
  } else {
    auto out = open_out(a.output);
    attacks::write_report(out, report);
  }
  if (!a.curve.empty()) {
    auto out = open_out(a.curve);
    attacks::write_curve(out, report);
  }
}

// -- run / report ------------------------------------------------------------------

struct RunArgs {
  std::string config, output_dir;
  std::optional<std::uint64_t> seed;
  bool overwrite = false, quiet = false;
};

void cmd_run(const RunArgs &a) {
  auto cfg = bench::load_experiment_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  bench::RunOptions opts;
  opts.overwrite = a.overwrite;
  if (!a.quiet) opts.progress = [](const std::string &line) { std::cerr << line << '\n'; };
  const auto store = bench::run_experiment(cfg, opts);
  std::cout << store.root.string() << '\n';
}

struct ReportArgs {
  std::string store, format = "text", output;
};

void cmd_report(const ReportArgs &a) {
  const auto format = bench::parse_report_format(a.format);
  const auto text = bench::emit_report(bench::load_store(a.store), format);
  if (a.output.empty()) {
    std::cout << text;
  } else {
    auto out = open_out(a.output);
    out << text;
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Soft-label training, evaluation and robustness experiments"};
  app.require_subcommand(1);

  AggregateArgs agg;
  auto *c_agg = app.add_subcommand("aggregate", "turn a judgment file into per-image soft labels");
  c_agg->add_option("--input", agg.input, "delimited judgment file")->required();
  c_agg->add_option("--output", agg.output, "soft-label file (stdout when omitted)");
  c_agg->add_option("--summary", agg.summary, "write dataset summary statistics here");
  c_agg->add_option("--classes", agg.classes)->capture_default_str();
  c_agg->add_option("--threshold", agg.threshold, "minimum attention-check score")->capture_default_str();
  c_agg->add_option("--smoothing", agg.smoothing, "additive count smoothing")->capture_default_str();
  c_agg->add_option("--delimiter", agg.delimiter)->capture_default_str();
  c_agg->add_option("--schema", agg.schema, "default | cifar10h")->capture_default_str();

  SynthArgs syn;
  auto *c_syn = app.add_subcommand("synth", "generate a synthetic world with exact posteriors");
  c_syn->add_option("--config", syn.config, "experiment config whose dataset section is synthetic");
  c_syn->add_option("--seed", syn.seed, "seed override");
  c_syn->add_option("--output", syn.output, "output directory")->capture_default_str();

  TrainArgs tr;
  auto *c_tr = app.add_subcommand("train", "train or fine-tune a reference model");
  tr.data.add_to(c_tr);
  c_tr->add_option("--policy", tr.policy, "one_hot | human_soft | sampled_hard | class_soft | mixup | distill")
      ->capture_default_str();
  c_tr->add_option("--epochs", tr.epochs)->capture_default_str();
  c_tr->add_option("--lr", tr.lr)->capture_default_str();
  c_tr->add_option("--batch-size", tr.batch_size)->capture_default_str();
  c_tr->add_option("--hidden", tr.hidden)->capture_default_str();
  c_tr->add_option("--optimizer", tr.optimizer, "adam | sgd")->capture_default_str();
  c_tr->add_option("--seed", tr.seed)->capture_default_str();
  c_tr->add_option("--alpha", tr.alpha, "mixup Beta parameter")->capture_default_str();
  c_tr->add_option("--temperature", tr.temperature, "distillation temperature")->capture_default_str();
  c_tr->add_option("--teacher", tr.teachers, "distillation source model (repeatable)");
  c_tr->add_flag("--per-step", tr.per_step, "resample hard targets every step instead of every epoch");
  c_tr->add_option("--pretrained", tr.pretrained, "fine-tune starting from this model");
  c_tr->add_option("--output", tr.output, "model file")->required();
  c_tr->add_option("--history", tr.history, "per-epoch loss file");

  EvaluateArgs ev;
  auto *c_ev = app.add_subcommand("evaluate", "evaluate a model on a dataset");
  ev.data.add_to(c_ev);
  c_ev->add_option("--model", ev.model)->required();
  c_ev->add_option("--sba", ev.sba, "second_rank | top_two")->capture_default_str();
  c_ev->add_option("--output", ev.output, "report file (stdout when omitted)");

  AttackArgs at;
  auto *c_at = app.add_subcommand("attack", "FGSM or PGD attack on a model");
  at.data.add_to(c_at);
  c_at->add_option("--model", at.model)->required();
  c_at->add_option("--method", at.method, "fgsm | pgd")->capture_default_str();
  c_at->add_option("--epsilon", at.epsilon, "perturbation budget in 1/255 units")->capture_default_str();
  c_at->add_option("--steps", at.steps, "PGD iterations")->capture_default_str();
  c_at->add_option("--step-size", at.step_size, "PGD step (default epsilon/4)");
  c_at->add_flag("--random-start", at.random_start);
  c_at->add_option("--seed", at.seed)->capture_default_str();
  c_at->add_option("--max-examples", at.max_examples, "attack only the first N examples");
  c_at->add_option("--output", at.output, "report file (stdout when omitted)");
  c_at->add_option("--curve", at.curve, "PGD curve file");

  RunArgs rn;
  auto *c_rn = app.add_subcommand("run", "run a full experiment from a config file");
  c_rn->add_option("--config", rn.config)->required();
  c_rn->add_option("--seed", rn.seed, "seed override");
  c_rn->add_option("--output-dir", rn.output_dir, "results root override");
  c_rn->add_flag("--overwrite", rn.overwrite, "replace an existing completed store");
  c_rn->add_flag("--quiet", rn.quiet, "no per-fold progress");

  ReportArgs rp;
  auto *c_rp = app.add_subcommand("report", "tables and series from a results store");
  c_rp->add_option("--store", rp.store)->required();
  c_rp->add_option("--format", rp.format, "text | csv")->capture_default_str();
  c_rp->add_option("--output", rp.output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_agg) cmd_aggregate(agg);
    if (*c_syn) cmd_synth(syn);
    if (*c_tr) cmd_train(tr);
    if (*c_ev) cmd_evaluate(ev);
    if (*c_at) cmd_attack(at);
    if (*c_rn) cmd_run(rn);
    if (*c_rp) cmd_report(rp);
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError &e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
