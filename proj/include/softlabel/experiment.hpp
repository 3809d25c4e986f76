#pragma once

#include "softlabel/attacks.hpp"
#include "softlabel/dataset.hpp"
#include "softlabel/metrics.hpp"
#include "softlabel/targets.hpp"
#include "softlabel/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softlabel::bench {

struct PolicySpec {
  std::string label; ///< unique; defaults to the policy kind name
  targets::TargetPolicy policy;
};

struct AttackSpec {
  attacks::AttackConfig config;
  /// Attack at most this many holdout examples per fold (0 = all).
  std::size_t max_examples = 0;
};

struct PretrainSpec {
  std::size_t epochs = 20;
  double learning_rate = 0.01;
};

struct FileDatasetSpecs {
  DatasetSpec train;
  std::vector<DatasetSpec> tests;
  std::optional<DatasetSpec> pretrain;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::size_t k_folds = 10;

  /// Exactly one of synth / files is used, selected by dataset_kind.
  std::string dataset_kind = "synth";
  SynthWorldConfig synth;
  /// When set, synth.overlap is calibrated to this mean posterior entropy.
  std::optional<double> synth_target_entropy;
  FileDatasetSpecs files;

  std::size_t hidden = 64;
  training::TrainConfig train;
  std::vector<double> lr_grid;
  std::optional<PretrainSpec> pretrain;
  std::vector<PolicySpec> policies;
  std::vector<AttackSpec> attacks;
  metrics::SbaMode sba_mode = metrics::SbaMode::SecondRankMatch;

  void validate() const;
};

/// Parses the nested key: value (YAML) experiment format.
[[nodiscard]] ExperimentConfig parse_experiment_config(const std::string &text);
[[nodiscard]] ExperimentConfig load_experiment_config(const std::filesystem::path &path);

/// Canonical rendering of every field that influences results (not the output directory).
[[nodiscard]] std::string canonical_text(const ExperimentConfig &config);
/// Hex SHA-256 of canonical_text.
[[nodiscard]] std::string config_digest(const ExperimentConfig &config);
[[nodiscard]] std::string sha256_hex(const std::string &bytes);

/// Raised when a completed store for the same digest exists and overwrite is off.
class StoreExistsError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

struct RunOptions {
  bool overwrite = false;
  /// Receives one line per finished fold.
  std::function<void(const std::string &)> progress;
};

struct ResultsStore {
  std::filesystem::path root;
  std::string digest;
};

/// Directory a config's results are written to.
[[nodiscard]] std::filesystem::path store_path(const ExperimentConfig &config);

/**
 * Cross-validates every policy, evaluates each fold model on the holdout fold
 * and on every test dataset, and runs the configured attacks on the holdout
 * fold. Each fold is persisted on completion; completed folds are skipped
 * when an interrupted store is resumed. A failing fold is recorded in its
 * error.txt and the remaining folds still run.
 */
ResultsStore run_experiment(const ExperimentConfig &config, const RunOptions &options = {});

// -- reading a store back -------------------------------------------------------------

struct FoldRecord {
  std::size_t fold = 0;
  bool failed = false;
  std::string error;
  std::map<std::string, metrics::EvalReport> evals; ///< by dataset name
  std::vector<attacks::AttackReport> attacks;
};

struct PolicyRecord {
  std::string label;
  std::vector<FoldRecord> folds;
};

struct StoreContents {
  std::string digest;
  std::vector<std::string> datasets;             ///< evaluation order
  std::map<std::string, double> shift_levels;    ///< dataset -> shift (synthetic test sets only)
  std::vector<PolicyRecord> policies;            ///< config order
};

[[nodiscard]] StoreContents load_store(const std::filesystem::path &root);

enum class ReportFormat { Text, Delimited };
[[nodiscard]] ReportFormat parse_report_format(const std::string &name);

/**
 * Renders the policy x dataset table (mean and std across folds), the
 * metric-vs-shift series, the attack table and the PGD curves.
 */
[[nodiscard]] std::string emit_report(const StoreContents &store, ReportFormat format);

} // namespace softlabel::bench
