#pragma once

#include "softlabel/core.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softlabel::bench {

enum class Provenance { RealFile, Synthetic };

struct SoftLabelDataset {
  std::string name;
  Matrix features; ///< N x D, entries in [0,1]
  Labels hard_labels;
  std::optional<Matrix> soft_labels; ///< N x K when present
  std::vector<std::string> image_ids;
  std::size_t num_classes = 0;
  Provenance provenance = Provenance::RealFile;
  std::optional<double> shift_level;

  [[nodiscard]] std::size_t size() const { return hard_labels.size(); }
  /// Throws DataError if lengths disagree, features leave [0,1] or soft rows are not distributions.
  void validate() const;
};

// -- file formats --------------------------------------------------------------

enum class FileFormat { CifarBinary, FeatureText };

[[nodiscard]] FileFormat parse_file_format(const std::string &name);

struct DatasetSpec {
  std::string name;
  FileFormat format = FileFormat::FeatureText;
  std::vector<std::filesystem::path> paths; ///< several CIFAR batches are concatenated
  std::optional<std::filesystem::path> soft_labels;
  std::size_t num_classes = 10;
  bool strict = true;
  char delimiter = ',';
};

struct LoadResult {
  SoftLabelDataset dataset;
  /// Soft-label ids with no feature row, then feature rows with no soft label.
  std::vector<std::string> unmatched_ids;
};

[[nodiscard]] LoadResult load_dataset(const DatasetSpec &spec);

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = kCifarImageBytes + 1;

/// CIFAR-style records: one label byte then 3072 pixel bytes; ids are record offsets from `first_id`.
[[nodiscard]] SoftLabelDataset read_cifar_binary(std::istream &in, std::size_t num_classes, std::size_t first_id = 0);
/// Pixels are written as round(255 x feature).
void write_cifar_binary(std::ostream &out, const SoftLabelDataset &data);

/// Header "image_id,label,f0..f{D-1}"; features printed with 17 significant digits.
[[nodiscard]] SoftLabelDataset read_feature_text(std::istream &in, std::size_t num_classes, char delimiter = ',');
void write_feature_text(std::ostream &out, const SoftLabelDataset &data, char delimiter = ',');

/// Attaches soft labels by image id. Strict mode rejects any unmatched id.
LoadResult join_soft_labels(SoftLabelDataset data, const std::map<std::string, LabelDistribution> &soft, bool strict);

// -- synthetic world -------------------------------------------------------------

/**
 * Gaussian class-conditionals with a shared isotropic covariance, truncated
 * to the unit box so features stay in [0,1]. Classes are equiprobable.
 */
struct SynthWorldConfig {
  std::size_t classes = 4;
  std::size_t dims = 16;
  /// Class means are drawn uniformly from [0.5 - spread/2, 0.5 + spread/2]^D.
  double mean_spread = 0.4;
  /// Overrides the random means when non-empty (classes x dims).
  std::vector<std::vector<double>> means;
  /// Standard deviation as a multiple of the smallest distance between class means.
  double overlap = 0.25;
  /// Magnitudes by which every class mean is translated for the test sets; non-decreasing.
  std::vector<double> shift_levels = {0.0};
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t n_pretrain = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Generative parameters of a synthetic world.
class SynthWorld {
public:
  explicit SynthWorld(const SynthWorldConfig &config);

  [[nodiscard]] std::size_t classes() const { return static_cast<std::size_t>(means_.rows()); }
  [[nodiscard]] std::size_t dims() const { return static_cast<std::size_t>(means_.cols()); }
  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] const Matrix &means() const { return means_; }
  /// Unit translation direction of each class mean.
  [[nodiscard]] const Matrix &shift_directions() const { return directions_; }

  /// Class means after translating each by `shift` along its direction.
  [[nodiscard]] Matrix shifted_means(double shift) const;

  /// Exact posterior p(y | x) under the world shifted by `shift`.
  [[nodiscard]] RowVector posterior(std::span<const double> x, double shift = 0.0) const;

  /// n labelled points from the world shifted by `shift`, drawn from stream `stream_seed`.
  [[nodiscard]] SoftLabelDataset draw(std::size_t n, double shift, std::uint64_t stream_seed,
                                      const std::string &name) const;

  /// Mean entropy (nats) of the unshifted posterior over n fresh samples.
  [[nodiscard]] double mean_posterior_entropy(std::size_t n, std::uint64_t stream_seed) const;

private:
  [[nodiscard]] Vector log_normalizers(const Matrix &means) const;

  Matrix means_;
  Matrix directions_;
  double sigma_ = 0.0;
};

struct SynthData {
  SynthWorld world;
  SoftLabelDataset train;
  std::vector<SoftLabelDataset> tests; ///< one per shift level, in schedule order
  std::optional<SoftLabelDataset> pretrain;
};

/// Stream seeds used by make_synth_world for each split.
[[nodiscard]] std::uint64_t train_stream(std::uint64_t seed);
[[nodiscard]] std::uint64_t test_stream(std::uint64_t seed, std::size_t level_index);
[[nodiscard]] std::uint64_t pretrain_stream(std::uint64_t seed);

[[nodiscard]] SynthData make_synth_world(const SynthWorldConfig &config);

/// Overlap at which the unshifted world's mean posterior entropy is `target_nats` (bisection).
[[nodiscard]] double overlap_for_entropy(SynthWorldConfig config, double target_nats, std::size_t samples = 4000);

} // namespace softlabel::bench
