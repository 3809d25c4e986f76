#pragma once

#include "softlabel/core.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softlabel::judgments {

/// One annotator's categorization of one image.
struct JudgmentRecord {
  std::string annotator_id;
  std::string image_id;
  ClassIndex chosen_class = 0;
  std::size_t trial_index = 0;
  bool is_attention_check = false;
  std::optional<ClassIndex> true_class;

  bool operator==(const JudgmentRecord &) const = default;
};

/// Maps logical record fields to column names in a delimited file.
struct Schema {
  std::string annotator_id = "annotator_id";
  std::string image_id = "image_id";
  std::string chosen_class = "chosen_class";
  std::string trial_index = "trial_index";
  std::string is_attention_check = "is_attention_check";
  std::string true_class = "true_class";

  /// Column names used by the public CIFAR-10H raw release.
  static Schema cifar10h_raw();
};

struct ParseOptions {
  std::size_t num_classes = 10;
  char delimiter = ',';
  /// Cells equal to one of these (or empty) mean "unknown" for true_class.
  std::vector<std::string> unknown_markers = {"", "-99999", "NA", "-1"};
};

/// Thrown for malformed rows; carries the 1-based file line number.
class ParseError : public DataError {
public:
  ParseError(std::size_t line, const std::string &reason);
  [[nodiscard]] std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/**
 * Reads a delimited judgment file with a header row. Every data row yields
 * one record. Rows with out-of-range class indices, unparsable cells, or a
 * repeated (annotator_id, trial_index) pair raise ParseError naming the line.
 */
[[nodiscard]] std::vector<JudgmentRecord> parse_judgments(std::istream &source, const Schema &schema,
                                                          const ParseOptions &options = {});

void write_judgments(std::ostream &out, const std::vector<JudgmentRecord> &records, const Schema &schema = {},
                     char delimiter = ',');

struct AnnotatorStats {
  std::string annotator_id;
  std::size_t checks_seen = 0;
  std::size_t checks_correct = 0;
  bool accepted = true;
  /// Set when the annotator saw no attention checks (accepted by default).
  bool no_checks = false;

  [[nodiscard]] double score() const {
    return checks_seen == 0 ? 1.0 : static_cast<double>(checks_correct) / static_cast<double>(checks_seen);
  }
};

inline constexpr double kDefaultCheckThreshold = 0.75;

/// Per-annotator attention-check accuracy; accepted iff score >= threshold.
[[nodiscard]] std::map<std::string, AnnotatorStats> score_annotators(const std::vector<JudgmentRecord> &records,
                                                                     double threshold = kDefaultCheckThreshold);

/// Drops every record of annotators rejected at `threshold`.
[[nodiscard]] std::vector<JudgmentRecord> filter_records(const std::vector<JudgmentRecord> &records,
                                                         double threshold = kDefaultCheckThreshold);

struct Aggregation {
  std::map<std::string, LabelDistribution> distributions;
  /// Images referenced only by excluded (attention-check) trials.
  std::vector<std::string> empty_images;
};

/**
 * Counts stimulus judgments per image: probs[c] = (n_c + s) / (n + K s).
 * Attention-check trials are skipped.
 */
[[nodiscard]] Aggregation aggregate_distributions(const std::vector<JudgmentRecord> &records, std::size_t num_classes,
                                                  double smoothing = 0.0);

struct SummaryStats {
  std::size_t total_judgments = 0;
  std::size_t images = 0;
  std::size_t annotators = 0;
  std::size_t min_per_image = 0;
  double mean_per_image = 0.0;
  std::size_t max_per_image = 0;
  std::size_t rejected_annotators = 0;
};

/// Headline counts. Per-image figures cover stimulus trials only.
[[nodiscard]] SummaryStats dataset_summary(const std::vector<JudgmentRecord> &records,
                                           double threshold = kDefaultCheckThreshold);

void write_summary(std::ostream &out, const SummaryStats &stats);

// -- soft-label file --------------------------------------------------------

/// image_id, support_count, p0..p{K-1}; probabilities printed with 17 significant digits.
void write_soft_labels(std::ostream &out, const std::map<std::string, LabelDistribution> &dists, char delimiter = ',');

[[nodiscard]] std::map<std::string, LabelDistribution> read_soft_labels(std::istream &in, char delimiter = ',');

// -- synthetic fixtures -------------------------------------------------------

struct FixtureSpec {
  std::size_t num_classes = 10;
  std::size_t num_images = 50;
  std::size_t trials_per_annotator = 40;
  /// An attention check follows every `check_every` stimulus trials.
  std::size_t check_every = 4;
  /// Correct checks per annotator; its length sets the annotator count.
  std::vector<std::size_t> checks_correct;
  std::uint64_t seed = 1;
};

/// Number of attention checks each fixture annotator sees.
[[nodiscard]] std::size_t fixture_checks_per_annotator(const FixtureSpec &spec);

/**
 * Generates judgment records in which annotator a answers exactly
 * spec.checks_correct[a] of its attention checks correctly. Stimulus answers
 * are drawn from a per-image categorical distribution.
 */
[[nodiscard]] std::vector<JudgmentRecord> generate_fixture(const FixtureSpec &spec);

} // namespace softlabel::judgments
