#include "softlabel/judgments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

namespace softlabel::judgments {

Schema Schema::cifar10h_raw() {
  Schema s;
  s.annotator_id = "annotator_id";
  s.image_id = "cifar10_test_test_idx";
  s.chosen_class = "chosen_label";
  s.trial_index = "trial_index";
  s.is_attention_check = "is_attn_check";
  s.true_class = "true_label";
  return s;
}

ParseError::ParseError(std::size_t line, const std::string &reason)
    : DataError(fmt::format("line {}: {}", line, reason)), line_(line) {}

namespace {

std::vector<std::string> split_row(const std::string &line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

bool read_line(std::istream &in, std::string &line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

template <typename T>
std::optional<T> parse_number(const std::string &s) {
  T value{};
  const auto *first = s.data();
  const auto *last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

std::optional<bool> parse_bool(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no" || s.empty()) return false;
  return std::nullopt;
}

} // namespace

std::vector<JudgmentRecord> parse_judgments(std::istream &source, const Schema &schema, const ParseOptions &options) {
  std::string line;
  if (!read_line(source, line)) throw DataError("judgment file is empty");
  if (!line.empty() && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const auto header = split_row(line, options.delimiter);
  auto column = [&](const std::string &name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(fmt::format("missing required column '{}'", name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_annotator = column(schema.annotator_id);
  const std::size_t c_image = column(schema.image_id);
  const std::size_t c_chosen = column(schema.chosen_class);
  const std::size_t c_trial = column(schema.trial_index);
  const std::size_t c_check = column(schema.is_attention_check);
  const std::size_t c_truth = column(schema.true_class);

  const auto k = static_cast<long long>(options.num_classes);
  auto is_unknown = [&](const std::string &cell) {
    return std::find(options.unknown_markers.begin(), options.unknown_markers.end(), cell) !=
           options.unknown_markers.end();
  };

  std::vector<JudgmentRecord> records;
  std::set<std::pair<std::string, std::size_t>> seen;
  std::size_t line_no = 1;
  while (read_line(source, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_row(line, options.delimiter);
    if (cells.size() != header.size())
      throw ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));

    JudgmentRecord rec;
    rec.annotator_id = cells[c_annotator];
    rec.image_id = cells[c_image];
    if (rec.annotator_id.empty()) throw ParseError(line_no, "empty annotator id");

    auto chosen = parse_number<long long>(cells[c_chosen]);
    if (!chosen) throw ParseError(line_no, fmt::format("chosen class '{}' is not an integer", cells[c_chosen]));
    if (*chosen < 0 || *chosen >= k)
      throw ParseError(line_no, fmt::format("chosen class {} outside [0, {})", *chosen, k));
    rec.chosen_class = static_cast<ClassIndex>(*chosen);

    auto trial = parse_number<long long>(cells[c_trial]);
    if (!trial || *trial < 0) throw ParseError(line_no, fmt::format("bad trial index '{}'", cells[c_trial]));
    rec.trial_index = static_cast<std::size_t>(*trial);

    auto check = parse_bool(cells[c_check]);
    if (!check) throw ParseError(line_no, fmt::format("bad attention-check flag '{}'", cells[c_check]));
    rec.is_attention_check = *check;

    if (!is_unknown(cells[c_truth])) {
      auto truth = parse_number<long long>(cells[c_truth]);
      if (!truth) throw ParseError(line_no, fmt::format("true class '{}' is not an integer", cells[c_truth]));
      if (*truth < 0 || *truth >= k)
        throw ParseError(line_no, fmt::format("true class {} outside [0, {})", *truth, k));
      rec.true_class = static_cast<ClassIndex>(*truth);
    }
    if (rec.is_attention_check && !rec.true_class)
      throw ParseError(line_no, "attention check without a true class");

    if (!seen.emplace(rec.annotator_id, rec.trial_index).second)
      throw ParseError(line_no, fmt::format("duplicate trial {} for annotator '{}'", rec.trial_index, rec.annotator_id));
    records.push_back(std::move(rec));
  }
  return records;
}

void write_judgments(std::ostream &out, const std::vector<JudgmentRecord> &records, const Schema &schema,
                     char delimiter) {
  const char d = delimiter;
  out << schema.annotator_id << d << schema.image_id << d << schema.chosen_class << d << schema.trial_index << d
      << schema.is_attention_check << d << schema.true_class << '\n';
  for (const auto &r : records) {
    out << r.annotator_id << d << r.image_id << d << r.chosen_class << d << r.trial_index << d
        << (r.is_attention_check ? 1 : 0) << d;
    if (r.true_class) out << *r.true_class;
    out << '\n';
  }
}

std::map<std::string, AnnotatorStats> score_annotators(const std::vector<JudgmentRecord> &records, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("attention-check threshold must lie in (0, 1]");
  std::map<std::string, AnnotatorStats> stats;
  for (const auto &r : records) {
    auto &s = stats[r.annotator_id];
    s.annotator_id = r.annotator_id;
    if (r.is_attention_check) {
      ++s.checks_seen;
      if (r.true_class && *r.true_class == r.chosen_class) ++s.checks_correct;
    }
  }
  for (auto &[id, s] : stats) {
    s.no_checks = s.checks_seen == 0;
    // tolerance absorbs rounding of threshold * checks_seen at the boundary
    s.accepted = s.no_checks ||
                 static_cast<double>(s.checks_correct) >= threshold * static_cast<double>(s.checks_seen) - 1e-12;
  }
  return stats;
}

std::vector<JudgmentRecord> filter_records(const std::vector<JudgmentRecord> &records, double threshold) {
  const auto stats = score_annotators(records, threshold);
  std::vector<JudgmentRecord> kept;
  kept.reserve(records.size());
  for (const auto &r : records)
    if (stats.at(r.annotator_id).accepted) kept.push_back(r);
  return kept;
}

Aggregation aggregate_distributions(const std::vector<JudgmentRecord> &records, std::size_t num_classes,
                                    double smoothing) {
  if (num_classes == 0) throw ConfigError("number of classes must be positive");
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) throw ConfigError("smoothing must be a finite nonnegative value");

  std::map<std::string, std::vector<std::size_t>> counts;
  std::set<std::string> referenced;
  for (const auto &r : records) {
    referenced.insert(r.image_id);
    if (r.is_attention_check) continue;
    if (r.chosen_class < 0 || static_cast<std::size_t>(r.chosen_class) >= num_classes)
      throw DataError(fmt::format("record for image '{}' has class {} outside [0, {})", r.image_id, r.chosen_class,
                                  num_classes));
    auto &c = counts[r.image_id];
    if (c.empty()) c.assign(num_classes, 0);
    ++c[static_cast<std::size_t>(r.chosen_class)];
  }

  Aggregation result;
  for (const auto &[image, c] : counts) {
    std::size_t total = 0;
    for (auto n : c) total += n;
    LabelDistribution d;
    d.support_count = total;
    d.probs.resize(num_classes);
    const double denom = static_cast<double>(total) + static_cast<double>(num_classes) * smoothing;
    for (std::size_t k = 0; k < num_classes; ++k) d.probs[k] = (static_cast<double>(c[k]) + smoothing) / denom;
    result.distributions.emplace(image, std::move(d));
  }
  for (const auto &image : referenced)
    if (!counts.contains(image)) result.empty_images.push_back(image);
  return result;
}

SummaryStats dataset_summary(const std::vector<JudgmentRecord> &records, double threshold) {
  SummaryStats s;
  s.total_judgments = records.size();
  std::unordered_map<std::string, std::size_t> per_image;
  std::set<std::string> annotators;
  for (const auto &r : records) {
    annotators.insert(r.annotator_id);
    if (!r.is_attention_check) ++per_image[r.image_id];
  }
  s.annotators = annotators.size();
  s.images = per_image.size();
  if (!per_image.empty()) {
    s.min_per_image = per_image.begin()->second;
    std::size_t total = 0;
    for (const auto &[id, n] : per_image) {
      s.min_per_image = std::min(s.min_per_image, n);
      s.max_per_image = std::max(s.max_per_image, n);
      total += n;
    }
    s.mean_per_image = static_cast<double>(total) / static_cast<double>(per_image.size());
  }
  for (const auto &[id, st] : score_annotators(records, threshold))
    if (!st.accepted) ++s.rejected_annotators;
  return s;
}

void write_summary(std::ostream &out, const SummaryStats &s) {
  out << "total_judgments: " << s.total_judgments << '\n'
      << "images: " << s.images << '\n'
      << "annotators: " << s.annotators << '\n'
      << "judgments_per_image_min: " << s.min_per_image << '\n'
      << "judgments_per_image_mean: " << fmt::format("{:.6f}", s.mean_per_image) << '\n'
      << "judgments_per_image_max: " << s.max_per_image << '\n'
      << "rejected_annotators: " << s.rejected_annotators << '\n';
}

void write_soft_labels(std::ostream &out, const std::map<std::string, LabelDistribution> &dists, char delimiter) {
  std::size_t k = dists.empty() ? 0 : dists.begin()->second.probs.size();
  out << "image_id" << delimiter << "support_count";
  for (std::size_t c = 0; c < k; ++c) out << delimiter << 'p' << c;
  out << '\n';
  for (const auto &[id, d] : dists) {
    if (d.probs.size() != k) throw DataError("soft labels have inconsistent class counts");
    out << id << delimiter << d.support_count;
    for (double p : d.probs) out << delimiter << fmt::format("{:.17g}", p);
    out << '\n';
  }
}

std::map<std::string, LabelDistribution> read_soft_labels(std::istream &in, char delimiter) {
  std::string line;
  if (!read_line(in, line)) throw DataError("soft-label file is empty");
  const auto header = split_row(line, delimiter);
  if (header.size() < 3 || header[0] != "image_id" || header[1] != "support_count")
    throw DataError("soft-label file must start with image_id, support_count and probability columns");
  const std::size_t k = header.size() - 2;

  std::map<std::string, LabelDistribution> out;
  std::size_t line_no = 1;
  while (read_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_row(line, delimiter);
    if (cells.size() != header.size())
      throw ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    LabelDistribution d;
    auto support = parse_number<unsigned long long>(cells[1]);
    if (!support) throw ParseError(line_no, "bad support_count");
    d.support_count = static_cast<std::size_t>(*support);
    d.probs.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
      auto p = parse_number<double>(cells[c + 2]);
      if (!p) throw ParseError(line_no, fmt::format("bad probability '{}'", cells[c + 2]));
      d.probs[c] = *p;
    }
    if (!is_valid_distribution(d.probs)) throw ParseError(line_no, "probabilities do not form a distribution");
    if (!out.emplace(cells[0], std::move(d)).second)
      throw ParseError(line_no, fmt::format("duplicate image id '{}'", cells[0]));
  }
  return out;
}

std::size_t fixture_checks_per_annotator(const FixtureSpec &spec) {
  return spec.check_every == 0 ? 0 : spec.trials_per_annotator / (spec.check_every + 1);
}

std::vector<JudgmentRecord> generate_fixture(const FixtureSpec &spec) {
  if (spec.num_classes < 2) throw ConfigError("fixture needs at least two classes");
  if (spec.num_images == 0) throw ConfigError("fixture needs at least one image");
  const std::size_t n_checks = fixture_checks_per_annotator(spec);
  for (auto c : spec.checks_correct)
    if (c > n_checks) throw ConfigError("checks_correct exceeds the number of attention checks");

  const auto k = spec.num_classes;
  // Per-image answer distribution: a dominant class plus one confusable class.
  std::vector<std::vector<double>> image_probs(spec.num_images, std::vector<double>(k, 0.0));
  std::vector<ClassIndex> image_truth(spec.num_images);
  {
    auto rng = make_engine(spec.seed, {0});
    for (std::size_t i = 0; i < spec.num_images; ++i) {
      const auto truth = static_cast<std::size_t>(i % k);
      const auto other = (truth + 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k - 1))) % k;
      const double major = 0.55 + 0.45 * uniform01(rng);
      image_probs[i][truth] = major;
      image_probs[i][other == truth ? (truth + 1) % k : other] += 1.0 - major;
      image_truth[i] = static_cast<ClassIndex>(truth);
    }
  }

  std::vector<JudgmentRecord> records;
  for (std::size_t a = 0; a < spec.checks_correct.size(); ++a) {
    auto rng = make_engine(spec.seed, {1, a});
    const std::string annotator = fmt::format("A{:04d}", a);
    std::size_t checks_done = 0;
    std::size_t stimulus_done = 0;
    for (std::size_t t = 0; t < spec.trials_per_annotator; ++t) {
      JudgmentRecord r;
      r.annotator_id = annotator;
      r.trial_index = t;
      const bool check_slot = spec.check_every > 0 && (t + 1) % (spec.check_every + 1) == 0 && checks_done < n_checks;
      if (check_slot) {
        const auto truth = static_cast<ClassIndex>(checks_done % k);
        r.is_attention_check = true;
        r.image_id = fmt::format("check{}", truth);
        r.true_class = truth;
        r.chosen_class = checks_done < spec.checks_correct[a] ? truth : static_cast<ClassIndex>((truth + 1) % k);
        ++checks_done;
      } else {
        const std::size_t img = (a * 7 + stimulus_done) % spec.num_images;
        r.image_id = fmt::format("img{:05d}", img);
        r.true_class = image_truth[img];
        r.chosen_class = sample_categorical(image_probs[img], rng);
        ++stimulus_done;
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

} // namespace softlabel::judgments
