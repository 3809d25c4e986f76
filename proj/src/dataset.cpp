#include "softlabel/dataset.hpp"

#include "softlabel/judgments.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace softlabel::bench {

void SoftLabelDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(hard_labels.size());
  if (features.rows() != n) throw DataError(fmt::format("{}: {} feature rows but {} labels", name, features.rows(), n));
  if (!image_ids.empty() && image_ids.size() != hard_labels.size())
    throw DataError(fmt::format("{}: {} image ids but {} labels", name, image_ids.size(), hard_labels.size()));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index d = 0; d < features.cols(); ++d)
      if (!(features(i, d) >= 0.0 && features(i, d) <= 1.0))
        throw DataError(fmt::format("{}: feature ({}, {}) = {} outside [0,1]", name, i, d, features(i, d)));
  for (auto y : hard_labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw DataError(fmt::format("{}: label {} outside [0, {})", name, y, num_classes));
  if (soft_labels) {
    if (soft_labels->rows() != n || static_cast<std::size_t>(soft_labels->cols()) != num_classes)
      throw DataError(fmt::format("{}: soft label matrix has the wrong shape", name));
    for (Eigen::Index i = 0; i < n; ++i)
      if (!is_valid_distribution(row_span(*soft_labels, i)))
        throw DataError(fmt::format("{}: soft label row {} is not a distribution", name, i));
  }
}

FileFormat parse_file_format(const std::string &name) {
  if (name == "cifar_binary" || name == "cifar") return FileFormat::CifarBinary;
  if (name == "feature_text" || name == "text") return FileFormat::FeatureText;
  throw ConfigError(fmt::format("unknown dataset format '{}'", name));
}

// -- CIFAR-style binary -----------------------------------------------------------

SoftLabelDataset read_cifar_binary(std::istream &in, std::size_t num_classes, std::size_t first_id) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0)
    throw DataError(fmt::format("binary batch length {} is not a multiple of {}", bytes.size(), kCifarRecordBytes));
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  SoftLabelDataset data;
  data.num_classes = num_classes;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kCifarImageBytes));
  data.hard_labels.resize(n);
  data.image_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char *rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= num_classes)
      throw DataError(fmt::format("record {} has label {} outside [0, {})", i, rec[0], num_classes));
    data.hard_labels[i] = rec[0];
    data.image_ids[i] = std::to_string(first_id + i);
    for (std::size_t d = 0; d < kCifarImageBytes; ++d)
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rec[1 + d] / 255.0;
  }
  return data;
}

void write_cifar_binary(std::ostream &out, const SoftLabelDataset &data) {
  if (static_cast<std::size_t>(data.features.cols()) != kCifarImageBytes)
    throw DataError("CIFAR-style batches hold exactly 3072 features per record");
  std::vector<char> rec(kCifarRecordBytes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    rec[0] = static_cast<char>(data.hard_labels[i]);
    for (std::size_t d = 0; d < kCifarImageBytes; ++d)
      rec[1 + d] = static_cast<char>(static_cast<unsigned char>(
          std::lround(data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) * 255.0)));
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
}

// -- delimited feature text --------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string &line, char delim) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    cells.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

bool read_line(std::istream &in, std::string &line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

} // namespace

SoftLabelDataset read_feature_text(std::istream &in, std::size_t num_classes, char delimiter) {
  std::string line;
  if (!read_line(in, line)) throw DataError("feature file is empty");
  const auto header = split(line, delimiter);
  if (header.size() < 3 || header[0] != "image_id" || header[1] != "label")
    throw DataError("feature file must start with image_id, label and feature columns");
  const std::size_t dims = header.size() - 2;

  SoftLabelDataset data;
  data.num_classes = num_classes;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (read_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, delimiter);
    if (cells.size() != header.size())
      throw judgments::ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    int label = 0;
    auto [p, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), label);
    if (ec != std::errc{} || p != cells[1].data() + cells[1].size() || label < 0 ||
        static_cast<std::size_t>(label) >= num_classes)
      throw judgments::ParseError(line_no, fmt::format("bad label '{}'", cells[1]));
    data.image_ids.push_back(cells[0]);
    data.hard_labels.push_back(label);
    for (std::size_t d = 0; d < dims; ++d) {
      double v = 0.0;
      const auto &c = cells[d + 2];
      auto [q, ec2] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec2 != std::errc{} || q != c.data() + c.size())
        throw judgments::ParseError(line_no, fmt::format("bad feature value '{}'", c));
      values.push_back(v);
    }
  }
  data.features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(data.hard_labels.size()),
                                           static_cast<Eigen::Index>(dims));
  return data;
}

void write_feature_text(std::ostream &out, const SoftLabelDataset &data, char delimiter) {
  out << "image_id" << delimiter << "label";
  for (Eigen::Index d = 0; d < data.features.cols(); ++d) out << delimiter << 'f' << d;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << (data.image_ids.empty() ? std::to_string(i) : data.image_ids[i]) << delimiter << data.hard_labels[i];
    for (Eigen::Index d = 0; d < data.features.cols(); ++d)
      out << delimiter << fmt::format("{:.17g}", data.features(static_cast<Eigen::Index>(i), d));
    out << '\n';
  }
}

LoadResult join_soft_labels(SoftLabelDataset data, const std::map<std::string, LabelDistribution> &soft, bool strict) {
  LoadResult result;
  std::set<std::string> ids(data.image_ids.begin(), data.image_ids.end());
  for (const auto &[id, d] : soft) {
    if (d.probs.size() != data.num_classes)
      throw DataError(fmt::format("soft label for '{}' has {} classes, expected {}", id, d.probs.size(), data.num_classes));
    if (!ids.contains(id)) result.unmatched_ids.push_back(id);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (soft.contains(data.image_ids[i]))
      keep.push_back(i);
    else
      result.unmatched_ids.push_back(data.image_ids[i]);
  }
  if (strict && !result.unmatched_ids.empty())
    throw DataError(fmt::format("{} unmatched image id(s) when joining soft labels, first: '{}'",
                                result.unmatched_ids.size(), result.unmatched_ids.front()));

  SoftLabelDataset out;
  out.name = data.name;
  out.num_classes = data.num_classes;
  out.provenance = data.provenance;
  out.shift_level = data.shift_level;
  out.features = gather_rows(data.features, keep);
  out.hard_labels = gather(data.hard_labels, keep);
  out.image_ids = gather(data.image_ids, keep);
  Matrix s(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(data.num_classes));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto &p = soft.at(out.image_ids[r]).probs;
    for (std::size_t c = 0; c < p.size(); ++c) s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = p[c];
  }
  out.soft_labels = std::move(s);
  result.dataset = std::move(out);
  return result;
}

LoadResult load_dataset(const DatasetSpec &spec) {
  if (spec.paths.empty()) throw ConfigError(fmt::format("dataset '{}' names no files", spec.name));
  SoftLabelDataset data;
  data.num_classes = spec.num_classes;
  for (const auto &path : spec.paths) {
    const bool binary = spec.format == FileFormat::CifarBinary;
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    SoftLabelDataset part = binary ? read_cifar_binary(in, spec.num_classes, data.size())
                                   : read_feature_text(in, spec.num_classes, spec.delimiter);
    if (data.size() == 0) {
      data.features = std::move(part.features);
    } else {
      if (part.features.cols() != data.features.cols())
        throw DataError(fmt::format("'{}' has a different feature width", path.string()));
      Matrix merged(data.features.rows() + part.features.rows(), data.features.cols());
      merged << data.features, part.features;
      data.features = std::move(merged);
    }
    data.hard_labels.insert(data.hard_labels.end(), part.hard_labels.begin(), part.hard_labels.end());
    data.image_ids.insert(data.image_ids.end(), part.image_ids.begin(), part.image_ids.end());
  }
  data.name = spec.name;
  data.provenance = Provenance::RealFile;

  LoadResult result;
  if (spec.soft_labels) {
    std::ifstream in(*spec.soft_labels);
    if (!in) throw DataError(fmt::format("cannot open '{}'", spec.soft_labels->string()));
    result = join_soft_labels(std::move(data), judgments::read_soft_labels(in, spec.delimiter), spec.strict);
  } else {
    result.dataset = std::move(data);
  }
  result.dataset.validate();
  return result;
}

// -- synthetic world -----------------------------------------------------------------

void SynthWorldConfig::validate() const {
  if (classes < 2) throw ConfigError("synthetic world needs at least two classes");
  if (dims == 0) throw ConfigError("synthetic world needs at least one dimension");
  if (!(overlap > 0.0) || !std::isfinite(overlap)) throw ConfigError("overlap must be positive");
  if (!(mean_spread >= 0.0 && mean_spread <= 1.0)) throw ConfigError("mean spread must lie in [0, 1]");
  for (std::size_t i = 0; i < shift_levels.size(); ++i) {
    if (!(shift_levels[i] >= 0.0)) throw ConfigError("shift levels must be nonnegative");
    if (i > 0 && shift_levels[i] < shift_levels[i - 1]) throw ConfigError("shift schedule must be non-decreasing");
  }
  if (!means.empty()) {
    if (means.size() != classes) throw ConfigError("explicit means need one row per class");
    for (const auto &m : means)
      if (m.size() != dims) throw ConfigError("explicit means need one entry per dimension");
  }
}

namespace {

// log P(0 <= X <= 1) for X ~ N(mu, sigma^2), using the tail form that avoids cancellation.
double log_box_mass(double mu, double sigma) {
  auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const double a = (0.0 - mu) / sigma;
  const double b = (1.0 - mu) / sigma;
  double mass;
  if (a >= 0.0)
    mass = phi(-a) - phi(-b);
  else if (b <= 0.0)
    mass = phi(b) - phi(a);
  else
    mass = 1.0 - phi(a) - phi(-b);
  if (!(mass > 0.0)) throw ConfigError("degenerate covariance: class density has no mass inside the unit box");
  return std::log(mass);
}

} // namespace

SynthWorld::SynthWorld(const SynthWorldConfig &config) {
  config.validate();
  const auto k = static_cast<Eigen::Index>(config.classes);
  const auto d = static_cast<Eigen::Index>(config.dims);
  means_.resize(k, d);
  directions_.resize(k, d);
  auto rng = make_engine(config.seed, {0x776f726c64ULL});
  for (Eigen::Index c = 0; c < k; ++c)
    for (Eigen::Index j = 0; j < d; ++j)
      means_(c, j) = config.means.empty() ? 0.5 + config.mean_spread * (uniform01(rng) - 0.5)
                                          : config.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < d; ++j) directions_(c, j) = normal(rng);
    directions_.row(c).normalize();
  }

  double d_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a + 1; b < k; ++b) d_min = std::min(d_min, (means_.row(a) - means_.row(b)).norm());
  sigma_ = config.overlap * d_min;
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
    throw ConfigError("degenerate covariance: class means coincide or overlap is not positive");

  for (double s : config.shift_levels) {
    const Matrix m = shifted_means(s);
    if (m.minCoeff() < 0.0 || m.maxCoeff() > 1.0)
      throw ConfigError(fmt::format("shift level {} moves a class mean outside the unit box", s));
    (void)log_normalizers(m);
  }
}

Matrix SynthWorld::shifted_means(double shift) const { return means_ + shift * directions_; }

Vector SynthWorld::log_normalizers(const Matrix &means) const {
  Vector out(means.rows());
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < means.cols(); ++j) s += log_box_mass(means(c, j), sigma_);
    out(c) = s;
  }
  return out;
}

namespace {

RowVector posterior_from(std::span<const double> x, const Matrix &means, const Vector &log_z, double sigma) {
  const auto k = means.rows();
  RowVector logit(k);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index c = 0; c < k; ++c) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < means.cols(); ++j) {
      const double diff = x[static_cast<std::size_t>(j)] - means(c, j);
      sq += diff * diff;
    }
    logit(c) = -sq * inv - log_z(c);
  }
  const double mx = logit.maxCoeff();
  RowVector p = (logit.array() - mx).exp().matrix();
  return p / p.sum();
}

} // namespace

RowVector SynthWorld::posterior(std::span<const double> x, double shift) const {
  if (x.size() != dims()) throw ConfigError("point dimension differs from the world dimension");
  const Matrix m = shifted_means(shift);
  return posterior_from(x, m, log_normalizers(m), sigma_);
}

SoftLabelDataset SynthWorld::draw(std::size_t n, double shift, std::uint64_t stream_seed, const std::string &name) const {
  const Matrix m = shifted_means(shift);
  const Vector log_z = log_normalizers(m);
  const auto k = classes();
  SoftLabelDataset data;
  data.name = name;
  data.num_classes = k;
  data.provenance = Provenance::Synthetic;
  data.shift_level = shift;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims()));
  Matrix soft(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  data.hard_labels.resize(n);
  data.image_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_engine(stream_seed, {i});
    auto y = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
    if (y >= k) y = k - 1;
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      double v;
      do {
        v = m(static_cast<Eigen::Index>(y), j) + sigma_ * normal(rng);
      } while (v < 0.0 || v > 1.0);
      data.features(row, j) = v;
    }
    data.hard_labels[i] = static_cast<ClassIndex>(y);
    data.image_ids[i] = fmt::format("{}_{}", name, i);
    soft.row(row) = posterior_from(row_span(data.features, row), m, log_z, sigma_);
  }
  data.soft_labels = std::move(soft);
  return data;
}

double SynthWorld::mean_posterior_entropy(std::size_t n, std::uint64_t stream_seed) const {
  const auto sample = draw(n, 0.0, stream_seed, "entropy");
  double total = 0.0;
  for (Eigen::Index i = 0; i < sample.soft_labels->rows(); ++i)
    for (Eigen::Index c = 0; c < sample.soft_labels->cols(); ++c) {
      const double p = (*sample.soft_labels)(i, c);
      if (p > 0.0) total -= p * std::log(p);
    }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::uint64_t train_stream(std::uint64_t seed) { return derive_seed(seed, {0x747261696eULL}); }
std::uint64_t test_stream(std::uint64_t seed, std::size_t level_index) {
  return derive_seed(seed, {0x74657374ULL, level_index});
}
std::uint64_t pretrain_stream(std::uint64_t seed) { return derive_seed(seed, {0x707265ULL}); }

SynthData make_synth_world(const SynthWorldConfig &config) {
  SynthWorld world(config);
  SoftLabelDataset train = world.draw(config.n_train, 0.0, train_stream(config.seed), "train");
  std::vector<SoftLabelDataset> tests;
  for (std::size_t i = 0; i < config.shift_levels.size(); ++i)
    tests.push_back(world.draw(config.n_test, config.shift_levels[i], test_stream(config.seed, i),
                               fmt::format("shift_{}", i)));
  std::optional<SoftLabelDataset> pretrain;
  if (config.n_pretrain > 0) pretrain = world.draw(config.n_pretrain, 0.0, pretrain_stream(config.seed), "pretrain");
  return SynthData{std::move(world), std::move(train), std::move(tests), std::move(pretrain)};
}

double overlap_for_entropy(SynthWorldConfig config, double target_nats, std::size_t samples) {
  const double max_entropy = std::log(static_cast<double>(config.classes));
  if (!(target_nats > 0.0 && target_nats < max_entropy))
    throw ConfigError("target entropy must lie strictly between 0 and ln K");
  double lo = 1e-3, hi = 4.0;
  const auto stream = derive_seed(config.seed, {0x63616cULL});
  for (int it = 0; it < 40; ++it) {
    config.overlap = 0.5 * (lo + hi);
    const double h = SynthWorld(config).mean_posterior_entropy(samples, stream);
    (h < target_nats ? lo : hi) = config.overlap;
  }
  return 0.5 * (lo + hi);
}

} // namespace softlabel::bench
