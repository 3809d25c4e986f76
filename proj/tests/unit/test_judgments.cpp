#include "softlabel/judgments.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace softlabel;
using namespace softlabel::judgments;

namespace {

const char *kFourRows =
    "annotator_id,image_id,chosen_class,trial_index,is_attention_check,true_class\n"
    "w1,img_a,3,0,0,\n"
    "w1,chk,7,1,1,7\n"
    "w2,img_a,5,0,0,-99999\n"
    "w2,img_b,0,1,0,0\n";

std::vector<JudgmentRecord> parse(const std::string &text, std::size_t k = 10) {
  std::istringstream in(text);
  ParseOptions o;
  o.num_classes = k;
  return parse_judgments(in, Schema{}, o);
}

JudgmentRecord stim(const std::string &ann, const std::string &img, int c, std::size_t trial) {
  JudgmentRecord r;
  r.annotator_id = ann;
  r.image_id = img;
  r.chosen_class = c;
  r.trial_index = trial;
  return r;
}

JudgmentRecord check(const std::string &ann, int chosen, int truth, std::size_t trial) {
  JudgmentRecord r = stim(ann, "check", chosen, trial);
  r.is_attention_check = true;
  r.true_class = truth;
  return r;
}

} // namespace

TEST(ParseJudgments, FourRowFixture) {
  const auto recs = parse(kFourRows);
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_EQ(recs[0].annotator_id, "w1");
  EXPECT_EQ(recs[0].image_id, "img_a");
  EXPECT_EQ(recs[0].chosen_class, 3);
  EXPECT_FALSE(recs[0].true_class.has_value());
  EXPECT_TRUE(recs[1].is_attention_check);
  EXPECT_EQ(recs[1].true_class, 7);
  EXPECT_EQ(recs[2].trial_index, 0u);
  EXPECT_FALSE(recs[2].true_class.has_value());
  EXPECT_EQ(recs[3].true_class, 0);
}

TEST(ParseJudgments, OutOfRangeClassNamesTheLine) {
  std::string text = "annotator_id,image_id,chosen_class,trial_index,is_attention_check,true_class\n"
                     "w1,img_a,3,0,0,\n"
                     "w1,img_b,12,1,0,\n";
  try {
    (void)parse(text, 10);
    FAIL() << "expected a parse error";
  } catch (const ParseError &e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ParseJudgments, MissingColumnAndEmptyFile) {
  EXPECT_THROW((void)parse(""), DataError);
  EXPECT_THROW((void)parse("annotator_id,image_id,chosen_class\nw,i,1\n"), DataError);
}

TEST(ParseJudgments, DuplicateTrialRejected) {
  std::string text = "annotator_id,image_id,chosen_class,trial_index,is_attention_check,true_class\n"
                     "w1,img_a,3,0,0,\n"
                     "w1,img_b,2,0,0,\n";
  EXPECT_THROW((void)parse(text), ParseError);
}

TEST(ParseJudgments, AttentionCheckNeedsTruth) {
  std::string text = "annotator_id,image_id,chosen_class,trial_index,is_attention_check,true_class\n"
                     "w1,img_a,3,0,1,\n";
  EXPECT_THROW((void)parse(text), ParseError);
}

TEST(ParseJudgments, QuotedCellsCrlfAndCustomSchema) {
  std::string text = "\xEF\xBB\xBF" "cifar10_test_test_idx;annotator_id;chosen_label;trial_index;is_attn_check;true_label\r\n"
                     "\"12\";\"w;1\";4;0;0;4\r\n";
  std::istringstream in(text);
  ParseOptions o;
  o.delimiter = ';';
  const auto recs = parse_judgments(in, Schema::cifar10h_raw(), o);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].annotator_id, "w;1");
  EXPECT_EQ(recs[0].image_id, "12");
}

TEST(ParseJudgments, WriteParseRoundTrip) {
  FixtureSpec spec;
  spec.checks_correct = {4, 5, 8, 2};
  const auto recs = generate_fixture(spec);
  std::stringstream buf;
  write_judgments(buf, recs);
  EXPECT_EQ(parse(buf.str()), recs);
}

TEST(ScoreAnnotators, SevenOfTenRejectedTenOfTenAccepted) {
  std::vector<JudgmentRecord> recs;
  for (std::size_t t = 0; t < 10; ++t) recs.push_back(check("seven", t < 7 ? 1 : 2, 1, t));
  for (std::size_t t = 0; t < 10; ++t) recs.push_back(check("ten", 1, 1, t));
  recs.push_back(stim("none", "img", 0, 0));
  const auto stats = score_annotators(recs, 0.75);
  EXPECT_FALSE(stats.at("seven").accepted);
  EXPECT_EQ(stats.at("seven").checks_correct, 7u);
  EXPECT_TRUE(stats.at("ten").accepted);
  EXPECT_TRUE(stats.at("none").accepted);
  EXPECT_TRUE(stats.at("none").no_checks);
}

TEST(ScoreAnnotators, ThresholdBoundaryIsInclusive) {
  std::vector<JudgmentRecord> recs;
  for (std::size_t t = 0; t < 4; ++t) recs.push_back(check("w", t < 3 ? 0 : 1, 0, t));
  EXPECT_TRUE(score_annotators(recs, 0.75).at("w").accepted);
  EXPECT_FALSE(score_annotators(recs, 0.76).at("w").accepted);
}

TEST(ScoreAnnotators, RejectsBadThreshold) {
  EXPECT_THROW((void)score_annotators({}, 0.0), ConfigError);
  EXPECT_THROW((void)score_annotators({}, 1.5), ConfigError);
}

TEST(ScoreAnnotators, FixtureRejectsExactlyTheLowScorers) {
  FixtureSpec spec;
  spec.trials_per_annotator = 100;
  spec.check_every = 4; // 20 checks each
  ASSERT_EQ(fixture_checks_per_annotator(spec), 20u);
  spec.checks_correct = {20, 15, 14, 19, 0, 16, 10};
  const auto stats = score_annotators(generate_fixture(spec));
  std::set<std::string> rejected;
  for (const auto &[id, s] : stats)
    if (!s.accepted) rejected.insert(id);
  EXPECT_EQ(rejected, (std::set<std::string>{"A0002", "A0004", "A0006"}));
}

TEST(FilterRecords, IdempotentAndRemovesRejected) {
  FixtureSpec spec;
  spec.checks_correct = {8, 2, 6, 7};
  const auto recs = generate_fixture(spec);
  const auto once = filter_records(recs);
  EXPECT_EQ(filter_records(once), once);
  EXPECT_LT(once.size(), recs.size());
  for (const auto &r : once) EXPECT_NE(r.annotator_id, "A0001");
}

TEST(Aggregate, CountRatios) {
  std::vector<JudgmentRecord> recs;
  std::size_t t = 0;
  for (int i = 0; i < 30; ++i) recs.push_back(stim("a" + std::to_string(i), "img", 3, t++));
  for (int i = 0; i < 21; ++i) recs.push_back(stim("b" + std::to_string(i), "img", 5, t++));
  const auto agg = aggregate_distributions(recs, 10);
  const auto &d = agg.distributions.at("img");
  EXPECT_EQ(d.support_count, 51u);
  EXPECT_EQ(d.probs[3], 30.0 / 51.0);
  EXPECT_EQ(d.probs[5], 21.0 / 51.0);
  for (int c : {0, 1, 2, 4, 6, 7, 8, 9}) EXPECT_EQ(d.probs[c], 0.0);
}

TEST(Aggregate, SmoothingTendsToUniform) {
  std::vector<JudgmentRecord> recs = {stim("a", "img", 0, 0), stim("b", "img", 0, 0), stim("c", "img", 2, 0)};
  const auto d = aggregate_distributions(recs, 4, 1e12).distributions.at("img");
  for (double p : d.probs) EXPECT_NEAR(p, 0.25, 1e-9);
  const auto s = aggregate_distributions(recs, 4, 1.0).distributions.at("img");
  EXPECT_DOUBLE_EQ(s.probs[0], 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(s.probs[1], 1.0 / 7.0);
  EXPECT_THROW((void)aggregate_distributions(recs, 4, -0.1), ConfigError);
}

TEST(Aggregate, SkipsChecksAndReportsEmptyImages) {
  std::vector<JudgmentRecord> recs = {stim("a", "img", 1, 0), check("a", 2, 2, 1)};
  const auto agg = aggregate_distributions(recs, 3);
  EXPECT_EQ(agg.distributions.size(), 1u);
  EXPECT_EQ(agg.distributions.count("check"), 0u);
}

TEST(Aggregate, PropertiesOnFixture) {
  FixtureSpec spec;
  spec.num_images = 20;
  spec.checks_correct = std::vector<std::size_t>(30, 8);
  auto recs = filter_records(generate_fixture(spec));
  const auto agg = aggregate_distributions(recs, spec.num_classes);

  // brute-force recount
  std::map<std::string, std::vector<std::size_t>> counts;
  for (const auto &r : recs) {
    if (r.is_attention_check) continue;
    auto &v = counts[r.image_id];
    v.resize(spec.num_classes);
    ++v[static_cast<std::size_t>(r.chosen_class)];
  }
  ASSERT_EQ(counts.size(), agg.distributions.size());
  for (const auto &[id, v] : counts) {
    const auto &d = agg.distributions.at(id);
    std::size_t total = 0;
    for (auto c : v) total += c;
    EXPECT_EQ(d.support_count, total);
    EXPECT_TRUE(is_valid_distribution(d.probs));
    std::size_t plurality = 0;
    for (std::size_t c = 1; c < v.size(); ++c)
      if (v[c] > v[plurality]) plurality = c;
    EXPECT_EQ(argmax(d.probs), plurality);
  }

  // permutation invariance
  std::mt19937_64 rng(5);
  std::shuffle(recs.begin(), recs.end(), rng);
  const auto shuffled = aggregate_distributions(recs, spec.num_classes);
  for (const auto &[id, d] : agg.distributions) EXPECT_EQ(shuffled.distributions.at(id).probs, d.probs);
}

TEST(Aggregate, TieKeepsEqualMassLowestIndexWins) {
  std::vector<JudgmentRecord> recs = {stim("a", "img", 2, 0), stim("b", "img", 1, 0)};
  const auto d = aggregate_distributions(recs, 3).distributions.at("img");
  EXPECT_EQ(d.probs[1], d.probs[2]);
  EXPECT_EQ(argmax(d.probs), 1u);
}

TEST(Summary, FourRecordFixture) {
  const auto s = dataset_summary(parse(kFourRows));
  EXPECT_EQ(s.total_judgments, 4u);
  EXPECT_EQ(s.annotators, 2u);
  EXPECT_EQ(s.images, 2u); // img_a, img_b; the check trial is not a stimulus
  EXPECT_EQ(s.min_per_image, 1u);
  EXPECT_EQ(s.max_per_image, 2u);
  EXPECT_DOUBLE_EQ(s.mean_per_image, 1.5);
  EXPECT_EQ(s.rejected_annotators, 0u);
  std::ostringstream out;
  write_summary(out, s);
  EXPECT_NE(out.str().find("total_judgments: 4"), std::string::npos);
}

TEST(Summary, FilteringShrinksTotalIffSomeoneRejected) {
  for (std::vector<std::size_t> correct : {std::vector<std::size_t>{8, 8, 8}, std::vector<std::size_t>{8, 1, 8}}) {
    FixtureSpec spec;
    spec.checks_correct = correct;
    const auto recs = generate_fixture(spec);
    const auto before = dataset_summary(recs);
    const auto after = dataset_summary(filter_records(recs));
    // set difference computed directly
    std::set<std::string> rejected;
    for (const auto &[id, st] : score_annotators(recs))
      if (!st.accepted) rejected.insert(id);
    std::size_t dropped = 0;
    for (const auto &r : recs) dropped += rejected.count(r.annotator_id);
    EXPECT_EQ(before.total_judgments - after.total_judgments, dropped);
    EXPECT_EQ(after.total_judgments < before.total_judgments, before.rejected_annotators > 0);
  }
}

TEST(SoftLabelFile, RoundTripPreservesValues) {
  std::map<std::string, LabelDistribution> m;
  m["x"] = {{30.0 / 51.0, 21.0 / 51.0, 0.0}, 51};
  m["y"] = {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, 3};
  std::stringstream buf;
  write_soft_labels(buf, m);
  const auto back = read_soft_labels(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("x").probs, m["x"].probs);
  EXPECT_EQ(back.at("y").support_count, 3u);
}

TEST(SoftLabelFile, RejectsInvalidRows) {
  std::istringstream bad("image_id,support_count,p0,p1\nx,2,0.5,0.6\n");
  EXPECT_THROW((void)read_soft_labels(bad), DataError);
  std::istringstream dup("image_id,support_count,p0,p1\nx,2,0.5,0.5\nx,2,0.5,0.5\n");
  EXPECT_THROW((void)read_soft_labels(dup), DataError);
}
