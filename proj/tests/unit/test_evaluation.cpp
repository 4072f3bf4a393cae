#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "safl/errors.hpp"
#include "safl/evaluation.hpp"
#include "test_support.hpp"

using namespace safl;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Reference frames every 2 m along x; test frames revisit the first ten.
GroundTruth line_truth() {
  GroundTruth gt;
  for (int i = 0; i < 20; ++i) gt.reference.push_back(Pose{2.0 * i, 0, 0, 0, 0, 0});
  for (int j = 0; j < 10; ++j) gt.test.push_back(Pose{2.0 * j, 1.0, 0, 0, 0, 0});
  // Test frames 8 and 9 wander off the route.
  gt.test[8].y = 50.0;
  gt.test[9].y = 50.0;
  gt.d_thresh = 3.0;
  return gt;
}

MatchResult match(std::size_t t, long end, double score, bool accepted) {
  MatchResult m;
  m.test_index = t;
  m.ref_index = end;  // d_s = 0 for these hand-made results
  m.route_end = end;
  m.velocity = 1.0;
  m.score = score;
  m.accepted = accepted;
  return m;
}

double mann_whitney(const std::vector<double>& s, const std::vector<bool>& l) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] && !l[j]) {
        pairs += 1.0;
        wins += s[i] < s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace

TEST_CASE("precision and recall conventions") {
  CHECK(precision_recall({0, 0, 0, 5}).precision == 1.0);
  CHECK(precision_recall({0, 0, 0, 5}).recall == 0.0);
  const PrecisionRecall pr = precision_recall({3, 1, 1, 7});
  CHECK(pr.precision == 0.75);
  CHECK(pr.recall == 0.75);
}

TEST_CASE("classification against ground truth") {
  const GroundTruth gt = line_truth();
  std::vector<MatchResult> ms{
      match(0, 0, 0.1, true),   // correct, accepted: TP
      match(1, 9, 0.2, true),   // wrong place: FP
      match(2, 2, 0.3, false),  // rejected but a loop exists: FN
      match(8, 8, 0.4, false),  // off route, rejected: TN
      match(9, 9, 0.5, true),   // off route, accepted: FP
  };
  CHECK(classify(ms, gt) == ConfusionCounts{1, 2, 1, 1});
  CHECK(gt.has_true_loop(3));
  CHECK_FALSE(gt.has_true_loop(8));
  CHECK_FALSE(gt.match_correct(MatchResult{}));  // invalid result is never correct

  ms.push_back(match(12, 0, 0.1, true));
  CHECK_THROWS_AS(classify(ms, gt), DataIntegrityError);
  CHECK_THROWS_AS(gt.match_correct(match(0, 25, 0.1, true)), DataIntegrityError);
}

TEST_CASE("PR curve sweeps every unique score") {
  const GroundTruth gt = line_truth();
  const std::vector<MatchResult> ms{match(0, 0, 0.1, false), match(1, 1, 0.3, false), match(2, 9, 0.2, false),
                                    match(8, 8, 0.3, false), match(3, 3, kInf, false)};
  CHECK(threshold_set({0.3, 0.1, 0.3, kInf}) == std::vector<double>{-kInf, 0.1, 0.3, kInf});
  const auto curve = pr_curve(ms, gt);
  REQUIRE(curve.size() == 5);  // -inf, 0.1, 0.2, 0.3, +inf
  // Loops exist at test frames 0, 1, 2, 3.
  CHECK(curve[0].precision == 1.0);
  CHECK(curve[0].recall == 0.0);
  CHECK(curve[1].precision == 1.0);  // nothing below 0.1
  CHECK(curve[1].recall == 0.0);
  CHECK(curve[2].precision == 1.0);  // frame 0 only
  CHECK(curve[2].recall == 0.25);
  CHECK(curve[3].precision == 0.5);  // frames 0 and 2
  CHECK(curve[4].precision == doctest::Approx(2.0 / 4.0));
  CHECK(curve[4].recall == doctest::Approx(2.0 / 3.0));  // frame 3 has an infinite score and stays rejected
  CHECK(recall_at_full_precision(curve) == 0.25);
  CHECK(recall_at_full_precision({}) == 0.0);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].recall >= curve[i - 1].recall);
}

TEST_CASE("threshold subsampling keeps the extremes") {
  std::vector<double> s;
  for (int i = 0; i < 10; ++i) s.push_back(i);
  CHECK(threshold_set(s, 3) == std::vector<double>{-kInf, 0, 4, 9, kInf});
  CHECK(threshold_set(s, 0).size() == 12);
  CHECK(threshold_set({}, 5) == std::vector<double>{-kInf, kInf});
}

TEST_CASE("ROC AUC equals the Mann-Whitney statistic") {
  CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {true, true, false, false}) == 1.0);
  CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}) == 0.0);
  CHECK(roc_auc({1, 1, 1, 1}, {false, true, false, true}) == 0.5);
  CHECK_THROWS_AS(roc_auc({1, 2}, {true, true}), InvalidArgument);
  CHECK_THROWS_AS(roc_auc({1, 2}, {true}), InvalidArgument);

  const auto roc = roc_curve({0.1, 0.2, 0.2, 0.9}, {true, false, true, false});
  REQUIRE(roc.size() == 4);
  CHECK(roc[0].tpr == 0.0);
  CHECK(roc[0].fpr == 0.0);
  CHECK(roc[1].tpr == 0.5);
  CHECK(roc[2].tpr == 1.0);
  CHECK(roc[2].fpr == 0.5);
  CHECK(roc.back().fpr == 1.0);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s;
    std::vector<bool> l;
    for (int i = 0; i < 40; ++i) {
      s.push_back(static_cast<double>(rng() % 15));  // plenty of ties
      l.push_back(rng() % 3 == 0);
    }
    l[0] = true;
    l[1] = false;
    CHECK(roc_auc(s, l) == doctest::Approx(mann_whitney(s, l)).epsilon(1e-12));
  }
}

TEST_CASE("match AUC uses only valid results") {
  const GroundTruth gt = line_truth();
  std::vector<MatchResult> ms{match(0, 0, 0.1, false), match(1, 9, 0.5, false), match(2, 2, 0.2, false)};
  ms.push_back(MatchResult{});
  ms.back().test_index = 3;
  ms.back().score = kInf;
  const ScoredLabels sl = match_labels(ms, gt);
  CHECK(sl.scores.size() == 3);
  REQUIRE(match_auc(ms, gt).has_value());
  CHECK(*match_auc(ms, gt) == 1.0);
  CHECK_FALSE(match_auc({match(0, 0, 0.1, false)}, gt).has_value());
}

TEST_CASE("curve files") {
  safl::testing::TempDir dir;
  CHECK(emit_curves({}, dir.file("none")).empty());
  CHECK_FALSE(std::filesystem::exists(dir.file("none")));

  Curve pr{"pr_test", Curve::Kind::kPR, {{-kInf, 1, 0}, {0.5, 0.5, 1}}, {}};
  Curve roc{"roc_test", Curve::Kind::kROC, {}, {{-kInf, 0, 0}, {1, 1, 1}}};
  const auto paths = emit_curves({pr, roc}, dir.file("curves"));
  CHECK(paths.size() == 4);
  const std::string csv = safl::testing::slurp(dir.file("curves/pr_test.csv"));
  CHECK(csv.find("threshold,precision,recall\n-inf,1,0\n0.5,0.5,1\n") != std::string::npos);
  CHECK(csv.rfind("#", 0) == 0);
  CHECK(safl::testing::slurp(dir.file("curves/roc_test.csv")).find("threshold,tpr,fpr\n") != std::string::npos);
  const std::string svg = safl::testing::slurp(dir.file("curves/roc_test.svg"));
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t polylines = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  CHECK(polylines == 1);
  CHECK(svg.find("40,360 360,40") != std::string::npos);
}

TEST_CASE("summary records") {
  SummaryRecord r;
  r.experiment = "exp";
  r.features = "safl";
  r.perturbation = "T0_R0";
  r.counts = {3, 1, 1, 5};
  CHECK(summary_json(r) ==
        R"({"experiment":"exp","features":"safl","perturbation":"T0_R0","auc":null,"recall_at_full_precision":0.0,)"
        R"("score_threshold":0.0,"tp":3,"fp":1,"fn":1,"tn":5,"precision":0.75,"recall":0.75})");
  r.auc = 0.875;
  safl::testing::TempDir dir;
  append_summary(dir.file("s.jsonl"), r);
  append_summary(dir.file("s.jsonl"), r);
  const std::string text = safl::testing::slurp(dir.file("s.jsonl"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(nlohmann::json::parse(text.substr(0, text.find('\n')))["auc"] == 0.875);
}
