#pragma once

// Scoring of loop-closure decisions against ground-truth poses.
//
// Scores follow the matcher convention: lower is better and a match is
// accepted iff its score is strictly below the threshold.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "safl/matcher.hpp"
#include "safl/scene.hpp"

namespace safl {

struct GroundTruth {
  std::vector<Pose> reference;
  std::vector<Pose> test;
  double d_thresh = 10.0;

  void validate() const;
  /// Some reference pose lies within d_thresh (planar) of test frame t.
  bool has_true_loop(std::size_t t) const;
  /// The match's route endpoint lies within d_thresh of its test frame.
  bool match_correct(const MatchResult& m) const;
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Throws DataIntegrityError when a match refers to a missing pose.
ConfusionCounts classify(const std::vector<MatchResult>& matches, const GroundTruth& gt);

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
};

/// precision is 1 when TP + FP = 0; recall is 0 when TP + FN = 0.
PrecisionRecall precision_recall(const ConfusionCounts& counts);

struct PRPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct ROCPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Sorted unique finite scores framed by -inf and +inf. When n_thresholds > 0
/// and there are more unique scores, an evenly spaced subset (always keeping
/// the extremes) is used instead.
std::vector<double> threshold_set(const std::vector<double>& scores, std::size_t n_thresholds = 0);

/// One point per threshold, ascending.
std::vector<PRPoint> pr_curve(const std::vector<MatchResult>& matches, const GroundTruth& gt,
                              std::size_t n_thresholds = 0);
/// Largest recall among points with precision exactly 1, else 0.
double recall_at_full_precision(const std::vector<PRPoint>& curve);

/// labels[i] true marks a positive. One vertex per unique score, ascending,
/// starting at (0, 0). Throws InvalidArgument on single-class labels.
std::vector<ROCPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels);
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

/// Scores and correctness labels of every valid match.
struct ScoredLabels {
  std::vector<double> scores;
  std::vector<bool> labels;
};
ScoredLabels match_labels(const std::vector<MatchResult>& matches, const GroundTruth& gt);

/// AUC of match scores against match correctness, nullopt when single-class.
std::optional<double> match_auc(const std::vector<MatchResult>& matches, const GroundTruth& gt);

struct Curve {
  enum class Kind { kPR, kROC };
  std::string name;
  Kind kind = Kind::kPR;
  std::vector<PRPoint> pr;
  std::vector<ROCPoint> roc;
};

/// Writes `<name>.csv` and `<name>.svg` per curve into `directory` and
/// returns the written paths.
std::vector<std::string> emit_curves(const std::vector<Curve>& curves, const std::string& directory);

struct SummaryRecord {
  std::string experiment;
  std::string features;
  std::string perturbation;  // T{a}_R{b}
  std::optional<double> auc;
  double recall_at_full_precision = 0.0;
  ConfusionCounts counts;
  double score_threshold = 0.0;
};

std::string summary_json(const SummaryRecord& record);
/// Appends one JSON line.
void append_summary(const std::string& path, const SummaryRecord& record);

}  // namespace safl
