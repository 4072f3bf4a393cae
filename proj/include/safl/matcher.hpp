#pragma once

// Difference matrices, local contrast enhancement and the velocity-sweep
// sequence search, plus the SAD image feature used as the baseline.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "safl/learner.hpp"
#include "safl/occupancy.hpp"

namespace safl {

/// rows = reference frames, cols = test frames; entry (s, t) compares
/// reference frame s with test frame t.
struct DifferenceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  DifferenceMatrix() = default;
  DifferenceMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t s, std::size_t t) { return values[s * cols + t]; }
  double at(std::size_t s, std::size_t t) const { return values[s * cols + t]; }

  friend bool operator==(const DifferenceMatrix&, const DifferenceMatrix&) = default;
};

/// Which way reference indices advance along a route.
///  kForward:   k = round(s + V (t - (T - d_s)))  (same-direction revisits)
///  kAsWritten: k = round(s - V (t - (T - d_s)))  (reverse traversal)
/// In both cases s is the reference index paired with test frame T - d_s.
enum class RouteDirection { kForward, kAsWritten };

struct SeqParams {
  int d_s = 10;
  double v_min = 0.8;
  double v_max = 1.1;
  double v_step = 0.1;
  int enhance_window = 10;
  double score_threshold = 0.0;
  RouteDirection direction = RouteDirection::kForward;

  void validate() const;
  /// v_min, v_min + v_step, ... up to v_max inclusive (1e-9 snap).
  std::vector<double> velocities() const;
};

struct MatchResult {
  std::size_t test_index = 0;  // T
  long ref_index = -1;         // s*, paired with test frame T - d_s
  double velocity = 0.0;       // V*
  double score = 0.0;          // S* normalised by d_s + 1; +inf when no route is valid
  bool accepted = false;
  long route_end = -1;         // reference index the route assigns to T itself

  bool valid() const { return ref_index >= 0; }
};

double code_difference(const std::vector<double>& a, const std::vector<double>& b);
double code_difference(const LatentCode& a, const LatentCode& b);

/// Block-mean downsampling by `down`, then per 8x8 patch standardisation
/// (population std floored at 1e-6). Patches at the border may be smaller.
std::vector<double> sad_feature(const TopViewImage& image, int down = 2);
double sad_difference(const std::vector<double>& a, const std::vector<double>& b);

enum class Metric { kSquaredEuclidean, kSad };

DifferenceMatrix difference_matrix(const std::vector<std::vector<double>>& ref,
                                   const std::vector<std::vector<double>>& test, Metric metric);
DifferenceMatrix difference_matrix(const std::vector<LatentCode>& ref, const std::vector<LatentCode>& test);

/// Each entry standardised by the mean and population std of a W_e-long
/// window of its column. The window is centred on the entry and shifted to
/// stay inside the column; with W_e >= rows it covers the whole column.
DifferenceMatrix enhance_local(const DifferenceMatrix& matrix, int window);

/// Reference index of the route through (s, T - d_s) at test frame t.
long route_index(long s, double velocity, int d_s, std::size_t T, std::size_t t, RouteDirection direction);

/// Normalised route score, or nullopt if the route leaves [0, rows).
/// Throws InvalidArgument when T < d_s or T >= cols.
std::optional<double> sequence_score(const DifferenceMatrix& matrix, std::size_t T, long s, double velocity,
                                     int d_s, RouteDirection direction = RouteDirection::kForward);

MatchResult best_match(const DifferenceMatrix& matrix, std::size_t T, const SeqParams& params);

/// best_match for every T >= d_s.
std::vector<MatchResult> detect_loops(const DifferenceMatrix& matrix, const SeqParams& params);

/// Re-applies a threshold to existing results (accepted iff valid and score < threshold).
std::vector<MatchResult> with_threshold(std::vector<MatchResult> matches, double threshold);

/// "SDMX", u32 rows, u32 cols, float32 row-major.
std::vector<char> encode_matrix(const DifferenceMatrix& matrix);
DifferenceMatrix decode_matrix(const std::vector<char>& bytes, const std::string& source = "<memory>");
void save_matrix(const std::string& path, const DifferenceMatrix& matrix);
DifferenceMatrix load_matrix(const std::string& path);
void save_matrix_csv(const std::string& path, const DifferenceMatrix& matrix);

/// `T,s_star,V_star,score,accepted`
void save_matches_csv(const std::string& path, const std::vector<MatchResult>& matches);
std::vector<MatchResult> load_matches_csv(const std::string& path, int d_s,
                                          RouteDirection direction = RouteDirection::kForward);

}  // namespace safl
