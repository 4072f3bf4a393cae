#pragma once

// Stage functions behind the `safl` driver. Every stage reads its inputs from
// disk and writes its outputs to disk, so stages can be run and tested alone.
//
// Directory layouts:
//   dataset/  meta.cfg, poses.txt, scans/NNNNNN.bin, world.cfg (generated only)
//   maps/     meta.cfg, poses.txt, frame_NNNNNN.pgm
//   match/    matrix.sdmx, matches.csv, match.cfg
//   eval/     pr.csv, pr.svg, roc.csv, roc.svg (+ summary JSON lines)

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "safl/evaluation.hpp"
#include "safl/learner.hpp"
#include "safl/matcher.hpp"
#include "safl/occupancy.hpp"
#include "safl/scene.hpp"

namespace safl::cli {

struct WorldConfig {
  std::uint64_t seed = 7;
  int obstacles = 60;
  double size = 100.0;        // square world [0, size]^2
  double loop_min = 25.0;     // square loop corners (loop_min, loop_min)..(loop_max, loop_max)
  double loop_max = 75.0;
  double corridor = 4.0;      // obstacles closer than this to the loop are removed
  double step = 2.0;          // metres between frames
  double lap_offset = 1.0;    // arc-length shift of each lap's start relative to the previous
  int laps = 2;
  double sensor_height = 1.8;
  LidarSpec lidar = desk_lidar();

  static LidarSpec desk_lidar();
};

struct MapConfig {
  double resolution = 0.5;
  int window = 3;  // scans integrated into each frame's local map
  GridSpec grid{32.0, 1.0, 0.5};
  PerturbSpec perturb;
  /// First frame index that receives pose noise; -1 means "first frame of lap 2".
  long perturb_from = -1;
};

struct MatchConfig {
  SeqParams seq;
  std::string features = "safl";  // safl | bigan | sad
};

struct PipelineConfig {
  WorldConfig world;
  MapConfig map;
  Architecture arch;
  TrainConfig train;
  MatchConfig match;
  double d_thresh = 10.0;
  std::string experiment = "desk";
};

/// Sequence bookkeeping stored in meta.cfg.
struct SequenceMeta {
  std::size_t frames = 0;
  std::size_t frames_per_lap = 0;
  int laps = 1;
  std::string perturbation = "T0_R0";
};

void save_meta(const std::string& path, const SequenceMeta& meta);
SequenceMeta load_meta(const std::string& path);

/// Square loop waypoints for one lap starting `offset` metres along the perimeter.
std::vector<std::pair<double, double>> loop_waypoints(const WorldConfig& cfg, double offset);

/// Synthetic world, trajectory, scans and poses.
SequenceMeta generate_dataset(const WorldConfig& cfg, const std::string& dir);

/// Copies `<src>/*.bin` (sorted by name) and `<src>/poses.txt` into the dataset
/// layout, validating every scan. Throws MalformedFile naming the bad file.
SequenceMeta ingest_dataset(const std::string& src, const std::string& dir, std::size_t frames_per_lap = 0);

/// Top-view frames for every scan. Returns the frame count.
std::size_t build_maps(const std::string& dataset_dir, const std::string& maps_dir, const MapConfig& cfg);

/// Frames `first`..`last` (exclusive) of a maps directory.
std::vector<TopViewImage> load_frames(const std::string& maps_dir, std::size_t first, std::size_t last);

/// Trains on the reference lap (frames below frames_per_lap).
struct TrainOutcome {
  BiGANModel model;
  LossReport report;
};
TrainOutcome train_stage(const std::string& maps_dir, ModelKind kind, const Architecture& arch,
                         const TrainConfig& cfg, const TrainHooks& hooks = {});

enum class EncodeMode { kStableAfl, kBiganBaseline, kSad };
EncodeMode parse_encode_mode(const std::string& name);

std::vector<LatentCode> encode_stage(const std::string& maps_dir, EncodeMode mode, const BiGANModel* model);

/// Reference = the first frames_per_lap codes, test = the rest.
struct MatchOutcome {
  DifferenceMatrix raw;
  DifferenceMatrix enhanced;
  std::vector<MatchResult> matches;
};
MatchOutcome match_stage(const std::vector<LatentCode>& codes, std::size_t frames_per_lap, const MatchConfig& cfg);
void save_match_outputs(const std::string& dir, const MatchOutcome& out, const MatchConfig& cfg);

struct EvalOutcome {
  ConfusionCounts counts;
  std::vector<PRPoint> pr;
  std::optional<std::vector<ROCPoint>> roc;
  std::optional<double> auc;
  double recall_at_full_precision = 0.0;
};
GroundTruth ground_truth(const std::string& maps_dir, double d_thresh);
EvalOutcome evaluate(const std::vector<MatchResult>& matches, const GroundTruth& gt);
SummaryRecord summary_record(const EvalOutcome& e, const std::string& experiment, const std::string& features,
                             const std::string& perturbation, double score_threshold);
/// Writes pr/roc curves into `dir`.
void write_eval_outputs(const std::string& dir, const EvalOutcome& e);

/// (theta, W, JS, TV) rows as CSV text.
std::string divergence_csv(const std::vector<double>& thetas);

std::string frame_name(std::size_t index);

}  // namespace safl::cli
