#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "format.hpp"
#include "keyvalue.hpp"
#include "safl/divergence.hpp"
#include "safl/errors.hpp"

namespace fs = std::filesystem;

namespace safl::cli {

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path)) throw IoError(stage + " needs " + path + ", which does not exist");
}

std::string scan_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.bin", index);
  return buf;
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& extension) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Runs body(i) for i in [0, n) on a few worker threads. Each index writes its
// own outputs, so the result does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

LidarSpec WorldConfig::desk_lidar() {
  LidarSpec spec;
  spec.azimuth_count = 360;
  spec.max_range = 40.0;
  return spec;
}

std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.pgm", index);
  return buf;
}

void save_meta(const std::string& path, const SequenceMeta& meta) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "[sequence]\n"
      << "frames=" << meta.frames << "\n"
      << "frames_per_lap=" << meta.frames_per_lap << "\n"
      << "laps=" << meta.laps << "\n"
      << "perturbation=" << meta.perturbation << "\n";
  if (!out) throw IoError("write failed: " + path);
}

SequenceMeta load_meta(const std::string& path) {
  require_file(path, "this stage");
  const auto kv = detail::KeyValueFile::load(path);
  SequenceMeta m;
  m.frames = static_cast<std::size_t>(kv.integer("sequence.frames"));
  m.frames_per_lap = static_cast<std::size_t>(kv.integer("sequence.frames_per_lap"));
  m.laps = static_cast<int>(kv.integer("sequence.laps"));
  if (kv.has("sequence.perturbation")) m.perturbation = kv.str("sequence.perturbation");
  if (m.frames_per_lap > m.frames) throw MalformedFile(path + ": frames_per_lap exceeds frames");
  return m;
}

std::vector<std::pair<double, double>> loop_waypoints(const WorldConfig& cfg, double offset) {
  const double a = cfg.loop_min, b = cfg.loop_max, side = b - a;
  if (!(side > 0.0)) throw InvalidArgument("loop_max must exceed loop_min");
  const std::pair<double, double> corners[4] = {{a, a}, {b, a}, {b, b}, {a, b}};
  const double perimeter = 4.0 * side;
  double o = std::fmod(offset, perimeter);
  if (o < 0.0) o += perimeter;
  const int k = std::min(3, static_cast<int>(std::floor(o / side)));
  const double f = o - k * side;
  const auto [cx, cy] = corners[k];
  const auto [nx, ny] = corners[(k + 1) % 4];
  const std::pair<double, double> start{cx + f / side * (nx - cx), cy + f / side * (ny - cy)};
  std::vector<std::pair<double, double>> wp{start};
  for (int i = 1; i <= 4; ++i) wp.push_back(corners[(k + i) % 4]);
  if (f > 0.0) wp.push_back(start);
  return wp;
}

SequenceMeta generate_dataset(const WorldConfig& cfg, const std::string& dir) {
  if (cfg.laps < 1) throw InvalidArgument("laps must be >= 1");
  const Rect bounds{0.0, 0.0, cfg.size, cfg.size};
  World world = generate_world(cfg.seed, cfg.obstacles, bounds);
  world = clear_corridor(std::move(world), loop_waypoints(cfg, 0.0), cfg.corridor);

  std::vector<Pose> poses;
  std::size_t per_lap = 0;
  for (int lap = 0; lap < cfg.laps; ++lap) {
    std::vector<Pose> lap_poses =
        make_trajectory(world, loop_waypoints(cfg, lap * cfg.lap_offset), cfg.step, cfg.sensor_height);
    // The closing pose duplicates the start of the next lap.
    lap_poses.pop_back();
    if (lap == 0) per_lap = lap_poses.size();
    lap_poses.resize(std::min(lap_poses.size(), per_lap));
    poses.insert(poses.end(), lap_poses.begin(), lap_poses.end());
  }

  ensure_dir(dir + "/scans");
  std::vector<std::pair<std::uint32_t, Pose>> indexed;
  for (std::size_t i = 0; i < poses.size(); ++i) indexed.emplace_back(static_cast<std::uint32_t>(i), poses[i]);
  parallel_for(poses.size(), [&](std::size_t i) {
    PointCloud cloud = simulate_scan(world, poses[i], cfg.lidar);
    cloud.frame_id = static_cast<std::uint32_t>(i);
    save_kitti_scan(dir + "/scans/" + scan_name(i), cloud);
  });
  save_pose_file(dir + "/poses.txt", indexed);
  save_world(dir + "/world.cfg", world);
  SequenceMeta meta{poses.size(), per_lap, cfg.laps, "T0_R0"};
  save_meta(dir + "/meta.cfg", meta);
  return meta;
}

SequenceMeta ingest_dataset(const std::string& src, const std::string& dir, std::size_t frames_per_lap) {
  const std::string pose_path = src + "/poses.txt";
  require_file(pose_path, "ingest");
  const auto scans = sorted_files(src, ".bin");
  // Validate everything before writing anything.
  for (const std::string& path : scans) load_kitti_scan(path);
  const auto poses = load_pose_file(pose_path);
  ensure_dir(dir + "/scans");
  for (std::size_t i = 0; i < scans.size(); ++i) {
    fs::copy_file(scans[i], dir + "/scans/" + scan_name(i), fs::copy_options::overwrite_existing);
  }
  save_pose_file(dir + "/poses.txt", poses);
  SequenceMeta meta;
  meta.frames = scans.size();
  meta.frames_per_lap = frames_per_lap == 0 ? scans.size() : std::min(frames_per_lap, scans.size());
  meta.laps = meta.frames_per_lap == 0 ? 1
                                       : static_cast<int>((meta.frames + meta.frames_per_lap - 1) / meta.frames_per_lap);
  save_meta(dir + "/meta.cfg", meta);
  return meta;
}

std::size_t build_maps(const std::string& dataset_dir, const std::string& maps_dir, const MapConfig& cfg) {
  cfg.grid.validate();
  cfg.perturb.validate();
  if (cfg.window < 1) throw InvalidArgument("map window must be >= 1");
  SequenceMeta meta = load_meta(dataset_dir + "/meta.cfg");
  require_file(dataset_dir + "/poses.txt", "map");
  const auto pose_list = load_pose_file(dataset_dir + "/poses.txt");
  std::map<std::uint32_t, Pose> poses(pose_list.begin(), pose_list.end());
  const auto scans = sorted_files(dataset_dir + "/scans", ".bin");
  if (scans.size() != meta.frames) {
    throw DataIntegrityError(dataset_dir + ": meta.cfg lists " + std::to_string(meta.frames) + " frames but " +
                             std::to_string(scans.size()) + " scans are present");
  }
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (!poses.count(static_cast<std::uint32_t>(i))) {
      throw DataIntegrityError("missing pose for frame " + std::to_string(i) + " (" + scans[i] + ")");
    }
  }
  const std::size_t perturb_from = cfg.perturb_from < 0 ? meta.frames_per_lap : static_cast<std::size_t>(cfg.perturb_from);
  ensure_dir(maps_dir);
  const double crop = cfg.grid.radius * std::numbers::sqrt2;

  parallel_for(scans.size(), [&](std::size_t i) {
    OccupancyOctree local(cfg.resolution);
    const std::size_t first = i + 1 >= static_cast<std::size_t>(cfg.window) ? i + 1 - cfg.window : 0;
    for (std::size_t j = first; j <= i; ++j) {
      integrate_scan(local, load_kitti_scan(scans[j]), poses.at(static_cast<std::uint32_t>(j)));
    }
    Pose center = poses.at(static_cast<std::uint32_t>(i));
    if (i >= perturb_from) {
      std::seed_seq seq{static_cast<std::uint64_t>(cfg.perturb.seed), static_cast<std::uint64_t>(i)};
      Rng rng(seq);
      center = perturb_pose(center, cfg.perturb, rng);
    }
    save_pgm(maps_dir + "/" + frame_name(i), project_topview(crop_local(local, center, crop), cfg.grid, center));
  });

  save_pose_file(maps_dir + "/poses.txt", pose_list);
  meta.perturbation = cfg.perturb.tag();
  save_meta(maps_dir + "/meta.cfg", meta);
  return scans.size();
}

std::vector<TopViewImage> load_frames(const std::string& maps_dir, std::size_t first, std::size_t last) {
  std::vector<TopViewImage> out;
  for (std::size_t i = first; i < last; ++i) {
    const std::string path = maps_dir + "/" + frame_name(i);
    require_file(path, "loading frames");
    out.push_back(load_pgm(path));
  }
  return out;
}

TrainOutcome train_stage(const std::string& maps_dir, ModelKind kind, const Architecture& arch,
                         const TrainConfig& cfg, const TrainHooks& hooks) {
  const SequenceMeta meta = load_meta(maps_dir + "/meta.cfg");
  const auto images = load_frames(maps_dir, 0, meta.frames_per_lap);
  TrainOutcome out{BiGANModel::create(kind, arch, cfg.seed), {}};
  out.report = train(out.model, images, cfg, hooks);
  return out;
}

EncodeMode parse_encode_mode(const std::string& name) {
  if (name == "stable-afl" || name == "safl") return EncodeMode::kStableAfl;
  if (name == "bigan-baseline" || name == "bigan") return EncodeMode::kBiganBaseline;
  if (name == "sad") return EncodeMode::kSad;
  throw InvalidArgument("unknown encode mode '" + name + "' (expected stable-afl, bigan-baseline or sad)");
}

std::vector<LatentCode> encode_stage(const std::string& maps_dir, EncodeMode mode, const BiGANModel* model) {
  const SequenceMeta meta = load_meta(maps_dir + "/meta.cfg");
  const auto frames = load_frames(maps_dir, 0, meta.frames);
  if (mode == EncodeMode::kSad) {
    std::vector<LatentCode> codes;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      codes.push_back({sad_feature(frames[i]), static_cast<std::uint32_t>(i)});
    }
    return codes;
  }
  if (model == nullptr) throw InvalidArgument("encode mode needs a model checkpoint");
  const ModelKind want = mode == EncodeMode::kStableAfl ? ModelKind::kStableAfl : ModelKind::kBiGan;
  if (model->kind != want) {
    throw InvalidArgument(std::string("checkpoint holds a ") + model_kind_name(model->kind) + " model but the mode asks for " +
                          model_kind_name(want));
  }
  return encode_all(*model, frames);
}

MatchOutcome match_stage(const std::vector<LatentCode>& codes, std::size_t frames_per_lap, const MatchConfig& cfg) {
  if (frames_per_lap == 0 || frames_per_lap >= codes.size()) {
    throw InvalidArgument("codes must split into a nonempty reference lap and a nonempty test sequence");
  }
  std::vector<std::vector<double>> ref, test;
  for (std::size_t i = 0; i < codes.size(); ++i) (i < frames_per_lap ? ref : test).push_back(codes[i].values);
  const Metric metric = cfg.features == "sad" ? Metric::kSad : Metric::kSquaredEuclidean;
  MatchOutcome out;
  out.raw = difference_matrix(ref, test, metric);
  out.enhanced = enhance_local(out.raw, cfg.seq.enhance_window);
  out.matches = detect_loops(out.enhanced, cfg.seq);
  return out;
}

void save_match_outputs(const std::string& dir, const MatchOutcome& out, const MatchConfig& cfg) {
  ensure_dir(dir);
  save_matrix(dir + "/raw.sdmx", out.raw);
  save_matrix(dir + "/matrix.sdmx", out.enhanced);
  save_matches_csv(dir + "/matches.csv", out.matches);
  std::ofstream meta(dir + "/match.cfg", std::ios::trunc);
  meta << "[match]\n"
       << "features=" << cfg.features << "\n"
       << "d_s=" << cfg.seq.d_s << "\n"
       << "direction=" << (cfg.seq.direction == RouteDirection::kForward ? "forward" : "as-written") << "\n"
       << "score_threshold=" << detail::format_double(cfg.seq.score_threshold) << "\n";
  if (!meta) throw IoError("write failed: " + dir + "/match.cfg");
}

GroundTruth ground_truth(const std::string& maps_dir, double d_thresh) {
  const SequenceMeta meta = load_meta(maps_dir + "/meta.cfg");
  require_file(maps_dir + "/poses.txt", "eval");
  const auto poses = load_pose_file(maps_dir + "/poses.txt");
  std::map<std::uint32_t, Pose> by_id(poses.begin(), poses.end());
  GroundTruth gt;
  gt.d_thresh = d_thresh;
  for (std::size_t i = 0; i < meta.frames; ++i) {
    const auto it = by_id.find(static_cast<std::uint32_t>(i));
    if (it == by_id.end()) throw DataIntegrityError("missing pose for frame " + std::to_string(i));
    (i < meta.frames_per_lap ? gt.reference : gt.test).push_back(it->second);
  }
  return gt;
}

EvalOutcome evaluate(const std::vector<MatchResult>& matches, const GroundTruth& gt) {
  EvalOutcome e;
  e.counts = classify(matches, gt);
  e.pr = pr_curve(matches, gt);
  e.recall_at_full_precision = recall_at_full_precision(e.pr);
  e.auc = match_auc(matches, gt);
  if (e.auc) {
    const ScoredLabels sl = match_labels(matches, gt);
    e.roc = roc_curve(sl.scores, sl.labels);
  }
  return e;
}

SummaryRecord summary_record(const EvalOutcome& e, const std::string& experiment, const std::string& features,
                             const std::string& perturbation, double score_threshold) {
  SummaryRecord r;
  r.experiment = experiment;
  r.features = features;
  r.perturbation = perturbation;
  r.auc = e.auc;
  r.recall_at_full_precision = e.recall_at_full_precision;
  r.counts = e.counts;
  r.score_threshold = score_threshold;
  return r;
}

void write_eval_outputs(const std::string& dir, const EvalOutcome& e) {
  std::vector<Curve> curves;
  curves.push_back({"pr", Curve::Kind::kPR, e.pr, {}});
  if (e.roc) curves.push_back({"roc", Curve::Kind::kROC, {}, *e.roc});
  emit_curves(curves, dir);
}

std::string divergence_csv(const std::vector<double>& thetas) {
  std::ostringstream out;
  out << "theta,W,JS,TV\n";
  for (const auto& [theta, t] : divergence_table(thetas)) {
    out << detail::format_double(theta) << ',' << detail::format_double(t.w) << ',' << detail::format_double(t.js)
        << ',' << detail::format_double(t.tv) << '\n';
  }
  return out.str();
}

}  // namespace safl::cli
