#include "app.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "pipeline.hpp"
#include "safl/divergence.hpp"
#include "safl/errors.hpp"
#include "safl/gradcheck.hpp"

namespace fs = std::filesystem;

namespace safl::cli {

namespace {

struct Options {
  PipelineConfig cfg;

  std::string dataset_dir = "data/dataset";
  std::string ingest_src;
  std::size_t ingest_frames_per_lap = 0;

  std::string maps_dir = "data/maps";
  std::string perturb_tag = "T0_R0";

  std::string train_out = "data/model";
  std::string model_kind = "stable-afl";

  std::string encode_mode = "stable-afl";
  std::string model_path = "data/model/model.ckpt";
  std::string codes_path = "data/codes.safc";

  std::string codes_in;
  std::string match_dir = "data/match";

  std::string eval_dir = "data/eval";
  std::string summary_path;

  std::vector<double> thetas{-1.0, -0.5, -0.01, -0.001, 0.0, 0.001, 0.01, 0.5, 1.0};
  std::string divergence_out;

  std::vector<std::uint64_t> gradcheck_seeds{1, 2, 3};
};

void add_world_options(CLI::App& cmd, WorldConfig& w) {
  cmd.add_option("--seed", w.seed, "World and trajectory seed");
  cmd.add_option("--laps", w.laps, "Laps around the loop")->check(CLI::PositiveNumber);
  cmd.add_option("--obstacles", w.obstacles, "Random boxes before the corridor is cleared")->check(CLI::NonNegativeNumber);
  cmd.add_option("--world-size", w.size, "Side of the square world in metres")->check(CLI::PositiveNumber);
  cmd.add_option("--step", w.step, "Metres between consecutive frames")->check(CLI::PositiveNumber);
  cmd.add_option("--lap-offset", w.lap_offset, "Start shift of each lap along the loop in metres");
  cmd.add_option("--corridor", w.corridor, "Obstacle-free half width around the loop in metres");
  cmd.add_option("--sensor-height", w.sensor_height, "LiDAR height above ground in metres");
  cmd.add_option("--azimuths", w.lidar.azimuth_count, "Beams per ring")->check(CLI::PositiveNumber);
  cmd.add_option("--max-range", w.lidar.max_range, "LiDAR range in metres")->check(CLI::PositiveNumber);
  cmd.add_option("--range-sigma", w.lidar.range_sigma, "Gaussian range noise in metres");
}

void add_map_options(CLI::App& cmd, MapConfig& m, std::string& perturb_tag) {
  cmd.add_option("--resolution", m.resolution, "Octree leaf size in metres")->check(CLI::PositiveNumber);
  cmd.add_option("--window", m.window, "Scans integrated into each local map")->check(CLI::PositiveNumber);
  cmd.add_option("--radius", m.grid.radius, "Half width of the top view in metres")->check(CLI::PositiveNumber);
  cmd.add_option("--cell", m.grid.cell, "Top-view pixel size in metres")->check(CLI::PositiveNumber);
  cmd.add_option("--occupied-threshold", m.grid.occupied_threshold, "Occupancy probability drawn as occupied");
  cmd.add_option("--perturb", perturb_tag, "Viewpoint noise tag T<metres>_R<radians>");
  cmd.add_option("--perturb-seed", m.perturb.seed, "Seed of the viewpoint noise");
  cmd.add_option("--perturb-from", m.perturb_from, "First perturbed frame, -1 for the first frame of lap 2");
}

void add_arch_options(CLI::App& cmd, Architecture& a) {
  cmd.add_option("--image-size", a.image_size, "Input image side in pixels (multiple of 8)");
  cmd.add_option("--code-dim", a.code_dim, "Latent code length");
  cmd.add_option("--disc-hidden", a.disc_hidden, "Hidden units of the discriminators");
  cmd.add_option("--leak", a.leak, "Leaky ReLU slope");
}

void add_train_options(CLI::App& cmd, TrainConfig& t) {
  cmd.add_option("--iterations", t.iterations, "Generator updates")->check(CLI::NonNegativeNumber);
  cmd.add_option("--batch-size", t.batch_size, "Images per update")->check(CLI::PositiveNumber);
  cmd.add_option("--n-critic", t.n_critic, "Critic updates per generator update")->check(CLI::PositiveNumber);
  cmd.add_option("--clip", t.clip_c, "Critic weight box half width")->check(CLI::PositiveNumber);
  cmd.add_option("--lr", t.learning_rate, "RMSprop learning rate")->check(CLI::PositiveNumber);
  cmd.add_option("--lambda-x", t.lambda_x, "Weight of the image-side adversarial loss");
  cmd.add_option("--lambda-z", t.lambda_z, "Weight of the code-side adversarial loss");
  cmd.add_option("--lambda-cyc", t.lambda_cyc, "Weight of the cycle loss");
  cmd.add_option("--rotation-augment", t.rotation_augment, "Heading augmentation amplitude in radians");
  cmd.add_option("--seed", t.seed, "Initialisation and sampling seed");
}

void add_seq_options(CLI::App& cmd, SeqParams& s) {
  cmd.add_option("--ds", s.d_s, "Sequence length minus one")->check(CLI::PositiveNumber);
  cmd.add_option("--v-min", s.v_min, "Slowest velocity in the sweep");
  cmd.add_option("--v-max", s.v_max, "Fastest velocity in the sweep");
  cmd.add_option("--v-step", s.v_step, "Velocity sweep step");
  cmd.add_option("--enhance-window", s.enhance_window, "Local enhancement window")->check(CLI::PositiveNumber);
  cmd.add_option("--threshold", s.score_threshold, "Accept a match when its score is below this");
}

void write_text(const std::string& path, const std::string& text) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

std::string maybe_missing(const std::string& path, const std::string& stage) {
  if (!fs::exists(path)) throw IoError(stage + " needs " + path + ", which does not exist");
  return path;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Adversarial-feature loop closure detection pipeline", "safl"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI file; [section] names match subcommands, flags override it");
  app.require_subcommand(1);

  // dataset gen | ingest
  CLI::App* dataset = app.add_subcommand("dataset", "Create a scan dataset");
  dataset->require_subcommand(1);
  CLI::App* gen = dataset->add_subcommand("gen", "Synthetic world, two-lap trajectory and simulated scans");
  gen->add_option("--out", o.dataset_dir, "Dataset directory");
  add_world_options(*gen, o.cfg.world);
  CLI::App* ingest = dataset->add_subcommand("ingest", "Copy a KITTI-style directory of .bin scans and poses.txt");
  ingest->add_option("--src", o.ingest_src, "Source directory")->required();
  ingest->add_option("--out", o.dataset_dir, "Dataset directory");
  ingest->add_option("--frames-per-lap", o.ingest_frames_per_lap, "Reference frames, 0 for all");

  CLI::App* map = app.add_subcommand("map", "Integrate scans and write top-view PGM frames");
  map->add_option("--dataset", o.dataset_dir, "Dataset directory");
  map->add_option("--out", o.maps_dir, "Maps directory");
  add_map_options(*map, o.cfg.map, o.perturb_tag);

  CLI::App* train = app.add_subcommand("train", "Train an encoder on the reference lap");
  train->add_option("--maps", o.maps_dir, "Maps directory");
  train->add_option("--out", o.train_out, "Output directory for model.ckpt and losses.csv");
  train->add_option("--kind", o.model_kind, "stable-afl or bigan");
  add_arch_options(*train, o.cfg.arch);
  add_train_options(*train, o.cfg.train);

  CLI::App* encode = app.add_subcommand("encode", "Turn every frame into a latent code file");
  encode->add_option("--maps", o.maps_dir, "Maps directory");
  encode->add_option("--mode", o.encode_mode, "stable-afl, bigan-baseline or sad");
  encode->add_option("--model", o.model_path, "Checkpoint (ignored by sad)");
  encode->add_option("--out", o.codes_path, "Code file");

  CLI::App* match = app.add_subcommand("match", "Difference matrix, enhancement and sequence matching");
  match->add_option("--maps", o.maps_dir, "Maps directory (frame counts)");
  match->add_option("--codes", o.codes_in, "Code file; sad features are computed from the maps when empty");
  match->add_option("--features", o.cfg.match.features, "safl, bigan or sad");
  match->add_option("--out", o.match_dir, "Match directory");
  add_seq_options(*match, o.cfg.match.seq);

  CLI::App* eval = app.add_subcommand("eval", "Score matches against pose ground truth");
  eval->add_option("--maps", o.maps_dir, "Maps directory (poses and perturbation tag)");
  eval->add_option("--match", o.match_dir, "Match directory");
  eval->add_option("--out", o.eval_dir, "Curve directory");
  eval->add_option("--d-thresh", o.cfg.d_thresh, "True loop distance in metres")->check(CLI::PositiveNumber);
  eval->add_option("--experiment", o.cfg.experiment, "Experiment label of the summary record");
  eval->add_option("--summary", o.summary_path, "Append the summary record to this JSON-lines file");

  CLI::App* divergence = app.add_subcommand("divergence", "W, JS and TV between two parallel lines");
  divergence->add_option("--theta", o.thetas, "Offsets between the lines")->delimiter(',');
  divergence->add_option("--out", o.divergence_out, "CSV file, stdout when empty");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and loss");
  gradcheck->add_option("--seeds", o.gradcheck_seeds, "Micro-model seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const SequenceMeta meta = generate_dataset(o.cfg.world, o.dataset_dir);
      out << "dataset: " << meta.frames << " scans (" << meta.frames_per_lap << " per lap) in " << o.dataset_dir << "\n";
    } else if (ingest->parsed()) {
      const SequenceMeta meta = ingest_dataset(o.ingest_src, o.dataset_dir, o.ingest_frames_per_lap);
      out << "dataset: ingested " << meta.frames << " scans into " << o.dataset_dir << "\n";
    } else if (map->parsed()) {
      const PerturbSpec tagged = PerturbSpec::parse_tag(o.perturb_tag);
      o.cfg.map.perturb.t_max = tagged.t_max;
      o.cfg.map.perturb.r_max = tagged.r_max;
      const std::size_t n = build_maps(o.dataset_dir, o.maps_dir, o.cfg.map);
      out << "map: " << n << " frames in " << o.maps_dir << "\n";
    } else if (train->parsed()) {
      o.cfg.train.validate();
      const TrainOutcome t = train_stage(o.maps_dir, parse_model_kind(o.model_kind), o.cfg.arch, o.cfg.train);
      fs::create_directories(o.train_out);
      save_model(o.train_out + "/model.ckpt", t.model);
      write_loss_csv(o.train_out + "/losses.csv", t.report);
      out << "train: " << o.cfg.train.iterations << " iterations, checkpoint " << o.train_out << "/model.ckpt\n";
    } else if (encode->parsed()) {
      const EncodeMode mode = parse_encode_mode(o.encode_mode);
      std::vector<LatentCode> codes;
      if (mode == EncodeMode::kSad) {
        codes = encode_stage(o.maps_dir, mode, nullptr);
      } else {
        const BiGANModel model = load_model(maybe_missing(o.model_path, "encode"));
        codes = encode_stage(o.maps_dir, mode, &model);
      }
      const auto dim = static_cast<std::uint32_t>(codes.empty() ? 0 : codes.front().values.size());
      save_codes(o.codes_path, codes, dim);
      out << "encode: " << codes.size() << " codes of length " << dim << " in " << o.codes_path << "\n";
    } else if (match->parsed()) {
      const SequenceMeta meta = load_meta(maybe_missing(o.maps_dir + "/meta.cfg", "match"));
      std::vector<LatentCode> codes;
      if (!o.codes_in.empty()) {
        codes = load_codes(maybe_missing(o.codes_in, "match"));
      } else if (o.cfg.match.features == "sad") {
        codes = encode_stage(o.maps_dir, EncodeMode::kSad, nullptr);
      } else {
        throw InvalidArgument("match --features " + o.cfg.match.features + " needs --codes");
      }
      if (codes.size() != meta.frames) {
        throw DataIntegrityError("code file holds " + std::to_string(codes.size()) + " codes but " + o.maps_dir +
                                 " has " + std::to_string(meta.frames) + " frames");
      }
      const MatchOutcome m = match_stage(codes, meta.frames_per_lap, o.cfg.match);
      save_match_outputs(o.match_dir, m, o.cfg.match);
      out << "match: " << m.raw.rows << "x" << m.raw.cols << " matrix, " << m.matches.size() << " results in "
          << o.match_dir << "\n";
    } else if (eval->parsed()) {
      const SequenceMeta meta = load_meta(maybe_missing(o.maps_dir + "/meta.cfg", "eval"));
      const std::string match_cfg = maybe_missing(o.match_dir + "/match.cfg", "eval");
      std::ifstream cfg_file(match_cfg);
      std::string line, features = "unknown";
      int d_s = o.cfg.match.seq.d_s;
      double threshold = o.cfg.match.seq.score_threshold;
      while (std::getline(cfg_file, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "features") features = value;
        if (key == "d_s") d_s = std::stoi(value);
        if (key == "score_threshold") threshold = std::stod(value);
      }
      const auto matches = load_matches_csv(maybe_missing(o.match_dir + "/matches.csv", "eval"), d_s);
      const EvalOutcome e = evaluate(matches, ground_truth(o.maps_dir, o.cfg.d_thresh));
      write_eval_outputs(o.eval_dir, e);
      const SummaryRecord record = summary_record(e, o.cfg.experiment, features, meta.perturbation, threshold);
      if (!o.summary_path.empty()) append_summary(o.summary_path, record);
      out << summary_json(record) << "\n";
    } else if (divergence->parsed()) {
      const std::string csv = divergence_csv(o.thetas);
      if (o.divergence_out.empty()) {
        out << csv;
      } else {
        write_text(o.divergence_out, csv);
      }
    } else if (gradcheck->parsed()) {
      bool all = true;
      for (const GradcheckResult& r : gradcheck_suite(o.gradcheck_seeds)) {
        out << (r.passed ? "ok   " : "FAIL ") << r.name << " max_rel_error=" << r.max_rel_error
            << " checked=" << r.checked << " kinks=" << r.kinks << "\n";
        all = all && r.passed;
      }
      if (!all) {
        err << "gradcheck: some gradients disagree with finite differences\n";
        return kExitNumeric;
      }
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MalformedFile& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadData;
  } catch (const DataIntegrityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadData;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << " (at " << e.index() << ")\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace safl::cli
