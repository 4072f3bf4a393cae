#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "app.hpp"
#include "doctest.h"
#include "pipeline.hpp"
#include "safl/learner.hpp"
#include "safl/matcher.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using safl::testing::slurp;
using safl::testing::spit;
using safl::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "safl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = safl::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A coarse world: 20 frames per lap keeps the whole pipeline under a second.
std::vector<std::string> small_world(const std::string& out) {
  return {"dataset", "gen", "--out", out, "--seed", "7", "--laps", "2", "--step", "10", "--azimuths", "120"};
}

std::vector<std::string> files_under(const fs::path& root) {
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) names.push_back(fs::relative(e.path(), root).string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Pose file lines other than the leading comment.
std::vector<std::string> pose_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  return lines;
}

}  // namespace

TEST_CASE("dataset gen is byte-reproducible and has one pose per scan") {
  TempDir dir;
  REQUIRE(run(small_world(dir.file("a"))).code == 0);
  REQUIRE(run(small_world(dir.file("b"))).code == 0);
  const auto names = files_under(dir.file("a"));
  CHECK(names == files_under(dir.file("b")));
  for (const auto& n : names) CHECK(slurp(dir.file("a/" + n)) == slurp(dir.file("b/" + n)));

  const auto scans = files_under(dir.file("a/scans"));
  CHECK(scans.size() == 40);
  CHECK(pose_lines(slurp(dir.file("a/poses.txt"))).size() == scans.size());
}

TEST_CASE("ingest rejects a malformed scan and names it") {
  TempDir dir;
  fs::create_directories(dir.file("src"));
  spit(dir.file("src/000000.bin"), std::string(16, '\0'));
  spit(dir.file("src/000001.bin"), std::string(5, '\0'));
  spit(dir.file("src/poses.txt"), "");
  const Run r = run({"dataset", "ingest", "--src", dir.file("src"), "--out", dir.file("ds")});
  CHECK(r.code == safl::cli::kExitBadData);
  CHECK(r.err.find("000001.bin") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.file("ds/scans")));
}

TEST_CASE("an empty dataset maps to zero frames") {
  TempDir dir;
  fs::create_directories(dir.file("src"));
  spit(dir.file("src/poses.txt"), "");
  REQUIRE(run({"dataset", "ingest", "--src", dir.file("src"), "--out", dir.file("ds")}).code == 0);
  const Run r = run({"map", "--dataset", dir.file("ds"), "--out", dir.file("maps")});
  CHECK(r.code == 0);
  CHECK(r.out.find("map: 0 frames") != std::string::npos);
}

TEST_CASE("maps are idempotent and one per scan") {
  TempDir dir;
  REQUIRE(run(small_world(dir.file("ds"))).code == 0);
  for (const char* out : {"m1", "m2"}) {
    REQUIRE(run({"map", "--dataset", dir.file("ds"), "--out", dir.file(out), "--perturb", "T1_R1"}).code == 0);
  }
  const auto names = files_under(dir.file("m1"));
  CHECK(std::count_if(names.begin(), names.end(), [](const std::string& n) { return n.ends_with(".pgm"); }) == 40);
  for (const auto& n : names) CHECK(slurp(dir.file("m1/" + n)) == slurp(dir.file("m2/" + n)));
  CHECK(safl::cli::load_meta(dir.file("m1/meta.cfg")).perturbation == "T1_R1");
}

TEST_CASE("a missing pose is reported with its frame") {
  TempDir dir;
  REQUIRE(run(small_world(dir.file("ds"))).code == 0);
  std::string kept;
  for (const std::string& line : pose_lines(slurp(dir.file("ds/poses.txt")))) {
    if (!line.starts_with("2 ")) kept += line + "\n";
  }
  spit(dir.file("ds/poses.txt"), kept);
  const Run r = run({"map", "--dataset", dir.file("ds"), "--out", dir.file("maps")});
  CHECK(r.code == safl::cli::kExitBadData);
  CHECK(r.err.find("frame 2") != std::string::npos);
}

TEST_CASE("pipeline stages on the small world") {
  TempDir dir;
  REQUIRE(run(small_world(dir.file("ds"))).code == 0);
  REQUIRE(run({"map", "--dataset", dir.file("ds"), "--out", dir.file("maps")}).code == 0);

  // Encoding before training reports the missing checkpoint.
  const Run early = run({"encode", "--maps", dir.file("maps"), "--model", dir.file("model/model.ckpt")});
  CHECK(early.code == safl::cli::kExitIo);
  CHECK(early.err.find(dir.file("model/model.ckpt")) != std::string::npos);

  const Run tr = run({"train", "--maps", dir.file("maps"), "--out", dir.file("model"), "--iterations", "0", "--seed", "5"});
  REQUIRE(tr.code == 0);
  const safl::BiGANModel init = safl::BiGANModel::create(safl::ModelKind::kStableAfl, safl::Architecture{}, 5);
  CHECK(safl::load_model(dir.file("model/model.ckpt")) == init);
  CHECK(slurp(dir.file("model/losses.csv")) == "iter,L_J,L_X,L_Z,L_cyc,critic_estimate\n");

  REQUIRE(run({"encode", "--maps", dir.file("maps"), "--model", dir.file("model/model.ckpt"), "--out",
               dir.file("safl.safc")})
              .code == 0);
  CHECK(safl::load_codes(dir.file("safl.safc")).size() == 40);

  // The bigan mode refuses a Stable-AFL checkpoint.
  CHECK(run({"encode", "--maps", dir.file("maps"), "--mode", "bigan-baseline", "--model", dir.file("model/model.ckpt")})
            .code == safl::cli::kExitUsage);

  REQUIRE(run({"match", "--maps", dir.file("maps"), "--features", "sad", "--out", dir.file("sad")}).code == 0);
  REQUIRE(run({"match", "--maps", dir.file("maps"), "--features", "safl", "--codes", dir.file("safl.safc"), "--out",
               dir.file("safl")})
              .code == 0);
  const safl::DifferenceMatrix a = safl::load_matrix(dir.file("sad/matrix.sdmx"));
  const safl::DifferenceMatrix b = safl::load_matrix(dir.file("safl/matrix.sdmx"));
  CHECK(a.rows == 20);
  CHECK(a.cols == 20);
  CHECK(a.rows == b.rows);
  CHECK(a.cols == b.cols);
  CHECK(count_lines(slurp(dir.file("sad/matches.csv"))) == 1 + 20 - 10);

  const Run ev = run({"eval", "--maps", dir.file("maps"), "--match", dir.file("sad"), "--out", dir.file("eval"),
                      "--summary", dir.file("summary.jsonl")});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("\"features\":\"sad\"") != std::string::npos);
  CHECK(ev.out.find("\"perturbation\":\"T0_R0\"") != std::string::npos);
  CHECK(fs::exists(dir.file("eval/pr.csv")));
  CHECK(count_lines(slurp(dir.file("summary.jsonl"))) == 1);

  // Match without codes for a learned feature is a usage error.
  CHECK(run({"match", "--maps", dir.file("maps"), "--features", "safl", "--out", dir.file("x")}).code ==
        safl::cli::kExitUsage);
}

TEST_CASE("help documents defaults") {
  const Run r = run({"match", "--help"});
  CHECK(r.code == 0);
  for (const char* flag : {"--ds", "--v-min", "--v-max", "--v-step", "--enhance-window", "--threshold"}) {
    CHECK(r.out.find(flag) != std::string::npos);
  }
  const auto line_of = [&](const std::string& flag) {
    const std::size_t p = r.out.find(flag);
    return r.out.substr(p, r.out.find('\n', p) - p);
  };
  CHECK(line_of("--ds").find("[10]") != std::string::npos);
  CHECK(line_of("--v-min").find("[0.8]") != std::string::npos);
  CHECK(line_of("--v-max").find("[1.1]") != std::string::npos);
  CHECK(line_of("--enhance-window").find("[10]") != std::string::npos);
  CHECK(run({"train", "--help"}).out.find("[0.01]") != std::string::npos);
}

TEST_CASE("config file values and flag overrides") {
  TempDir dir;
  spit(dir.file("run.cfg"), "[dataset.gen]\nseed=7\nlaps=1\nstep=10\nazimuths=120\n");
  REQUIRE(run({"--config", dir.file("run.cfg"), "dataset", "gen", "--out", dir.file("one")}).code == 0);
  CHECK(safl::cli::load_meta(dir.file("one/meta.cfg")).laps == 1);
  REQUIRE(run({"--config", dir.file("run.cfg"), "dataset", "gen", "--out", dir.file("two"), "--laps", "2"}).code == 0);
  CHECK(safl::cli::load_meta(dir.file("two/meta.cfg")).laps == 2);
}

TEST_CASE("usage errors and small subcommands") {
  CHECK(run({}).code == safl::cli::kExitUsage);
  CHECK(run({"map", "--window", "0"}).code == safl::cli::kExitUsage);
  CHECK(run({"train", "--kind", "gan", "--maps", "/nonexistent"}).code != 0);
  const Run d = run({"divergence", "--theta", "0,0.5"});
  CHECK(d.code == 0);
  CHECK(d.out == "theta,W,JS,TV\n0,0,0,0\n0.5,0.5,0.6931471805599453,1\n");
}
