#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "safl/errors.hpp"
#include "safl/scene.hpp"
#include "test_support.hpp"

using namespace safl;
using safl::testing::TempDir;

namespace {

std::string float_record(float x, float y, float z, float r) {
  std::string s(16, '\0');
  const float v[4] = {x, y, z, r};
  std::memcpy(s.data(), v, 16);
  return s;
}

World wall_world(double distance) {
  World w;
  w.bounds = {-50, -50, 50, 50};
  w.obstacles.push_back({{distance, -5.0, distance + 1.0, 5.0}, 5.0});
  return w;
}

LidarSpec flat_lidar(int azimuths) {
  LidarSpec spec;
  spec.azimuth_count = azimuths;
  spec.elevation_angles = {0.0};
  return spec;
}

}  // namespace

TEST_CASE("kitti scans decode 16-byte records and reject ragged files") {
  TempDir dir;
  safl::testing::spit(dir.file("empty.bin"), "");
  CHECK(load_kitti_scan(dir.file("empty.bin")).points.empty());

  safl::testing::spit(dir.file("one.bin"), float_record(1.0f, 2.0f, 3.0f, 0.5f));
  const PointCloud one = load_kitti_scan(dir.file("one.bin"));
  REQUIRE(one.points.size() == 1);
  CHECK(one.points[0] == Point3{1.0, 2.0, 3.0});

  safl::testing::spit(dir.file("ragged.bin"), float_record(1, 2, 3, 4) + "abcd");
  CHECK_THROWS_AS(load_kitti_scan(dir.file("ragged.bin")), MalformedFile);
  CHECK_THROWS_AS(load_kitti_scan(dir.file("missing.bin")), IoError);
}

TEST_CASE("kitti round trip preserves float32-representable clouds") {
  TempDir dir;
  PointCloud cloud;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-40.0f, 40.0f);
  for (int i = 0; i < 100; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});
  save_kitti_scan(dir.file("c.bin"), cloud);
  const PointCloud back = load_kitti_scan(dir.file("c.bin"));
  CHECK(back.points == cloud.points);
}

TEST_CASE("generate_world is deterministic and keeps boxes in bounds") {
  const Rect bounds{0, 0, 100, 100};
  CHECK(generate_world(7, 0, bounds).obstacles.empty());
  CHECK(generate_world(7, 20, bounds) == generate_world(7, 20, bounds));
  CHECK_FALSE(generate_world(7, 20, bounds) == generate_world(8, 20, bounds));
  const World w = generate_world(7, 20, bounds);
  REQUIRE(w.obstacles.size() == 20);
  for (const Box& b : w.obstacles) {
    CHECK(b.height > 0.0);
    CHECK_FALSE(b.footprint.empty());
    CHECK(bounds.contains(b.footprint.min_x, b.footprint.min_y));
    CHECK(bounds.contains(b.footprint.max_x, b.footprint.max_y));
  }
  CHECK_THROWS_AS(generate_world(7, 5, Rect{0, 0, 0, 10}), InvalidArgument);
  CHECK_THROWS_AS(generate_world(7, -1, bounds), InvalidArgument);
}

TEST_CASE("simulate_scan hits an analytic wall") {
  CHECK(simulate_scan(World{{-10, -10, 10, 10}, {}, 0}, Pose{}, LidarSpec{}).points.empty());

  Pose pose;
  pose.z = 1.0;
  const PointCloud cloud = simulate_scan(wall_world(10.0), pose, flat_lidar(4));
  // Only the forward beam of the four meets the wall.
  REQUIRE(cloud.points.size() == 1);
  CHECK(cloud.points[0].x == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(cloud.points[0].y) < 1e-9);
  CHECK(std::abs(cloud.points[0].z) < 1e-9);
}

TEST_CASE("simulate_scan respects max_range") {
  Pose pose;
  pose.z = 1.0;
  LidarSpec spec = flat_lidar(360);
  spec.max_range = 9.5;
  CHECK(simulate_scan(wall_world(10.0), pose, spec).points.empty());

  const World world = generate_world(11, 40, {0, 0, 100, 100});
  LidarSpec dense;
  dense.max_range = 20.0;
  Pose p{50, 50, 1.8, 0, 0, 0.3};
  for (const Point3& q : simulate_scan(world, p, dense).points) {
    CHECK(std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z) <= 20.0 + 1e-12);
  }
}

TEST_CASE("yawing the sensor by pi permutes beams by half a turn") {
  const World world = generate_world(5, 30, {0, 0, 60, 60});
  const LidarSpec spec = flat_lidar(36);
  Pose a{30, 30, 1.5, 0, 0, 0};
  Pose b = a;
  b.yaw = std::numbers::pi;
  // With one ring, beam i of the yawed scan equals beam i + n/2 of the
  // original, rotated by pi. Compare the sets of points.
  const PointCloud ca = simulate_scan(world, a, spec);
  const PointCloud cb = simulate_scan(world, b, spec);
  REQUIRE(ca.points.size() == cb.points.size());
  for (const Point3& p : cb.points) {
    const Point3 r{-p.x, -p.y, p.z};
    bool found = false;
    for (const Point3& q : ca.points) {
      if (std::abs(q.x - r.x) < 1e-9 && std::abs(q.y - r.y) < 1e-9 && std::abs(q.z - r.z) < 1e-9) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("scans are equivariant under planar translation") {
  World world = generate_world(9, 25, {0, 0, 80, 80});
  Pose pose{40, 40, 1.8, 0, 0, 0.7};
  const PointCloud before = simulate_scan(world, pose, LidarSpec{});
  for (Box& b : world.obstacles) {
    b.footprint.min_x += 12.5;
    b.footprint.max_x += 12.5;
    b.footprint.min_y -= 7.25;
    b.footprint.max_y -= 7.25;
  }
  pose.x += 12.5;
  pose.y -= 7.25;
  const PointCloud after = simulate_scan(world, pose, LidarSpec{});
  REQUIRE(before.points.size() == after.points.size());
  for (std::size_t i = 0; i < before.points.size(); ++i) {
    CHECK(before.points[i].x == doctest::Approx(after.points[i].x).epsilon(1e-9));
    CHECK(before.points[i].y == doctest::Approx(after.points[i].y).epsilon(1e-9));
  }
}

TEST_CASE("perturb_pose draws within the stated amplitudes") {
  Rng rng(1);
  const Pose base{10, 20, 1.8, 0.1, -0.05, 0.3};
  CHECK(perturb_pose(base, PerturbSpec{0.0, 0.0, 0}, rng) == base);

  const PerturbSpec spec{5.0, 1.5, 0};
  Rng draws(42);
  double mean_dyaw = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Pose p = perturb_pose(base, spec, draws);
    CHECK(planar_distance(p, base) <= 5.0 + 1e-12);
    const double dyaw = normalize_angle(p.yaw - base.yaw);
    CHECK(std::abs(dyaw) < 0.75);
    CHECK(p.z == base.z);
    CHECK(p.roll == base.roll);
    CHECK(p.pitch == base.pitch);
    mean_dyaw += dyaw;
  }
  mean_dyaw /= n;
  const double sigma = 1.5 / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean_dyaw) < 3.0 * sigma);

  Rng r1(99), r2(99);
  CHECK(perturb_pose(base, spec, r1) == perturb_pose(base, spec, r2));
}

TEST_CASE("perturbation tags parse and print") {
  const PerturbSpec s = PerturbSpec::parse_tag("T5_R1.5");
  CHECK(s.t_max == 5.0);
  CHECK(s.r_max == 1.5);
  CHECK(s.tag() == "T5_R1.5");
  CHECK(PerturbSpec::parse_tag("T0_R2").tag() == "T0_R2");
  CHECK_THROWS_AS(PerturbSpec::parse_tag("R2"), InvalidArgument);
  CHECK_THROWS_AS(PerturbSpec::parse_tag("T1_Rx"), InvalidArgument);
}

TEST_CASE("make_trajectory samples polylines") {
  World world;
  world.bounds = {0, 0, 100, 100};
  const auto straight = make_trajectory(world, {{10, 10}, {20, 10}}, 1.0);
  REQUIRE(straight.size() == 11);
  for (const Pose& p : straight) CHECK(p.yaw == 0.0);
  CHECK(straight.back().x == doctest::Approx(20.0));

  const std::vector<std::pair<double, double>> square{{20, 20}, {80, 20}, {80, 80}, {20, 80}, {20, 20}};
  const auto loop = make_trajectory(world, square, 2.0);
  CHECK(planar_distance(loop.front(), loop.back()) <= 2.0);

  std::vector<std::pair<double, double>> two_laps = square;
  two_laps.insert(two_laps.end(), square.begin() + 1, square.end());
  const auto laps = make_trajectory(world, two_laps, 2.0);
  const std::size_t lap = 120;  // 240 m perimeter at 2 m
  REQUIRE(laps.size() >= 2 * lap);
  for (std::size_t i = 0; i < lap; ++i) {
    CHECK(planar_distance(laps[i], laps[i + lap]) <= 2.0);
  }

  CHECK_THROWS_AS(make_trajectory(world, {{10, 10}, {120, 10}}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory(world, {{10, 10}}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory(world, {{10, 10}, {20, 10}}, 0.0), InvalidArgument);
}

TEST_CASE("pose and world files round trip") {
  TempDir dir;
  std::vector<std::pair<std::uint32_t, Pose>> poses{{0, {1.5, -2.25, 1.8, 0, 0, 0.1}},
                                                    {7, {3.0 / 7.0, 1e-17, 2, 0.2, -0.3, -3.0}}};
  save_pose_file(dir.file("poses.txt"), poses);
  CHECK(load_pose_file(dir.file("poses.txt")) == poses);

  safl::testing::spit(dir.file("c.txt"), "# header\n3 1 2 3 0 0 0  # trailing\n\n");
  const auto c = load_pose_file(dir.file("c.txt"));
  REQUIRE(c.size() == 1);
  CHECK(c[0].first == 3);
  CHECK(c[0].second.z == 3.0);

  safl::testing::spit(dir.file("bad.txt"), "1 2 3\n");
  CHECK_THROWS_AS(load_pose_file(dir.file("bad.txt")), MalformedFile);

  const World w = generate_world(3, 12, {0, 0, 50, 40});
  save_world(dir.file("w.cfg"), w);
  CHECK(load_world(dir.file("w.cfg")) == w);
}

TEST_CASE("normalize_angle maps into (-pi, pi]") {
  constexpr double pi = std::numbers::pi;
  CHECK(normalize_angle(pi) == pi);
  CHECK(normalize_angle(-pi) == doctest::Approx(pi));
  CHECK(normalize_angle(3 * pi / 2) == doctest::Approx(-pi / 2));
  CHECK(normalize_angle(0.25) == 0.25);
}
