#pragma once

// LiDAR frames, poses, toy worlds and the simulated scanner used to build
// loop-bearing test sequences.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace safl {

using Rng = std::mt19937_64;

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

struct PointCloud {
  std::vector<Point3> points;
  std::uint32_t frame_id = 0;
  double timestamp = 0.0;
};

/// Sensor pose in the world frame. Angles are kept in (-pi, pi].
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

double normalize_angle(double a);
double planar_distance(const Pose& a, const Pose& b);

struct Rect {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  bool empty() const { return !(max_x > min_x && max_y > min_y); }
  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// 2.5D obstacle: an axis-aligned footprint extruded from the ground plane.
struct Box {
  Rect footprint;
  double height = 1.0;

  friend bool operator==(const Box&, const Box&) = default;
};

struct World {
  Rect bounds;
  std::vector<Box> obstacles;
  std::uint64_t seed = 0;

  friend bool operator==(const World&, const World&) = default;
};

struct LidarSpec {
  int azimuth_count = 360;
  std::vector<double> elevation_angles = default_elevations();
  double max_range = 50.0;
  /// Gaussian range noise; zero keeps scans noise free.
  double range_sigma = 0.0;

  /// 8 rings evenly spaced in [-0.3, 0.1] rad.
  static std::vector<double> default_elevations();
  void validate() const;
};

/// Viewpoint noise: translation uniform over a disk of radius t_max,
/// heading uniform over (-r_max/2, r_max/2).
struct PerturbSpec {
  double t_max = 0.0;
  double r_max = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// `T{a}_R{b}`, e.g. "T5_R1.5".
  static PerturbSpec parse_tag(const std::string& tag);
  std::string tag() const;
};

/// Decode a KITTI velodyne `.bin` file (float32 x, y, z, reflectance per point).
PointCloud load_kitti_scan(const std::string& path);
void save_kitti_scan(const std::string& path, const PointCloud& cloud);

/// Deterministic random box world. Throws InvalidArgument on empty bounds.
World generate_world(std::uint64_t seed, int n_obstacles, const Rect& bounds);

/// Removes obstacles whose footprint comes within `clearance` of any segment
/// of the polyline, so trajectories never start inside a box.
World clear_corridor(World world, const std::vector<std::pair<double, double>>& polyline,
                     double clearance);

/// Casts one ray per (azimuth, elevation) pair; points are in the sensor frame.
/// `rng` is only consulted when `spec.range_sigma > 0`.
PointCloud simulate_scan(const World& world, const Pose& pose, const LidarSpec& spec,
                         Rng* rng = nullptr);

Pose perturb_pose(const Pose& pose, const PerturbSpec& spec, Rng& rng);

/// Samples the waypoint polyline every `step_m` meters; yaw follows the
/// segment direction. Throws InvalidArgument on bad input.
std::vector<Pose> make_trajectory(const World& world,
                                  const std::vector<std::pair<double, double>>& waypoints,
                                  double step_m, double height = 1.8);

/// `frame_id x y z roll pitch yaw` per line; `#` starts a comment.
std::vector<std::pair<std::uint32_t, Pose>> load_pose_file(const std::string& path);
void save_pose_file(const std::string& path,
                    const std::vector<std::pair<std::uint32_t, Pose>>& poses);

/// World description as key=value sections (see README).
void save_world(const std::string& path, const World& world);
World load_world(const std::string& path);

}  // namespace safl
