#pragma once

// Log-odds occupancy voxels, local cropping and the egocentric top-view
// projection that feeds the encoder.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "safl/scene.hpp"

namespace safl {

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double occupancy_probability(double log_odds) { return 1.0 / (1.0 + std::exp(-log_odds)); }

struct SensorModel {
  double p_hit = 0.7;
  double p_miss = 0.4;
  double clamp_min = logit(0.12);
  double clamp_max = logit(0.97);

  double l_hit() const { return logit(p_hit); }
  double l_miss() const { return logit(p_miss); }
  /// Same hit/miss increments with clamping disabled.
  static SensorModel unclamped() {
    SensorModel m;
    m.clamp_min = -std::numeric_limits<double>::infinity();
    m.clamp_max = std::numeric_limits<double>::infinity();
    return m;
  }
};

/// Integer voxel coordinates, offset so that depth-`max_depth` keys are unsigned.
struct VoxelKey {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;

  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(x) << 42) | (static_cast<std::uint64_t>(y) << 21) | z;
  }
  static VoxelKey unpack(std::uint64_t k) {
    constexpr std::uint64_t mask = (1u << 21) - 1;
    return {static_cast<std::uint32_t>((k >> 42) & mask), static_cast<std::uint32_t>((k >> 21) & mask),
            static_cast<std::uint32_t>(k & mask)};
  }
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
};

/// Sparse leaf-level occupancy tree. Only leaves are stored; keys span
/// [0, 2^max_depth) per axis, centred on the world origin.
class OccupancyOctree {
 public:
  static constexpr int kMaxSupportedDepth = 21;

  explicit OccupancyOctree(double resolution = 0.25, int max_depth = 16,
                           SensorModel model = SensorModel{});

  double resolution() const { return resolution_; }
  int max_depth() const { return max_depth_; }
  const SensorModel& model() const { return model_; }

  /// False when the coordinate is outside the representable cube.
  bool key_for(double x, double y, double z, VoxelKey& key) const;
  Point3 center_of(const VoxelKey& key) const;

  std::size_t size() const { return leaves_.size(); }
  bool contains(const VoxelKey& key) const { return leaves_.count(key.packed()) != 0; }
  double log_odds(const VoxelKey& key) const;
  /// Adds `delta` to the leaf (created at 0) and clamps to the model bounds.
  void update(const VoxelKey& key, double delta);
  /// Stores a value directly, clamped to the model bounds.
  void set(const VoxelKey& key, double log_odds);

  const std::unordered_map<std::uint64_t, double>& leaves() const { return leaves_; }

 private:
  double resolution_;
  int max_depth_;
  SensorModel model_;
  std::unordered_map<std::uint64_t, double> leaves_;
};

/// Ray-traces every point from `origin`. Within one scan a voxel is updated at
/// most once; occupied endpoints take precedence over free traversals.
void integrate_scan(OccupancyOctree& map, const PointCloud& cloud, const Pose& origin);

/// Leaves whose centres lie in the world-axis-aligned square of half-width
/// `radius` around the centre pose.
OccupancyOctree crop_local(const OccupancyOctree& map, const Pose& center, double radius);

struct GridSpec {
  double radius = 30.0;
  double cell = 0.25;
  double occupied_threshold = 0.5;

  void validate() const;
  int size() const { return static_cast<int>(std::ceil(2.0 * radius / cell - 1e-9)); }
};

struct TopViewImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
  Pose origin_pose;
  double cell = 0.0;

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  friend bool operator==(const TopViewImage& a, const TopViewImage& b) {
    return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
  }
};

/// Pixel indices of a robot-frame point (forward u, left v). Row 0 is the far
/// forward edge and column 0 the far left edge.
struct PixelIndex {
  long row = 0;
  long col = 0;
};
PixelIndex robot_frame_to_pixel(double forward, double left, const GridSpec& grid);

/// Egocentric binary projection: a pixel is 255 when any voxel of its column
/// is occupied above the grid threshold.
TopViewImage project_topview(const OccupancyOctree& local_map, const GridSpec& grid, const Pose& center);

/// Nearest-neighbour rotation about the image centre; pixels sampled from
/// outside the source stay 0.
TopViewImage rotate_topview(const TopViewImage& image, double angle);

void save_pgm(const std::string& path, const TopViewImage& image);
TopViewImage load_pgm(const std::string& path);

/// One line per leaf: `key_x key_y key_z log_odds`, sorted by key.
void save_octree_snapshot(const std::string& path, const OccupancyOctree& map);

}  // namespace safl
