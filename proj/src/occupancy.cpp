#include "safl/occupancy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "format.hpp"
#include "safl/errors.hpp"

namespace safl {

OccupancyOctree::OccupancyOctree(double resolution, int max_depth, SensorModel model)
    : resolution_(resolution), max_depth_(max_depth), model_(model) {
  if (!(resolution > 0.0)) {
    throw InvalidArgument("octree resolution must be positive");
  }
  if (max_depth < 1 || max_depth > kMaxSupportedDepth) {
    throw InvalidArgument("octree max_depth must be in [1, 21]");
  }
  if (!(model.clamp_min <= model.clamp_max)) {
    throw InvalidArgument("clamp_min must not exceed clamp_max");
  }
}

bool OccupancyOctree::key_for(double x, double y, double z, VoxelKey& key) const {
  const double half = std::ldexp(1.0, max_depth_ - 1);
  const double limit = std::ldexp(1.0, max_depth_);
  const double coords[3] = {x, y, z};
  std::uint32_t out[3];
  for (int a = 0; a < 3; ++a) {
    const double k = std::floor(coords[a] / resolution_) + half;
    if (!(k >= 0.0 && k < limit)) {
      return false;
    }
    out[a] = static_cast<std::uint32_t>(k);
  }
  key = {out[0], out[1], out[2]};
  return true;
}

Point3 OccupancyOctree::center_of(const VoxelKey& key) const {
  const double half = std::ldexp(1.0, max_depth_ - 1);
  return {(key.x - half + 0.5) * resolution_, (key.y - half + 0.5) * resolution_,
          (key.z - half + 0.5) * resolution_};
}

double OccupancyOctree::log_odds(const VoxelKey& key) const {
  auto it = leaves_.find(key.packed());
  if (it == leaves_.end()) {
    throw InvalidArgument("voxel not present in map");
  }
  return it->second;
}

void OccupancyOctree::update(const VoxelKey& key, double delta) {
  double& v = leaves_[key.packed()];
  v = std::clamp(v + delta, model_.clamp_min, model_.clamp_max);
}

void OccupancyOctree::set(const VoxelKey& key, double log_odds) {
  leaves_[key.packed()] = std::clamp(log_odds, model_.clamp_min, model_.clamp_max);
}

namespace {

// Voxels crossed by the segment origin->end, excluding the end voxel
// (Amanatides & Woo traversal in key space).
void trace_free_voxels(const OccupancyOctree& map, const Point3& origin, const Point3& end,
                       const VoxelKey& start_key, const VoxelKey& end_key,
                       std::unordered_set<std::uint64_t>& free) {
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {end.x - origin.x, end.y - origin.y, end.z - origin.z};
  const double length = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (length == 0.0) {
    return;
  }
  const double res = map.resolution();
  std::int64_t cur[3] = {start_key.x, start_key.y, start_key.z};
  const std::int64_t target[3] = {end_key.x, end_key.y, end_key.z};
  int step[3];
  double t_max[3];
  double t_delta[3];
  const Point3 c = map.center_of(start_key);
  const double centre[3] = {c.x, c.y, c.z};
  for (int a = 0; a < 3; ++a) {
    const double dir = d[a] / length;
    if (dir > 0.0) {
      step[a] = 1;
    } else if (dir < 0.0) {
      step[a] = -1;
    } else {
      step[a] = 0;
    }
    if (step[a] != 0) {
      const double border = centre[a] + step[a] * 0.5 * res;
      t_max[a] = (border - o[a]) / dir;
      t_delta[a] = res / std::abs(dir);
    } else {
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }
  const std::int64_t max_steps = 4 * (std::abs(target[0] - cur[0]) + std::abs(target[1] - cur[1]) +
                                      std::abs(target[2] - cur[2])) + 4;
  for (std::int64_t i = 0; i < max_steps; ++i) {
    if (cur[0] == target[0] && cur[1] == target[1] && cur[2] == target[2]) {
      return;
    }
    free.insert(VoxelKey{static_cast<std::uint32_t>(cur[0]), static_cast<std::uint32_t>(cur[1]),
                         static_cast<std::uint32_t>(cur[2])}
                    .packed());
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > length) {
      return;  // numerical overshoot; the end voxel is adjacent
    }
    cur[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace

void integrate_scan(OccupancyOctree& map, const PointCloud& cloud, const Pose& origin) {
  const double cr = std::cos(origin.roll), sr = std::sin(origin.roll);
  const double cp = std::cos(origin.pitch), sp = std::sin(origin.pitch);
  const double cy = std::cos(origin.yaw), sy = std::sin(origin.yaw);
  const double r[3][3] = {{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
                          {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
                          {-sp, cp * sr, cp * cr}};
  const Point3 sensor{origin.x, origin.y, origin.z};
  VoxelKey start_key;
  if (!map.key_for(sensor.x, sensor.y, sensor.z, start_key)) {
    return;
  }
  std::unordered_set<std::uint64_t> free;
  std::unordered_set<std::uint64_t> occupied;
  for (const Point3& p : cloud.points) {
    const Point3 w{r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + sensor.x,
                   r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + sensor.y,
                   r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + sensor.z};
    VoxelKey end_key;
    if (!map.key_for(w.x, w.y, w.z, end_key)) {
      continue;
    }
    occupied.insert(end_key.packed());
    trace_free_voxels(map, sensor, w, start_key, end_key, free);
  }
  const double l_hit = map.model().l_hit();
  const double l_miss = map.model().l_miss();
  for (std::uint64_t k : occupied) {
    map.update(VoxelKey::unpack(k), l_hit);
  }
  for (std::uint64_t k : free) {
    if (!occupied.count(k)) {
      map.update(VoxelKey::unpack(k), l_miss);
    }
  }
}

OccupancyOctree crop_local(const OccupancyOctree& map, const Pose& center, double radius) {
  if (!(radius > 0.0)) {
    throw InvalidArgument("crop radius must be positive");
  }
  OccupancyOctree out(map.resolution(), map.max_depth(), map.model());
  for (const auto& [packed, value] : map.leaves()) {
    const VoxelKey key = VoxelKey::unpack(packed);
    const Point3 c = map.center_of(key);
    if (std::abs(c.x - center.x) <= radius && std::abs(c.y - center.y) <= radius) {
      out.set(key, value);
    }
  }
  return out;
}

void GridSpec::validate() const {
  if (!(radius > 0.0) || !(cell > 0.0)) {
    throw InvalidArgument("grid radius and cell must be positive");
  }
  if (!(occupied_threshold > 0.0 && occupied_threshold < 1.0)) {
    throw InvalidArgument("occupied_threshold must lie in (0, 1)");
  }
}

PixelIndex robot_frame_to_pixel(double forward, double left, const GridSpec& grid) {
  return {static_cast<long>(std::floor((grid.radius - forward) / grid.cell)),
          static_cast<long>(std::floor((grid.radius - left) / grid.cell))};
}

TopViewImage project_topview(const OccupancyOctree& local_map, const GridSpec& grid, const Pose& center) {
  grid.validate();
  TopViewImage img;
  img.width = img.height = grid.size();
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  img.origin_pose = center;
  img.cell = grid.cell;
  const double c = std::cos(center.yaw);
  const double s = std::sin(center.yaw);
  for (const auto& [packed, value] : local_map.leaves()) {
    if (!(occupancy_probability(value) > grid.occupied_threshold)) {
      continue;
    }
    const Point3 p = local_map.center_of(VoxelKey::unpack(packed));
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    const PixelIndex px = robot_frame_to_pixel(c * dx + s * dy, -s * dx + c * dy, grid);
    if (px.row >= 0 && px.row < img.height && px.col >= 0 && px.col < img.width) {
      img.pixels[static_cast<std::size_t>(px.row) * img.width + px.col] = 255;
    }
  }
  return img;
}

TopViewImage rotate_topview(const TopViewImage& image, double angle) {
  TopViewImage out = image;
  std::fill(out.pixels.begin(), out.pixels.end(), 0);
  out.origin_pose.yaw = normalize_angle(image.origin_pose.yaw + angle);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double half_w = 0.5 * image.width;
  const double half_h = 0.5 * image.height;
  for (int r = 0; r < image.height; ++r) {
    for (int col = 0; col < image.width; ++col) {
      // Output pixel centre in (forward, left) image units.
      const double u = half_h - (r + 0.5);
      const double v = half_w - (col + 0.5);
      const double su = c * u - s * v;
      const double sv = s * u + c * v;
      const long sr = static_cast<long>(std::floor(half_h - su));
      const long sc = static_cast<long>(std::floor(half_w - sv));
      if (sr >= 0 && sr < image.height && sc >= 0 && sc < image.width) {
        out.pixels[static_cast<std::size_t>(r) * image.width + col] = image.at(sr, sc);
      }
    }
  }
  return out;
}

void save_pgm(const std::string& path, const TopViewImage& image) {
  detail::ByteWriter out;
  out.bytes("P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n");
  out.bytes(std::string_view(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size()));
  detail::write_file(path, out.data());
}

TopViewImage load_pgm(const std::string& path) {
  const std::vector<char> raw = detail::read_file(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) {
      tok += raw[pos++];
    }
    return tok;
  };
  if (next_token() != "P5") {
    throw MalformedFile(path + ": not a binary PGM (P5)");
  }
  TopViewImage img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 255) {
      throw MalformedFile(path + ": maxval must be 255");
    }
  } catch (const std::logic_error&) {
    throw MalformedFile(path + ": bad PGM header");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (img.width <= 0 || img.height <= 0 || raw.size() - std::min(pos, raw.size()) != n) {
    throw MalformedFile(path + ": pixel payload size mismatch");
  }
  img.pixels.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos), raw.end());
  return img;
}

void save_octree_snapshot(const std::string& path, const OccupancyOctree& map) {
  std::vector<std::pair<std::uint64_t, double>> sorted(map.leaves().begin(), map.leaves().end());
  std::sort(sorted.begin(), sorted.end());
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  out << "# key_x key_y key_z log_odds (resolution " << detail::format_double(map.resolution())
      << ", depth " << map.max_depth() << ")\n";
  for (const auto& [packed, value] : sorted) {
    const VoxelKey k = VoxelKey::unpack(packed);
    out << k.x << ' ' << k.y << ' ' << k.z << ' ' << detail::format_double(value) << '\n';
  }
}

}  // namespace safl
