#include "safl/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "format.hpp"
#include "keyvalue.hpp"
#include "safl/errors.hpp"

namespace safl {

using detail::format_double;

double normalize_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (a > -kPi && a <= kPi) {
    return a;
  }
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) {
    a += 2.0 * kPi;
  }
  return a - kPi;
}

double planar_distance(const Pose& a, const Pose& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

std::vector<double> LidarSpec::default_elevations() {
  std::vector<double> out(8);
  for (int i = 0; i < 8; ++i) {
    out[i] = -0.3 + 0.4 * i / 7.0;
  }
  return out;
}

void LidarSpec::validate() const {
  if (azimuth_count < 1) {
    throw InvalidArgument("azimuth_count must be >= 1");
  }
  if (!(max_range > 0.0)) {
    throw InvalidArgument("max_range must be positive");
  }
  if (range_sigma < 0.0) {
    throw InvalidArgument("range_sigma must be non-negative");
  }
}

void PerturbSpec::validate() const {
  if (!(t_max >= 0.0) || !(r_max >= 0.0)) {
    throw InvalidArgument("perturbation amplitudes must be non-negative");
  }
}

PerturbSpec PerturbSpec::parse_tag(const std::string& tag) {
  auto bad = [&] { return InvalidArgument("perturbation tag must look like T5_R1.5, got '" + tag + "'"); };
  if (tag.size() < 5 || tag[0] != 'T') {
    throw bad();
  }
  auto sep = tag.find("_R");
  if (sep == std::string::npos) {
    throw bad();
  }
  PerturbSpec spec;
  const std::string t = tag.substr(1, sep - 1);
  const std::string r = tag.substr(sep + 2);
  auto parse = [&](const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw bad();
    }
    return v;
  };
  spec.t_max = parse(t);
  spec.r_max = parse(r);
  spec.validate();
  return spec;
}

std::string PerturbSpec::tag() const {
  return "T" + format_double(t_max) + "_R" + format_double(r_max);
}

PointCloud load_kitti_scan(const std::string& path) {
  const std::vector<char> raw = detail::read_file(path);
  if (raw.size() % 16 != 0) {
    throw MalformedFile(path + ": byte length " + std::to_string(raw.size()) +
                        " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.reserve(raw.size() / 16);
  detail::ByteReader in(raw, path);
  while (in.remaining() > 0) {
    Point3 p;
    p.x = in.f32();
    p.y = in.f32();
    p.z = in.f32();
    in.f32();  // reflectance
    cloud.points.push_back(p);
  }
  return cloud;
}

void save_kitti_scan(const std::string& path, const PointCloud& cloud) {
  detail::ByteWriter out;
  for (const Point3& p : cloud.points) {
    out.f32(static_cast<float>(p.x));
    out.f32(static_cast<float>(p.y));
    out.f32(static_cast<float>(p.z));
    out.f32(0.0f);
  }
  detail::write_file(path, out.data());
}

World generate_world(std::uint64_t seed, int n_obstacles, const Rect& bounds) {
  if (bounds.empty()) {
    throw InvalidArgument("world bounds are empty");
  }
  if (n_obstacles < 0) {
    throw InvalidArgument("n_obstacles must be non-negative");
  }
  World world;
  world.bounds = bounds;
  world.seed = seed;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double span_x = bounds.max_x - bounds.min_x;
  const double span_y = bounds.max_y - bounds.min_y;
  for (int i = 0; i < n_obstacles; ++i) {
    // Footprints between 2% and 8% of the world span, clipped to the bounds.
    const double w = std::min(span_x, span_x * (0.02 + 0.06 * unit(rng)));
    const double h = std::min(span_y, span_y * (0.02 + 0.06 * unit(rng)));
    Box box;
    box.footprint.min_x = bounds.min_x + unit(rng) * (span_x - w);
    box.footprint.min_y = bounds.min_y + unit(rng) * (span_y - h);
    box.footprint.max_x = box.footprint.min_x + w;
    box.footprint.max_y = box.footprint.min_y + h;
    box.height = 1.0 + 5.0 * unit(rng);
    world.obstacles.push_back(box);
  }
  return world;
}

namespace {

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

double rect_segment_distance(const Rect& r, double ax, double ay, double bx, double by) {
  // Zero if either endpoint is inside; otherwise the minimum over rectangle
  // edges and segment endpoints (the segment cannot cross without touching).
  if (r.contains(ax, ay) || r.contains(bx, by)) {
    return 0.0;
  }
  const double cx[4] = {r.min_x, r.max_x, r.max_x, r.min_x};
  const double cy[4] = {r.min_y, r.min_y, r.max_y, r.max_y};
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    best = std::min(best, point_segment_distance(cx[i], cy[i], ax, ay, bx, by));
    best = std::min(best, point_segment_distance(ax, ay, cx[i], cy[i], cx[j], cy[j]));
    best = std::min(best, point_segment_distance(bx, by, cx[i], cy[i], cx[j], cy[j]));
  }
  // Proper crossing of an edge.
  auto cross = [](double ox, double oy, double ax_, double ay_, double bx_, double by_) {
    return (ax_ - ox) * (by_ - oy) - (ay_ - oy) * (bx_ - ox);
  };
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    const double d1 = cross(ax, ay, bx, by, cx[i], cy[i]);
    const double d2 = cross(ax, ay, bx, by, cx[j], cy[j]);
    const double d3 = cross(cx[i], cy[i], cx[j], cy[j], ax, ay);
    const double d4 = cross(cx[i], cy[i], cx[j], cy[j], bx, by);
    if (((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0))) {
      return 0.0;
    }
  }
  return best;
}

struct Mat3 {
  double m[3][3];
  Point3 apply(const Point3& p) const {
    return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z};
  }
};

// R = Rz(yaw) * Ry(pitch) * Rx(roll)
Mat3 rotation(const Pose& p) {
  const double cr = std::cos(p.roll), sr = std::sin(p.roll);
  const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);
  const double cy = std::cos(p.yaw), sy = std::sin(p.yaw);
  return {{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
           {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
           {-sp, cp * sr, cp * cr}}};
}

// Entry distance of a ray into a box, or +inf when the ray misses or starts inside.
double ray_box_entry(const Point3& o, const Point3& d, const Box& box) {
  const double lo[3] = {box.footprint.min_x, box.footprint.min_y, 0.0};
  const double hi[3] = {box.footprint.max_x, box.footprint.max_y, box.height};
  const double org[3] = {o.x, o.y, o.z};
  const double dir[3] = {d.x, d.y, d.z};
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (org[a] < lo[a] || org[a] > hi[a]) {
        return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    double t1 = (lo[a] - org[a]) / dir[a];
    double t2 = (hi[a] - org[a]) / dir[a];
    if (t1 > t2) {
      std::swap(t1, t2);
    }
    t_enter = std::max(t_enter, t1);
    t_exit = std::min(t_exit, t2);
  }
  if (t_exit < t_enter || t_enter <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return t_enter;
}

}  // namespace

World clear_corridor(World world, const std::vector<std::pair<double, double>>& polyline,
                     double clearance) {
  std::erase_if(world.obstacles, [&](const Box& box) {
    for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
      const auto [ax, ay] = polyline[i];
      const auto [bx, by] = polyline[i + 1];
      if (rect_segment_distance(box.footprint, ax, ay, bx, by) < clearance) {
        return true;
      }
    }
    return false;
  });
  return world;
}

PointCloud simulate_scan(const World& world, const Pose& pose, const LidarSpec& spec, Rng* rng) {
  spec.validate();
  PointCloud cloud;
  if (world.obstacles.empty()) {
    return cloud;
  }
  const Mat3 rot = rotation(pose);
  const Point3 origin{pose.x, pose.y, pose.z};
  std::normal_distribution<double> jitter(0.0, spec.range_sigma);
  for (int ia = 0; ia < spec.azimuth_count; ++ia) {
    const double az = 2.0 * std::numbers::pi * ia / spec.azimuth_count;
    for (double el : spec.elevation_angles) {
      const Point3 dir_sensor{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const Point3 dir_world = rot.apply(dir_sensor);
      double best = std::numeric_limits<double>::infinity();
      for (const Box& box : world.obstacles) {
        best = std::min(best, ray_box_entry(origin, dir_world, box));
      }
      if (!(best <= spec.max_range)) {
        continue;
      }
      double range = best;
      if (spec.range_sigma > 0.0 && rng != nullptr) {
        range = std::clamp(range + jitter(*rng), 0.0, spec.max_range);
      }
      cloud.points.push_back({range * dir_sensor.x, range * dir_sensor.y, range * dir_sensor.z});
    }
  }
  return cloud;
}

Pose perturb_pose(const Pose& pose, const PerturbSpec& spec, Rng& rng) {
  spec.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double radius = spec.t_max * std::sqrt(unit(rng));
  const double phi = 2.0 * std::numbers::pi * unit(rng);
  const double dyaw = spec.r_max * (unit(rng) - 0.5);
  Pose out = pose;
  if (radius > 0.0) {
    out.x += radius * std::cos(phi);
    out.y += radius * std::sin(phi);
  }
  if (dyaw != 0.0) {
    out.yaw = normalize_angle(pose.yaw + dyaw);
  }
  return out;
}

std::vector<Pose> make_trajectory(const World& world,
                                  const std::vector<std::pair<double, double>>& waypoints,
                                  double step_m, double height) {
  if (waypoints.size() < 2) {
    throw InvalidArgument("trajectory needs at least two waypoints");
  }
  if (!(step_m > 0.0)) {
    throw InvalidArgument("step_m must be positive");
  }
  for (const auto& [x, y] : waypoints) {
    if (!world.bounds.contains(x, y)) {
      throw InvalidArgument("waypoint (" + format_double(x) + ", " + format_double(y) +
                            ") lies outside the world bounds");
    }
  }
  std::vector<double> cumulative{0.0};
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    cumulative.push_back(cumulative.back() + std::hypot(waypoints[i + 1].first - waypoints[i].first,
                                                        waypoints[i + 1].second - waypoints[i].second));
  }
  const double total = cumulative.back();
  const auto n_steps = static_cast<std::size_t>(std::floor(total / step_m + 1e-9));
  std::vector<Pose> poses;
  poses.reserve(n_steps + 1);
  std::size_t seg = 0;
  for (std::size_t i = 0; i <= n_steps; ++i) {
    const double s = std::min(i * step_m, total);
    while (seg + 2 < cumulative.size() && s >= cumulative[seg + 1]) {
      ++seg;
    }
    // Skip zero-length segments when choosing the heading.
    std::size_t heading_seg = seg;
    while (heading_seg + 2 < cumulative.size() && cumulative[heading_seg + 1] == cumulative[heading_seg]) {
      ++heading_seg;
    }
    const auto [ax, ay] = waypoints[seg];
    const auto [bx, by] = waypoints[seg + 1];
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double f = len > 0.0 ? (s - cumulative[seg]) / len : 0.0;
    Pose p;
    p.x = ax + f * (bx - ax);
    p.y = ay + f * (by - ay);
    p.z = height;
    const auto [hx0, hy0] = waypoints[heading_seg];
    const auto [hx1, hy1] = waypoints[heading_seg + 1];
    p.yaw = normalize_angle(std::atan2(hy1 - hy0, hx1 - hx0));
    poses.push_back(p);
  }
  return poses;
}

std::vector<std::pair<std::uint32_t, Pose>> load_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<std::pair<std::uint32_t, Pose>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream fields(line);
    long long id = 0;
    Pose p;
    if (!(fields >> id)) {
      continue;  // blank or comment-only line
    }
    if (!(fields >> p.x >> p.y >> p.z >> p.roll >> p.pitch >> p.yaw) || id < 0) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": expected 'frame_id x y z roll pitch yaw'");
    }
    std::string extra;
    if (fields >> extra) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": trailing field '" + extra + "'");
    }
    p.roll = normalize_angle(p.roll);
    p.pitch = normalize_angle(p.pitch);
    p.yaw = normalize_angle(p.yaw);
    out.emplace_back(static_cast<std::uint32_t>(id), p);
  }
  return out;
}

void save_pose_file(const std::string& path,
                    const std::vector<std::pair<std::uint32_t, Pose>>& poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  out << "# frame_id x y z roll pitch yaw\n";
  for (const auto& [id, p] : poses) {
    out << id << ' ' << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z)
        << ' ' << format_double(p.roll) << ' ' << format_double(p.pitch) << ' '
        << format_double(p.yaw) << '\n';
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

void save_world(const std::string& path, const World& world) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  out << "# box_NNNN = min_x min_y max_x max_y height\n";
  out << "[world]\n";
  out << "seed = " << world.seed << '\n';
  out << "min_x = " << format_double(world.bounds.min_x) << '\n';
  out << "min_y = " << format_double(world.bounds.min_y) << '\n';
  out << "max_x = " << format_double(world.bounds.max_x) << '\n';
  out << "max_y = " << format_double(world.bounds.max_y) << '\n';
  out << "\n[obstacles]\n";
  char key[32];
  for (std::size_t i = 0; i < world.obstacles.size(); ++i) {
    const Box& b = world.obstacles[i];
    std::snprintf(key, sizeof(key), "box_%04zu", i);
    out << key << " = " << format_double(b.footprint.min_x) << ' ' << format_double(b.footprint.min_y)
        << ' ' << format_double(b.footprint.max_x) << ' ' << format_double(b.footprint.max_y) << ' '
        << format_double(b.height) << '\n';
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

World load_world(const std::string& path) {
  const auto kv = detail::KeyValueFile::load(path);
  World world;
  world.seed = static_cast<std::uint64_t>(kv.integer("world.seed"));
  world.bounds = {kv.number("world.min_x"), kv.number("world.min_y"), kv.number("world.max_x"),
                  kv.number("world.max_y")};
  for (const auto& key : kv.keys_with_prefix("obstacles.box_")) {
    const auto& v = kv.values(key);
    if (v.size() != 5) {
      throw MalformedFile(path + ": " + key + " needs 5 values");
    }
    Box b;
    try {
      b.footprint = {std::stod(v[0]), std::stod(v[1]), std::stod(v[2]), std::stod(v[3])};
      b.height = std::stod(v[4]);
    } catch (const std::exception&) {
      throw MalformedFile(path + ": " + key + " has a non-numeric value");
    }
    if (!(b.height > 0.0) || b.footprint.empty()) {
      throw MalformedFile(path + ": " + key + " is degenerate");
    }
    world.obstacles.push_back(b);
  }
  if (world.bounds.empty()) {
    throw MalformedFile(path + ": empty bounds");
  }
  return world;
}

}  // namespace safl
