#include "safl/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "format.hpp"
#include "safl/errors.hpp"

namespace safl {

void SeqParams::validate() const {
  if (d_s < 0) throw InvalidArgument("d_s must be >= 0");
  if (!(v_step > 0.0)) throw InvalidArgument("v_step must be > 0");
  if (!(v_min <= v_max)) throw InvalidArgument("v_min must not exceed v_max");
  if (enhance_window < 1) throw InvalidArgument("enhance_window must be >= 1");
}

std::vector<double> SeqParams::velocities() const {
  validate();
  const auto n = static_cast<long>(std::floor((v_max - v_min) / v_step + 1e-9));
  std::vector<double> v;
  for (long i = 0; i <= n; ++i) {
    double x = v_min + static_cast<double>(i) * v_step;
    if (std::abs(x - v_max) < 1e-9) x = v_max;
    v.push_back(x);
  }
  return v;
}

double code_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("code dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double code_difference(const LatentCode& a, const LatentCode& b) { return code_difference(a.values, b.values); }

std::vector<double> sad_feature(const TopViewImage& image, int down) {
  if (down < 1 || image.width % down != 0 || image.height % down != 0) {
    throw InvalidArgument("downsampling factor must divide the image size");
  }
  const int w = image.width / down;
  const int h = image.height / down;
  std::vector<double> small(static_cast<std::size_t>(w) * h, 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = 0; i < down; ++i) {
        for (int j = 0; j < down; ++j) s += image.at(r * down + i, c * down + j);
      }
      small[static_cast<std::size_t>(r) * w + c] = s / (down * down);
    }
  }
  constexpr int kPatch = 8;
  std::vector<double> out(small.size(), 0.0);
  for (int pr = 0; pr < h; pr += kPatch) {
    for (int pc = 0; pc < w; pc += kPatch) {
      const int r1 = std::min(h, pr + kPatch), c1 = std::min(w, pc + kPatch);
      const double n = static_cast<double>((r1 - pr) * (c1 - pc));
      double mean = 0.0;
      for (int r = pr; r < r1; ++r)
        for (int c = pc; c < c1; ++c) mean += small[static_cast<std::size_t>(r) * w + c];
      mean /= n;
      double var = 0.0;
      for (int r = pr; r < r1; ++r)
        for (int c = pc; c < c1; ++c) {
          const double d = small[static_cast<std::size_t>(r) * w + c] - mean;
          var += d * d;
        }
      const double sd = std::max(std::sqrt(var / n), 1e-6);
      for (int r = pr; r < r1; ++r)
        for (int c = pc; c < c1; ++c) {
          const std::size_t k = static_cast<std::size_t>(r) * w + c;
          out[k] = (small[k] - mean) / sd;
        }
    }
  }
  return out;
}

double sad_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw InvalidArgument("SAD features must be nonempty and equally sized");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

DifferenceMatrix difference_matrix(const std::vector<std::vector<double>>& ref,
                                   const std::vector<std::vector<double>>& test, Metric metric) {
  if (ref.empty() || test.empty()) {
    throw InvalidArgument("difference_matrix needs nonempty reference and test lists");
  }
  const std::size_t dim = ref.front().size();
  for (const auto* list : {&ref, &test}) {
    for (const auto& v : *list) {
      if (v.size() != dim) throw InvalidArgument("feature dimensions are not uniform");
    }
  }
  DifferenceMatrix m(ref.size(), test.size());
  for (std::size_t s = 0; s < ref.size(); ++s) {
    for (std::size_t t = 0; t < test.size(); ++t) {
      m.at(s, t) = metric == Metric::kSad ? sad_difference(ref[s], test[t]) : code_difference(ref[s], test[t]);
    }
  }
  return m;
}

DifferenceMatrix difference_matrix(const std::vector<LatentCode>& ref, const std::vector<LatentCode>& test) {
  std::vector<std::vector<double>> a, b;
  for (const auto& c : ref) a.push_back(c.values);
  for (const auto& c : test) b.push_back(c.values);
  return difference_matrix(a, b, Metric::kSquaredEuclidean);
}

DifferenceMatrix enhance_local(const DifferenceMatrix& matrix, int window) {
  if (window < 1) throw InvalidArgument("enhancement window must be >= 1");
  DifferenceMatrix out(matrix.rows, matrix.cols);
  const long n = static_cast<long>(matrix.rows);
  const long w = std::min<long>(window, n);
  for (std::size_t t = 0; t < matrix.cols; ++t) {
    for (long s = 0; s < n; ++s) {
      const long start = std::clamp(s - w / 2, 0L, n - w);
      double mean = 0.0;
      for (long i = start; i < start + w; ++i) mean += matrix.at(static_cast<std::size_t>(i), t);
      mean /= static_cast<double>(w);
      double var = 0.0;
      for (long i = start; i < start + w; ++i) {
        const double d = matrix.at(static_cast<std::size_t>(i), t) - mean;
        var += d * d;
      }
      const double sd = std::max(std::sqrt(var / static_cast<double>(w)), 1e-6);
      out.at(static_cast<std::size_t>(s), t) = (matrix.at(static_cast<std::size_t>(s), t) - mean) / sd;
    }
  }
  return out;
}

long route_index(long s, double velocity, int d_s, std::size_t T, std::size_t t, RouteDirection direction) {
  const double offset = static_cast<double>(d_s) - static_cast<double>(T) + static_cast<double>(t);
  const double signed_v = direction == RouteDirection::kForward ? velocity : -velocity;
  return static_cast<long>(std::round(static_cast<double>(s) + signed_v * offset));
}

std::optional<double> sequence_score(const DifferenceMatrix& matrix, std::size_t T, long s, double velocity,
                                     int d_s, RouteDirection direction) {
  if (d_s < 0 || T < static_cast<std::size_t>(d_s)) {
    throw InvalidArgument("insufficient history: T=" + std::to_string(T) + " < d_s=" + std::to_string(d_s));
  }
  if (T >= matrix.cols) {
    throw InvalidArgument("test index " + std::to_string(T) + " outside the matrix");
  }
  const long rows = static_cast<long>(matrix.rows);
  double sum = 0.0;
  for (std::size_t t = T - static_cast<std::size_t>(d_s); t <= T; ++t) {
    const long k = route_index(s, velocity, d_s, T, t, direction);
    if (k < 0 || k >= rows) return std::nullopt;
    sum += matrix.at(static_cast<std::size_t>(k), t);
  }
  return sum / static_cast<double>(d_s + 1);
}

MatchResult best_match(const DifferenceMatrix& matrix, std::size_t T, const SeqParams& params) {
  const std::vector<double> vs = params.velocities();
  MatchResult best;
  best.test_index = T;
  best.score = std::numeric_limits<double>::infinity();
  for (long s = 0; s < static_cast<long>(matrix.rows); ++s) {
    for (double v : vs) {
      const auto score = sequence_score(matrix, T, s, v, params.d_s, params.direction);
      if (score && (!best.valid() || *score < best.score)) {
        best.ref_index = s;
        best.velocity = v;
        best.score = *score;
      }
    }
  }
  if (best.valid()) {
    best.route_end = route_index(best.ref_index, best.velocity, params.d_s, T, T, params.direction);
    best.accepted = best.score < params.score_threshold;
  }
  return best;
}

std::vector<MatchResult> detect_loops(const DifferenceMatrix& matrix, const SeqParams& params) {
  params.validate();
  std::vector<MatchResult> out;
  for (std::size_t T = static_cast<std::size_t>(params.d_s); T < matrix.cols; ++T) {
    out.push_back(best_match(matrix, T, params));
  }
  return out;
}

std::vector<MatchResult> with_threshold(std::vector<MatchResult> matches, double threshold) {
  for (MatchResult& m : matches) m.accepted = m.valid() && m.score < threshold;
  return matches;
}

std::vector<char> encode_matrix(const DifferenceMatrix& matrix) {
  if (matrix.values.size() != matrix.rows * matrix.cols) {
    throw InvalidArgument("matrix storage does not match its dimensions");
  }
  detail::ByteWriter out;
  out.bytes("SDMX");
  out.u32(static_cast<std::uint32_t>(matrix.rows));
  out.u32(static_cast<std::uint32_t>(matrix.cols));
  for (double v : matrix.values) out.f32(static_cast<float>(v));
  return out.data();
}

DifferenceMatrix decode_matrix(const std::vector<char>& bytes, const std::string& source) {
  detail::ByteReader in(bytes, source);
  if (in.bytes(4) != "SDMX") throw MalformedFile(source + ": bad magic (expected SDMX)");
  const std::uint32_t rows = in.u32();
  const std::uint32_t cols = in.u32();
  if (in.remaining() != static_cast<std::size_t>(rows) * cols * 4) {
    throw MalformedFile(source + ": payload size does not match " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
  DifferenceMatrix m(rows, cols);
  for (double& v : m.values) v = in.f32();
  return m;
}

void save_matrix(const std::string& path, const DifferenceMatrix& matrix) {
  detail::write_file(path, encode_matrix(matrix));
}

DifferenceMatrix load_matrix(const std::string& path) { return decode_matrix(detail::read_file(path), path); }

void save_matrix_csv(const std::string& path, const DifferenceMatrix& matrix) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (std::size_t s = 0; s < matrix.rows; ++s) {
    for (std::size_t t = 0; t < matrix.cols; ++t) {
      out << (t ? "," : "") << detail::format_double(matrix.at(s, t));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

void save_matches_csv(const std::string& path, const std::vector<MatchResult>& matches) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "T,s_star,V_star,score,accepted\n";
  for (const MatchResult& m : matches) {
    out << m.test_index << ',' << m.ref_index << ',' << detail::format_double(m.velocity) << ','
        << detail::format_double(m.score) << ',' << (m.accepted ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<MatchResult> load_matches_csv(const std::string& path, int d_s, RouteDirection direction) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("T,s_star", 0) != 0) throw MalformedFile(path + ": missing match CSV header");
  std::vector<MatchResult> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    MatchResult m;
    std::string score;
    int acc = 0;
    if (!(row >> m.test_index >> m.ref_index >> m.velocity >> score >> acc)) {
      throw MalformedFile(path + ":" + std::to_string(lineno) + ": malformed match row");
    }
    if (score == "inf") {
      m.score = std::numeric_limits<double>::infinity();
    } else {
      m.score = std::stod(score);
    }
    m.accepted = acc != 0;
    if (m.valid()) m.route_end = route_index(m.ref_index, m.velocity, d_s, m.test_index, m.test_index, direction);
    out.push_back(m);
  }
  return out;
}

}  // namespace safl
