#include "safl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include "json.hpp"
#include <sstream>

#include "format.hpp"
#include "safl/errors.hpp"

namespace safl {

void GroundTruth::validate() const {
  if (!(d_thresh > 0.0)) throw InvalidArgument("d_thresh must be > 0");
}

bool GroundTruth::has_true_loop(std::size_t t) const {
  if (t >= test.size()) {
    throw DataIntegrityError("no ground-truth pose for test frame " + std::to_string(t));
  }
  return std::any_of(reference.begin(), reference.end(),
                     [&](const Pose& r) { return planar_distance(r, test[t]) <= d_thresh; });
}

bool GroundTruth::match_correct(const MatchResult& m) const {
  if (m.test_index >= test.size()) {
    throw DataIntegrityError("no ground-truth pose for test frame " + std::to_string(m.test_index));
  }
  if (!m.valid()) return false;
  if (m.route_end < 0 || static_cast<std::size_t>(m.route_end) >= reference.size()) {
    throw DataIntegrityError("no ground-truth pose for reference frame " + std::to_string(m.route_end));
  }
  return planar_distance(reference[static_cast<std::size_t>(m.route_end)], test[m.test_index]) <= d_thresh;
}

ConfusionCounts classify(const std::vector<MatchResult>& matches, const GroundTruth& gt) {
  gt.validate();
  ConfusionCounts c;
  for (const MatchResult& m : matches) {
    if (m.accepted) {
      (gt.match_correct(m) ? c.tp : c.fp)++;
    } else {
      (gt.has_true_loop(m.test_index) ? c.fn : c.tn)++;
    }
  }
  return c;
}

PrecisionRecall precision_recall(const ConfusionCounts& c) {
  PrecisionRecall pr;
  pr.precision = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  pr.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

std::vector<double> threshold_set(const std::vector<double>& scores, std::size_t n_thresholds) {
  std::vector<double> u;
  for (double s : scores) {
    if (std::isfinite(s)) u.push_back(s);
  }
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (n_thresholds > 0 && u.size() > n_thresholds) {
    std::vector<double> sub;
    for (std::size_t i = 0; i < n_thresholds; ++i) {
      const std::size_t k = n_thresholds == 1 ? 0 : i * (u.size() - 1) / (n_thresholds - 1);
      if (sub.empty() || sub.back() != u[k]) sub.push_back(u[k]);
    }
    u = std::move(sub);
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  u.insert(u.begin(), -inf);
  u.push_back(inf);
  return u;
}

std::vector<PRPoint> pr_curve(const std::vector<MatchResult>& matches, const GroundTruth& gt,
                              std::size_t n_thresholds) {
  gt.validate();
  std::vector<double> scores;
  std::vector<char> correct, loop;
  for (const MatchResult& m : matches) {
    scores.push_back(m.score);
    correct.push_back(gt.match_correct(m));
    loop.push_back(gt.has_true_loop(m.test_index));
  }
  std::vector<PRPoint> curve;
  for (double tau : threshold_set(scores, n_thresholds)) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (matches[i].valid() && scores[i] < tau) {
        (correct[i] ? c.tp : c.fp)++;
      } else {
        (loop[i] ? c.fn : c.tn)++;
      }
    }
    const PrecisionRecall pr = precision_recall(c);
    curve.push_back({tau, pr.precision, pr.recall});
  }
  return curve;
}

double recall_at_full_precision(const std::vector<PRPoint>& curve) {
  double best = 0.0;
  for (const PRPoint& p : curve) {
    if (p.precision == 1.0) best = std::max(best, p.recall);
  }
  return best;
}

std::vector<ROCPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw InvalidArgument("AUC is undefined with single-class labels");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<ROCPoint> curve{{-std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    curve.push_back({s, static_cast<double>(tp) / static_cast<double>(pos),
                     static_cast<double>(fp) / static_cast<double>(neg)});
  }
  return curve;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  const std::vector<ROCPoint> c = roc_curve(scores, labels);
  double area = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    area += (c[i].fpr - c[i - 1].fpr) * (c[i].tpr + c[i - 1].tpr) * 0.5;
  }
  return area;
}

ScoredLabels match_labels(const std::vector<MatchResult>& matches, const GroundTruth& gt) {
  ScoredLabels out;
  for (const MatchResult& m : matches) {
    if (!m.valid()) continue;
    out.scores.push_back(m.score);
    out.labels.push_back(gt.match_correct(m));
  }
  return out;
}

std::optional<double> match_auc(const std::vector<MatchResult>& matches, const GroundTruth& gt) {
  const ScoredLabels sl = match_labels(matches, gt);
  const auto pos = std::count(sl.labels.begin(), sl.labels.end(), true);
  if (pos == 0 || static_cast<std::size_t>(pos) == sl.labels.size()) return std::nullopt;
  return roc_auc(sl.scores, sl.labels);
}

namespace {

std::string svg_plot(const Curve& curve) {
  constexpr double kSize = 400.0, kMargin = 40.0;
  const double span = kSize - 2 * kMargin;
  std::vector<std::pair<double, double>> xy;  // in [0,1]^2
  std::string x_label, y_label;
  if (curve.kind == Curve::Kind::kPR) {
    for (const PRPoint& p : curve.pr) xy.emplace_back(p.recall, p.precision);
    x_label = "recall";
    y_label = "precision";
  } else {
    for (const ROCPoint& p : curve.roc) xy.emplace_back(p.fpr, p.tpr);
    x_label = "FPR";
    y_label = "TPR";
  }
  std::ostringstream svg;
  svg << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kSize << R"(" height=")" << kSize
      << R"(" viewBox="0 0 )" << kSize << ' ' << kSize << "\">\n";
  svg << "<title>" << curve.name << "</title>\n";
  svg << R"(<rect x=")" << kMargin << R"(" y=")" << kMargin << R"(" width=")" << span << R"(" height=")" << span
      << R"(" fill="none" stroke="black"/>)" << '\n';
  svg << R"(<text x=")" << kSize / 2 << R"(" y=")" << kSize - 10 << R"(" text-anchor="middle">)" << x_label
      << "</text>\n";
  svg << R"(<text x="12" y=")" << kSize / 2 << R"(" transform="rotate(-90 12 )" << kSize / 2
      << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  svg << R"(<polyline fill="none" stroke="steelblue" stroke-width="2" points=")";
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const double px = kMargin + xy[i].first * span;
    const double py = kSize - kMargin - xy[i].second * span;
    svg << (i ? " " : "") << detail::format_double(px) << ',' << detail::format_double(py);
  }
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

std::vector<std::string> emit_curves(const std::vector<Curve>& curves, const std::string& directory) {
  std::vector<std::string> written;
  if (curves.empty()) return written;
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory + ": " + ec.message());
  for (const Curve& c : curves) {
    std::ostringstream csv;
    if (c.kind == Curve::Kind::kPR) {
      csv << "# precision=1 when TP+FP=0; recall=0 when TP+FN=0; accepted iff score < threshold\n";
      csv << "threshold,precision,recall\n";
      for (const PRPoint& p : c.pr) {
        csv << detail::format_double(p.threshold) << ',' << detail::format_double(p.precision) << ','
            << detail::format_double(p.recall) << '\n';
      }
    } else {
      csv << "# lower score ranks first; positive iff score <= threshold\n";
      csv << "threshold,tpr,fpr\n";
      for (const ROCPoint& p : c.roc) {
        csv << detail::format_double(p.threshold) << ',' << detail::format_double(p.tpr) << ','
            << detail::format_double(p.fpr) << '\n';
      }
    }
    const std::string base = (std::filesystem::path(directory) / c.name).string();
    write_text(base + ".csv", csv.str());
    write_text(base + ".svg", svg_plot(c));
    written.push_back(base + ".csv");
    written.push_back(base + ".svg");
  }
  return written;
}

std::string summary_json(const SummaryRecord& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["features"] = r.features;
  j["perturbation"] = r.perturbation;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["recall_at_full_precision"] = r.recall_at_full_precision;
  j["score_threshold"] = r.score_threshold;
  j["tp"] = r.counts.tp;
  j["fp"] = r.counts.fp;
  j["fn"] = r.counts.fn;
  j["tn"] = r.counts.tn;
  const PrecisionRecall pr = precision_recall(r.counts);
  j["precision"] = pr.precision;
  j["recall"] = pr.recall;
  return j.dump();
}

void append_summary(const std::string& path, const SummaryRecord& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open for appending: " + path);
  out << summary_json(record) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace safl
