#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "safl/divergence.hpp"
#include "safl/errors.hpp"
#include "safl/evaluation.hpp"
#include "safl/gradcheck.hpp"
#include "safl/learner.hpp"
#include "safl/matcher.hpp"
#include "safl/occupancy.hpp"

#ifdef SAFL_WITH_CLI
#include "app.hpp"
#endif

namespace py = pybind11;
using namespace safl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

DifferenceMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw InvalidArgument("expected a 2-D array");
  DifferenceMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

Array from_matrix(const DifferenceMatrix& m) {
  Array out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

DiscreteDist line_dist(const std::vector<double>& points, const std::vector<double>& probs) {
  return DiscreteDist::on_line(points, probs);
}

TopViewImage to_image(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw InvalidArgument("expected a 2-D uint8 image");
  TopViewImage img;
  img.height = static_cast<int>(a.shape(0));
  img.width = static_cast<int>(a.shape(1));
  img.pixels.assign(a.data(), a.data() + a.size());
  return img;
}

}  // namespace

PYBIND11_MODULE(_safl, m) {
  m.doc() = "Loop closure detection core: divergences, sequence matching, evaluation and the pipeline driver";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<MalformedFile>(m, "MalformedFile", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DataIntegrityError>(m, "DataIntegrityError", PyExc_RuntimeError);

  // Divergences between 1-D discrete distributions given as (points, probs).
  m.def("kl", [](const std::vector<double>& xp, const std::vector<double>& p, const std::vector<double>& xq,
                 const std::vector<double>& q) { return kl(line_dist(xp, p), line_dist(xq, q)); });
  m.def("jsd", [](const std::vector<double>& xp, const std::vector<double>& p, const std::vector<double>& xq,
                  const std::vector<double>& q) { return jsd(line_dist(xp, p), line_dist(xq, q)); });
  m.def("tv", [](const std::vector<double>& xp, const std::vector<double>& p, const std::vector<double>& xq,
                 const std::vector<double>& q) { return tv(line_dist(xp, p), line_dist(xq, q)); });
  m.def("wasserstein_1d", [](const std::vector<double>& xp, const std::vector<double>& p,
                             const std::vector<double>& xq, const std::vector<double>& q) {
    return wasserstein_1d(line_dist(xp, p), line_dist(xq, q));
  });
  m.def(
      "parallel_lines_triple",
      [](double theta) {
        const DivergenceTriple t = parallel_lines_triple(theta);
        return py::make_tuple(t.w, t.js, t.tv);
      },
      py::arg("theta"), "(W, JS, TV) between two parallel vertical lines offset by theta");

  m.def(
      "enhance_local", [](const Array& d, int window) { return from_matrix(enhance_local(to_matrix(d), window)); },
      py::arg("matrix"), py::arg("window") = 10);

  py::class_<MatchResult>(m, "MatchResult")
      .def_readonly("test_index", &MatchResult::test_index)
      .def_readonly("ref_index", &MatchResult::ref_index)
      .def_readonly("velocity", &MatchResult::velocity)
      .def_readonly("score", &MatchResult::score)
      .def_readonly("accepted", &MatchResult::accepted)
      .def_readonly("route_end", &MatchResult::route_end)
      .def("valid", &MatchResult::valid)
      .def("__repr__", [](const MatchResult& r) {
        std::ostringstream s;
        s << "MatchResult(T=" << r.test_index << ", s=" << r.ref_index << ", V=" << r.velocity << ", score=" << r.score
          << ", accepted=" << (r.accepted ? "True" : "False") << ")";
        return s.str();
      });

  m.def(
      "detect_loops",
      [](const Array& d, int d_s, double v_min, double v_max, double v_step, double threshold) {
        SeqParams p;
        p.d_s = d_s;
        p.v_min = v_min;
        p.v_max = v_max;
        p.v_step = v_step;
        p.score_threshold = threshold;
        return detect_loops(to_matrix(d), p);
      },
      py::arg("matrix"), py::arg("d_s") = 10, py::arg("v_min") = 0.8, py::arg("v_max") = 1.1, py::arg("v_step") = 0.1,
      py::arg("threshold") = 0.0, "Sequence search over an (already enhanced) reference x test matrix");

  m.def(
      "difference_matrix",
      [](const std::vector<std::vector<double>>& ref, const std::vector<std::vector<double>>& test, bool sad) {
        return from_matrix(difference_matrix(ref, test, sad ? Metric::kSad : Metric::kSquaredEuclidean));
      },
      py::arg("ref"), py::arg("test"), py::arg("sad") = false);

  m.def(
      "sad_feature",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& image, int down) {
        return sad_feature(to_image(image), down);
      },
      py::arg("image"), py::arg("down") = 2);

  m.def("roc_auc", &roc_auc, py::arg("scores"), py::arg("labels"),
        "Area under the ROC curve; lower scores are stronger positives");
  m.def(
      "precision_recall",
      [](std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
        const PrecisionRecall pr = precision_recall({tp, fp, fn, tn});
        return py::make_tuple(pr.precision, pr.recall);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

  m.def("load_pgm", [](const std::string& path) {
    const TopViewImage img = load_pgm(path);
    py::array_t<std::uint8_t> out({img.height, img.width});
    std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
    return out;
  });
  m.def("load_codes", [](const std::string& path) {
    std::vector<std::vector<double>> out;
    for (const LatentCode& c : load_codes(path)) out.push_back(c.values);
    return out;
  });

  m.def(
      "gradcheck",
      [](const std::vector<std::uint64_t>& seeds) {
        std::vector<py::tuple> rows;
        for (const GradcheckResult& r : gradcheck_suite(seeds)) rows.push_back(py::make_tuple(r.name, r.max_rel_error, r.passed));
        return rows;
      },
      py::arg("seeds") = std::vector<std::uint64_t>{1});

#ifdef SAFL_WITH_CLI
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"safl"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one `safl` subcommand in-process; returns (exit_code, stdout, stderr)");
#endif
}
