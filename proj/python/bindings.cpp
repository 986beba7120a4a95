#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"
#include "geobox/io.hpp"
#include "geobox/matching.hpp"
#include "geobox/pipeline.hpp"
#include "geobox/proposal.hpp"
#include "geobox/ranking.hpp"
#include "geobox/refine.hpp"
#include "geobox/simulator.hpp"

namespace py = pybind11;
using namespace geobox;

namespace {

using Box = std::array<double, 4>;
using OptBox = std::optional<Box>;

BoundingBox box(const Box& b) { return {b[0], b[1], b[2], b[3]}; }
Box tuple(const BoundingBox& b) { return {b.cx, b.cy, b.w, b.h}; }

std::vector<OptBox> tuples(const std::vector<std::optional<BoundingBox>>& v) {
  std::vector<OptBox> out;
  for (const auto& b : v) out.push_back(b ? OptBox(tuple(*b)) : std::nullopt);
  return out;
}

std::vector<std::optional<BoundingBox>> boxes(const std::vector<OptBox>& v) {
  std::vector<std::optional<BoundingBox>> out;
  for (const auto& b : v) out.push_back(b ? std::optional(box(*b)) : std::nullopt);
  return out;
}

Tensor tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t c = rows.empty() ? 0 : rows.front().size();
  Tensor t(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c) throw ShapeMismatch("ragged rows");
    for (std::size_t j = 0; j < c; ++j) t(i, j) = rows[i][j];
  }
  return t;
}

std::vector<std::vector<double>> rows(const Tensor& t) {
  std::vector<std::vector<double>> out(t.n, std::vector<double>(t.c));
  for (std::size_t i = 0; i < t.n; ++i)
    for (std::size_t j = 0; j < t.c; ++j) out[i][j] = t(i, j);
  return out;
}

std::string clip_jsonl(const Clip& c) {
  auto rows = clip_to_jsonl(c);
  return to_jsonl(rows);
}

Clip clip_from_text(const std::string& text) {
  std::vector<nlohmann::json> rows;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) rows.push_back(nlohmann::json::parse(text.begin() + static_cast<long>(start), text.begin() + static_cast<long>(end)));
    start = end + 1;
  }
  return clip_from_jsonl(rows);
}

py::dict annotate_clip(const Clip& clip, const std::string& version, const std::string& params_json) {
  const StageModels models =
      StageModels::uniform(params_json.empty() ? HmmParams{} : params_from_json(nlohmann::json::parse(params_json)));
  const auto prepared = prepare_clip(clip, {}, models.v3.speed_window_s);
  TrackOutput out;
  {
    py::gil_scoped_release release;
    out = annotate(*prepared, AblationConfig::of(parse_version(version)), models);
  }
  py::dict d;
  d["boxes"] = tuples(out.final);
  d["scores"] = out.scores;
  d["candidate"] = out.match.candidate;
  d["log_likelihood"] = out.match.log_likelihood;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "geobox native core";

  static py::exception<Error> error(m, "GeoboxError");
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TooFewClips>(m, "TooFewClips", error.ptr());
  py::register_exception<AllPathsImpossible>(m, "AllPathsImpossible", error.ptr());
  py::register_exception<DegenerateCorrespondence>(m, "DegenerateCorrespondence", error.ptr());

  m.def("iou", [](const Box& a, const Box& b) { return iou(box(a), box(b)); }, py::arg("a"), py::arg("b"));
  m.def("normalized_distance", [](const Box& pred, const Box& gt) { return normalized_distance(box(pred), box(gt)); },
        py::arg("pred"), py::arg("gt"));

  py::class_<Homography>(m, "Homography")
      .def_static(
          "fit",
          [](const std::array<std::array<double, 4>, 4>& pairs) {
            std::array<Correspondence, 4> c;
            for (std::size_t i = 0; i < 4; ++i) c[i] = {{pairs[i][0], pairs[i][1]}, {pairs[i][2], pairs[i][3]}};
            return Homography::fit(c);
          },
          "Fit from four (u, v, x, y) pixel/world pairs.")
      .def("to_world",
           [](const Homography& h, double u, double v) {
             const WorldPoint w = h.to_world({u, v});
             return std::pair(w.x, w.y);
           })
      .def("to_frame",
           [](const Homography& h, double x, double y) {
             const FramePoint p = h.to_frame({x, y});
             return std::pair(p.x, p.y);
           })
      .def_property_readonly("matrix", [](const Homography& h) { return h.matrix(); });

  m.def(
      "dbscan",
      [](const std::vector<std::pair<double, double>>& pts, double eps, int min_pts) {
        std::vector<FramePoint> p;
        for (auto [x, y] : pts) p.push_back({x, y});
        return dbscan(p, eps, min_pts);
      },
      py::arg("points"), py::arg("eps"), py::arg("min_pts"), "Cluster labels, -1 for noise.");

  m.def(
      "viterbi",
      [](std::vector<std::vector<double>> emission, std::vector<std::vector<double>> transition) {
        HmmLattice lat;
        lat.log_emission = std::move(emission);
        lat.log_transition = std::move(transition);
        const MatchResult r = viterbi(lat);
        return std::pair(r.state, r.log_likelihood);
      },
      py::arg("log_emission"), py::arg("log_transition"),
      "MAP state path. log_transition[n] is row-major over (state at n, state at n + 1).");

  m.def("smooth", [](const std::vector<std::vector<double>>& x, int window) { return rows(smooth_sequence(tensor(x), window)); },
        py::arg("x"), py::arg("window"));
  m.def("high_pass", [](const std::vector<std::vector<double>>& x, int window) { return rows(high_pass(tensor(x), window)); },
        py::arg("x"), py::arg("window"));

  py::class_<Clip>(m, "Clip")
      .def_readonly("id", &Clip::id)
      .def_readonly("fps", &Clip::fps)
      .def_readonly("n_frames", &Clip::n_frames)
      .def_property_readonly("ground_truth", [](const Clip& c) { return tuples(c.ground_truth); })
      .def_property_readonly("n_tracks", [](const Clip& c) { return c.flow_tracks.size(); })
      .def("to_jsonl", &clip_jsonl)
      .def_static("from_jsonl", &clip_from_text);

  m.def("simulate", [](const std::string& scenario_json) {
    return generate_scenario(scenario_from_json(nlohmann::json::parse(scenario_json)));
  });
  m.def("annotate", &annotate_clip, py::arg("clip"), py::arg("version") = "v3", py::arg("params_json") = "");
  m.def(
      "clip_metrics",
      [](const std::vector<OptBox>& pred, const std::vector<OptBox>& gt) {
        const ClipMetrics c = clip_metrics(boxes(pred), boxes(gt));
        py::dict d;
        d["precision"] = c.precision_at_iou_05;
        d["median_nd"] = c.median_nd;
        d["mean_iou"] = c.mean_iou;
        d["iou"] = c.iou;
        return d;
      },
      py::arg("pred"), py::arg("gt"));
  m.def("run_benchmark", [](const std::string& suite_json) {
    const SuiteSpec spec = suite_from_json(nlohmann::json::parse(suite_json));
    BenchmarkOutput out;
    {
      py::gil_scoped_release release;
      out = run_benchmark(spec);
    }
    return out.report.dump();
  });
}
