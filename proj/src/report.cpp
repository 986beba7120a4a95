#include "geobox/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "geobox/error.hpp"
#include "geobox/io.hpp"

namespace geobox {

namespace {

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
    return buf;
  }
  return v.dump();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
    << "</text>\n";
  o << "<text x=\"14\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 14 " << kTop + ph / 2
    << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 5];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kW - kRight + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  double y1 = 0;
  for (double v : values)
    if (std::isfinite(v)) y1 = std::max(y1, v);
  if (y1 == 0) y1 = 1;
  const double pw = kW - kLeft - 40, ph = kH - kTop - kBottom;
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"14\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 14 " << kTop + ph / 2
    << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double h = v / y1 * ph;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    o << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
      << "\" fill=\"" << kColors[i % 5] << "\"/>\n";
    o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph - h - 4 << "\" text-anchor=\"middle\">" << fmt(v)
      << "</text>\n";
    o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
      << escape(labels[i]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string ablation_csv(const nlohmann::json& report) {
  std::string out = "version,precision,median_nd,mean_iou,clips\n";
  for (const auto& r : report.at("ablation"))
    out += cell(r["version"]) + "," + cell(r["precision"]) + "," + cell(r["median_nd"]) + "," + cell(r["mean_iou"]) +
           "," + cell(r["clips"]) + "\n";
  return out;
}

std::string purification_csv(const nlohmann::json& report) {
  std::string out = "policy,fraction,kept,precision,median_nd\n";
  for (const char* policy : {"intra", "inter", "oracle"})
    for (const auto& r : report.at("purification").at(policy))
      out += std::string(policy) + "," + cell(r["fraction"]) + "," + cell(r["kept"]) + "," + cell(r["precision"]) +
             "," + cell(r["median_nd"]) + "\n";
  return out;
}

std::string factors_csv(const nlohmann::json& report) {
  std::string out = "factor,level,clips,base,v1,v2,v3,v4\n";
  for (const auto& r : report.at("factors"))
    out += cell(r["factor"]) + "," + cell(r["level"]) + "," + cell(r["clips"]) + "," + cell(r["base"]) + "," +
           cell(r["v1"]) + "," + cell(r["v2"]) + "," + cell(r["v3"]) + "," + cell(r["v4"]) + "\n";
  return out;
}

void write_benchmark(const BenchmarkOutput& output, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir + ": " + ec.message());
  const std::filesystem::path d(dir);
  const auto& report = output.report;
  write_text((d / "report.json").string(), report.dump(2) + "\n");
  write_text((d / "timing.json").string(), nlohmann::json{{"wall_clock_s", output.wall_clock_s}}.dump(2) + "\n");
  write_text((d / "ablation.csv").string(), ablation_csv(report));
  write_text((d / "purification.csv").string(), purification_csv(report));
  write_text((d / "factors.csv").string(), factors_csv(report));
  write_text((d / "annotations.jsonl").string(), to_jsonl(output.annotations));
  write_text((d / "ground_truth.jsonl").string(), to_jsonl(output.ground_truth));

  std::vector<Series> curves;
  for (const char* policy : {"intra", "inter", "oracle"}) {
    Series s{policy, {}, {}};
    for (const auto& r : report.at("purification").at(policy)) {
      s.x.push_back(100.0 * r["fraction"].get<double>());
      s.y.push_back(100.0 * r["precision"].get<double>());
    }
    curves.push_back(std::move(s));
  }
  write_text((d / "purification.svg").string(),
             svg_line_chart("Purification", "kept top-x% of annotations", "precision at IoU 0.5 (%)", curves));
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : report.at("ablation")) {
    labels.push_back(r["version"].get<std::string>());
    values.push_back(r["precision"].is_number() ? 100.0 * r["precision"].get<double>() : 0.0);
  }
  write_text((d / "ablation.svg").string(), svg_bar_chart("Ablation", "precision at IoU 0.5 (%)", labels, values));
}

}  // namespace geobox
