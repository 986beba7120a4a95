#pragma once

#include <string>
#include <vector>

#include "geobox/evaluation.hpp"

namespace geobox {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal standalone SVG line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// Minimal standalone SVG bar chart.
std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& labels, const std::vector<double>& values);

std::string ablation_csv(const nlohmann::json& report);
std::string purification_csv(const nlohmann::json& report);
std::string factors_csv(const nlohmann::json& report);

/// report.json, timing.json, ablation.csv, purification.csv, factors.csv,
/// purification.svg, ablation.svg, annotations.jsonl and ground_truth.jsonl.
void write_benchmark(const BenchmarkOutput& output, const std::string& dir);

}  // namespace geobox
