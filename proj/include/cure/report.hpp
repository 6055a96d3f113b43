#pragma once
// Static report generation: alignment line charts, conflict histograms (SVG)
// and a markdown summary table, from the traces and metrics in a run directory.

#include "cure/unlearn.hpp"

#include <string>
#include <vector>

namespace cure {

struct Series {
  std::string label;
  std::vector<double> values;  // NaN marks a missing point
};

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                           int width = 640, int height = 360);
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, int width = 480, int height = 320);

// Reads trace_<method>.csv and metrics_<method>.json files from `dir`, writes
// report/*.svg and report/summary.md. Throws MissingInput when no trace exists.
void write_run_report(const std::string& dir);

}  // namespace cure
