#include "cure/report.hpp"

#include "cure/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace cure {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                           int width, int height) {
  const int ml = 56, mr = 16, mt = 32, mb = 36;
  double lo = 0, hi = 1;
  std::size_t n = 1;
  bool any = false;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      if (std::isnan(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!any) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto x_of = [&](std::size_t i) {
    return ml + (width - ml - mr) * static_cast<double>(i) /
                    static_cast<double>(std::max<std::size_t>(1, n - 1));
  };
  auto y_of = [&](double v) { return mt + (height - mt - mb) * (hi - v) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << y_of(v) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(v) << "</text>\n";
  }
  svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">step</text>\n";

  int ci = 0;
  int legend_y = mt + 8;
  for (const auto& s : series) {
    const char* color = kPalette[ci % 4];
    std::ostringstream pts;
    bool open = false;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (std::isnan(s.values[i])) continue;
      pts << (open ? " " : "") << fmt(x_of(i)) << "," << fmt(y_of(s.values[i]));
      open = true;
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
        << pts.str() << "\"/>\n";
    svg << "<text x=\"" << width - mr - 4 << "\" y=\"" << legend_y
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << s.label
        << "</text>\n";
    legend_y += 14;
    ++ci;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, int width, int height) {
  const int ml = 56, mr = 16, mt = 32, mb = 48;
  double hi = 1;
  for (double v : values) hi = std::max(hi, v);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  double slot = static_cast<double>(width - ml - mr) / std::max<std::size_t>(1, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double bar_h = (height - mt - mb) * values[i] / hi;
    double x = ml + slot * static_cast<double>(i) + 0.15 * slot;
    double y = height - mb - bar_h;
    svg << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(0.7 * slot)
        << "\" height=\"" << fmt(bar_h) << "\" fill=\"" << kPalette[i % 4] << "\"/>\n";
    svg << "<text x=\"" << fmt(x + 0.35 * slot) << "\" y=\"" << height - mb + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << labels[i] << "</text>\n";
    svg << "<text x=\"" << fmt(x + 0.35 * slot) << "\" y=\"" << fmt(y - 4)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(values[i]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_run_report(const std::string& dir) {
  std::vector<std::string> methods = {"cure", "uniform", "gradient_ascent"};
  std::vector<std::string> found;
  for (const auto& m : methods)
    if (fs::exists(fs::path(dir) / ("trace_" + m + ".csv"))) found.push_back(m);
  if (found.empty()) throw MissingInput("no trace files in " + dir);

  fs::path rep = fs::path(dir) / "report";
  fs::create_directories(rep);

  std::ostringstream md;
  md << "# Run summary\n\n";

  for (const auto& m : found) {
    AlignmentTrace trace = AlignmentTrace::read_csv((fs::path(dir) / ("trace_" + m + ".csv")).string());
    if (trace.rows.empty()) throw MissingInput("empty trace for method " + m);

    Series a_f{"A_f", {}}, a_r{"A_r", {}};
    for (const auto& r : trace.rows) {
      a_f.values.push_back(r.a_f ? *r.a_f : std::nan(""));
      a_r.values.push_back(r.a_r ? *r.a_r : std::nan(""));
    }
    std::ofstream((rep / ("alignment_" + m + ".svg")).string())
        << svg_line_chart("alignment per step (" + m + ")", {a_f, a_r});

    ConflictHistogram h = conflict_histogram(trace);
    std::ofstream((rep / ("conflict_" + m + ".svg")).string())
        << svg_bar_chart("cos psi distribution (" + m + ")",
                         {"[-1,-0.02)", "[-0.02,0.02]", "(0.02,1]"},
                         {static_cast<double>(h.severe), static_cast<double>(h.neutral),
                          static_cast<double>(h.aligned)});
  }

  md << "| method | AUC | ACC | LogLoss | JSD(forget) | wall (s) | conflict rate |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const auto& m : found) {
    fs::path metrics = fs::path(dir) / ("metrics_" + m + ".json");
    if (!fs::exists(metrics)) continue;
    std::ifstream in(metrics.string());
    json j;
    in >> j;
    auto cell = [&](const char* key) {
      return j.at(key).is_null() ? std::string("-") : fmt(j.at(key).get<double>());
    };
    md << "| " << m << " | " << cell("auc") << " | " << cell("acc") << " | " << cell("logloss")
       << " | " << cell("jsd_forget") << " | " << fmt(j.value("unlearn_wall_seconds", 0.0))
       << " | " << fmt(j.value("conflict_rate", 0.0)) << " |\n";
  }
  md << "\nCharts: ";
  for (const auto& m : found) md << "[alignment_" << m << "](alignment_" << m << ".svg) ";
  md << "\n";
  std::ofstream((rep / "summary.md").string()) << md.str();
}

}  // namespace cure
