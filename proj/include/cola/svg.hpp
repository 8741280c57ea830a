#pragma once

// Standalone, byte-deterministic SVG renderings of change masks and policy
// comparisons.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cola/error.hpp"
#include "cola/report.hpp"
#include "cola/schema.hpp"

namespace cola::svg {

inline std::string escape(std::string_view text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file: " + path);
  out << content;
  if (!out) fail("write failed: " + path);
}

inline constexpr const char* kChangedFill = "#d62728";
inline constexpr const char* kUnchangedFill = "#f2f2f2";

// Two aligned n x p grids (before | after); changed cells are filled.
inline std::string heatmap(const ChangeMask& before, const ChangeMask& after,
                           const FeatureSchema& schema) {
  if (before.rows != after.rows || before.cols != after.cols) {
    fail("heatmap: masks have different shapes");
  }
  if (before.cols != schema.size()) fail("heatmap: mask width does not match schema");
  constexpr int kCell = 12;
  constexpr int kGap = 40;
  constexpr int kLeft = 40;
  constexpr int kTop = 110;
  const int grid_w = static_cast<int>(before.cols) * kCell;
  const int grid_h = static_cast<int>(before.rows) * kCell;
  const int width = kLeft + 2 * grid_w + kGap + 20;
  const int height = kTop + grid_h + 50;
  const double pct = reduction_pct(before.total, after.total);

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  auto grid = [&](const ChangeMask& mask, const char* id, const char* title, int x0) {
    out << "<g id=\"" << id << "\">\n";
    out << "<text x=\"" << x0 << "\" y=\"14\" font-size=\"12\">" << title << " ("
        << mask.total << " changed)</text>\n";
    for (std::size_t j = 0; j < mask.cols; ++j) {
      const int cx = x0 + static_cast<int>(j) * kCell + kCell / 2;
      out << "<text class=\"feature\" x=\"" << cx << "\" y=\"" << kTop - 6
          << "\" transform=\"rotate(-60 " << cx << " " << kTop - 6 << ")\">"
          << escape(schema.features[j].name) << "</text>\n";
    }
    for (std::size_t i = 0; i < mask.rows; ++i) {
      for (std::size_t j = 0; j < mask.cols; ++j) {
        const bool on = mask.at(i, j);
        out << "<rect class=\"cell " << (on ? "changed" : "unchanged") << "\" x=\""
            << x0 + static_cast<int>(j) * kCell << "\" y=\"" << kTop + static_cast<int>(i) * kCell
            << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\""
            << (on ? kChangedFill : kUnchangedFill) << "\" stroke=\"#ffffff\"/>\n";
      }
    }
    out << "</g>\n";
  };
  for (std::size_t i = 0; i < before.rows; ++i) {
    out << "<text class=\"row\" x=\"" << kLeft - 4 << "\" y=\""
        << kTop + static_cast<int>(i) * kCell + kCell - 2 << "\" text-anchor=\"end\">" << i
        << "</text>\n";
  }
  grid(before, "before", "before", kLeft);
  grid(after, "after", "after", kLeft + grid_w + kGap);
  out << "<text id=\"footer\" x=\"" << kLeft << "\" y=\"" << height - 16
      << "\" font-size=\"12\">reduction " << fixed(pct) << "% (" << before.total << " -&gt; "
      << after.total << " changed features)</text>\n";
  out << "</svg>\n";
  return out.str();
}

inline void emit_heatmap_svg(const ChangeMask& before, const ChangeMask& after,
                             const FeatureSchema& schema, const std::string& path) {
  write_file(path, heatmap(before, after, schema));
}

inline constexpr double kBarScale = 2.0;  // pixels per percentage point

// Grouped bars per report: reduction_pct and validity_after (as percent), on
// one linear 0-100 axis; reports keep their order left to right.
inline std::string comparison_chart(const std::vector<Report>& reports) {
  if (reports.empty()) fail("compare_policies: no reports");
  constexpr int kLeft = 50;
  constexpr int kTop = 30;
  constexpr int kBar = 28;
  constexpr int kGroup = 2 * kBar + 44;
  const double plot_h = 100.0 * kBarScale;
  const int width = kLeft + static_cast<int>(reports.size()) * kGroup + 20;
  const int height = kTop + static_cast<int>(plot_h) + 90;
  const double base = kTop + plot_h;

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "<text x=\"" << kLeft << "\" y=\"16\" font-size=\"12\">"
      << "reduction % (blue) and validity after % (green)</text>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = base - tick * kBarScale;
    out << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << fixed(y) << "\" x2=\"" << width - 10
        << "\" y2=\"" << fixed(y) << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << fixed(y + 3) << "\" text-anchor=\"end\">"
        << tick << "</text>\n";
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Report& r = reports[i];
    const int gx = kLeft + static_cast<int>(i) * kGroup + 8;
    const double red = r.reduction_pct;
    const double val = 100.0 * r.validity_after;
    out << "<g class=\"policy\" data-index=\"" << i << "\">\n";
    auto bar = [&](const char* cls, int x, double value, const char* fill) {
      const double h = value * kBarScale;
      out << "<rect class=\"bar " << cls << "\" x=\"" << x << "\" y=\"" << fixed(base - h, 3)
          << "\" width=\"" << kBar << "\" height=\"" << fixed(h, 3) << "\" fill=\"" << fill
          << "\"><title>" << cls << " " << fixed(value) << "</title></rect>\n";
    };
    bar("reduction", gx, red, "#1f77b4");
    bar("validity", gx + kBar, val, "#2ca02c");
    out << "<text class=\"label\" x=\"" << gx << "\" y=\"" << fixed(base + 14)
        << "\" transform=\"rotate(20 " << gx << " " << fixed(base + 14) << ")\">"
        << escape(r.policy_label()) << "</text>\n";
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

inline void compare_policies(const std::vector<Report>& reports, const std::string& path) {
  write_file(path, comparison_chart(reports));
}

}  // namespace cola::svg
