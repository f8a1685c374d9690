#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ebpmse/area_params.hpp"
#include "ebpmse/io.hpp"

namespace ebpmse {

struct BoxStats {
  double lo = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, hi = 0.0;
  std::vector<double> outliers;
};

// Tukey box: quartiles by the type 7 rule, whiskers at the most extreme
// points within 1.5 IQR.
inline BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) throw ValidationError("boxplot: empty group");
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.q1 = quantile_sorted(v, 0.25);
  b.median = quantile_sorted(v, 0.5);
  b.q3 = quantile_sorted(v, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lf = b.q1 - 1.5 * iqr, uf = b.q3 + 1.5 * iqr;
  b.lo = b.q1;
  b.hi = b.q3;
  for (double x : v) {
    if (x < lf || x > uf) {
      b.outliers.push_back(x);
    } else {
      b.lo = std::min(b.lo, x);
      b.hi = std::max(b.hi, x);
    }
  }
  return b;
}

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

struct BoxPanel {
  std::string title;
  std::vector<BoxGroup> groups;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

}  // namespace detail

// Panels side by side sharing the y axis [ymin, ymax]; a dashed line marks
// `reference` (the nominal level) when it lies in range.
inline std::string boxplot_svg(const std::vector<BoxPanel>& panels, const std::string& title, double ymin,
                               double ymax, double reference) {
  using detail::num;
  const double pw = 220, ph = 260, top = 50, left = 50, gap = 20, bottom = 70;
  const double width = left + panels.size() * (pw + gap) + 10;
  const double height = top + ph + bottom;
  auto ypos = [&](double v) { return top + ph * (1.0 - (std::clamp(v, ymin, ymax) - ymin) / (ymax - ymin)); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << detail::xml_escape(title) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(ypos(v) + 4) << "\" text-anchor=\"end\">" << num(v)
      << "</text>\n";
  }
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double x0 = left + p * (pw + gap);
    s << "<g>\n<rect x=\"" << num(x0) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    s << "<text x=\"" << num(x0 + pw / 2) << "\" y=\"" << num(top - 8) << "\" text-anchor=\"middle\">"
      << detail::xml_escape(panel.title) << "</text>\n";
    if (reference >= ymin && reference <= ymax)
      s << "<line x1=\"" << num(x0) << "\" x2=\"" << num(x0 + pw) << "\" y1=\"" << num(ypos(reference))
        << "\" y2=\"" << num(ypos(reference)) << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
    const double slot = pw / std::max<std::size_t>(panel.groups.size(), 1);
    for (std::size_t g = 0; g < panel.groups.size(); ++g) {
      const auto& grp = panel.groups[g];
      const double cx = x0 + slot * (g + 0.5), bw = slot * 0.6;
      s << "<text transform=\"translate(" << num(cx + 4) << "," << num(top + ph + 8)
        << ") rotate(60)\">" << detail::xml_escape(grp.label) << "</text>\n";
      if (grp.values.empty()) continue;
      const auto b = box_stats(grp.values);
      s << "<line x1=\"" << num(cx) << "\" x2=\"" << num(cx) << "\" y1=\"" << num(ypos(b.lo)) << "\" y2=\""
        << num(ypos(b.hi)) << "\" stroke=\"black\"/>\n";
      s << "<rect x=\"" << num(cx - bw / 2) << "\" y=\"" << num(ypos(b.q3)) << "\" width=\"" << num(bw)
        << "\" height=\"" << num(std::max(ypos(b.q1) - ypos(b.q3), 0.5))
        << "\" fill=\"#cfe0f3\" stroke=\"black\"/>\n";
      s << "<line x1=\"" << num(cx - bw / 2) << "\" x2=\"" << num(cx + bw / 2) << "\" y1=\""
        << num(ypos(b.median)) << "\" y2=\"" << num(ypos(b.median)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
      for (double o : b.outliers)
        s << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(ypos(o)) << "\" r=\"1.8\" fill=\"none\" stroke=\"black\"/>\n";
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write output '" + path + "'");
  out << text;
}

}  // namespace ebpmse
