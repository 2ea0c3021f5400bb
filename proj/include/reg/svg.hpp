#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "reg/common.hpp"

// Minimal static SVG emission: line charts and scatter plots built from
// polyline/circle/text primitives. Output is byte-deterministic for identical
// inputs (fixed palette, shortest round-trip number formatting, no
// timestamps).
namespace reg::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
                                   "#bcbd22", "#e377c2"};
    return colors[i % 10];
}

namespace detail {

struct Frame {
    double w = 720, h = 440;
    double ml = 64, mr = 16, mt = 36, mb = 48;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

    double px(double x) const {
        return ml + (x - x0) / (x1 - x0 + 1e-300) * (w - ml - mr);
    }
    double py(double y) const {
        return h - mb - (y - y0) / (y1 - y0 + 1e-300) * (h - mt - mb);
    }
};

inline std::vector<double> ticks(double lo, double hi, int target = 6) {
    if (!(hi > lo)) return {lo};
    const double raw = (hi - lo) / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double mult : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * mult >= raw) {
            step = mag * mult;
            break;
        }
    }
    std::vector<double> out;
    double t = std::ceil(lo / step) * step;
    for (; t <= hi + 0.5 * step; t += step) out.push_back(t == 0.0 ? 0.0 : t);
    return out;
}

inline void header(std::ostringstream& os, const Frame& f,
                   const std::string& title, const std::string& xlabel,
                   const std::string& ylabel) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.w
       << "\" height=\"" << f.h << "\" viewBox=\"0 0 " << f.w << " " << f.h
       << "\">\n";
    os << "<rect width=\"" << f.w << "\" height=\"" << f.h
       << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << f.w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
          "font-family=\"monospace\" font-size=\"14\">"
       << title << "</text>\n";
    os << "<text x=\"" << (f.ml + (f.w - f.mr)) / 2 << "\" y=\"" << f.h - 10
       << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">"
       << xlabel << "</text>\n";
    os << "<text x=\"14\" y=\"" << (f.mt + (f.h - f.mb)) / 2
       << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" "
          "transform=\"rotate(-90 14 "
       << (f.mt + (f.h - f.mb)) / 2 << ")\">" << ylabel << "</text>\n";
    // Axes + ticks.
    os << "<line x1=\"" << f.ml << "\" y1=\"" << f.h - f.mb << "\" x2=\""
       << f.w - f.mr << "\" y2=\"" << f.h - f.mb
       << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << f.ml << "\" y1=\"" << f.mt << "\" x2=\"" << f.ml
       << "\" y2=\"" << f.h - f.mb
       << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (double t : ticks(f.x0, f.x1)) {
        const double X = f.px(t);
        os << "<line x1=\"" << X << "\" y1=\"" << f.h - f.mb << "\" x2=\"" << X
           << "\" y2=\"" << f.h - f.mb + 4 << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << X << "\" y=\"" << f.h - f.mb + 16
           << "\" text-anchor=\"middle\" font-family=\"monospace\" "
              "font-size=\"10\">"
           << format_double(t) << "</text>\n";
    }
    for (double t : ticks(f.y0, f.y1)) {
        const double Y = f.py(t);
        os << "<line x1=\"" << f.ml - 4 << "\" y1=\"" << Y << "\" x2=\"" << f.ml
           << "\" y2=\"" << Y << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << f.ml - 6 << "\" y=\"" << Y + 3
           << "\" text-anchor=\"end\" font-family=\"monospace\" "
              "font-size=\"10\">"
           << format_double(t) << "</text>\n";
    }
}

inline Frame fit_frame(const std::vector<Series>& series) {
    Frame f;
    f.x0 = f.y0 = std::numeric_limits<double>::infinity();
    f.x1 = f.y1 = -std::numeric_limits<double>::infinity();
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            f.x0 = std::min(f.x0, s.x[i]);
            f.x1 = std::max(f.x1, s.x[i]);
            f.y0 = std::min(f.y0, s.y[i]);
            f.y1 = std::max(f.y1, s.y[i]);
        }
    if (!(f.x1 > f.x0)) f.x1 = f.x0 + 1.0;
    if (!(f.y1 > f.y0)) f.y1 = f.y0 + 1.0;
    const double pad = 0.04 * (f.y1 - f.y0);
    f.y0 -= pad;
    f.y1 += pad;
    return f;
}

}  // namespace detail

inline std::string line_chart(const std::string& title,
                              const std::string& xlabel,
                              const std::string& ylabel,
                              const std::vector<Series>& series) {
    require_domain(!series.empty(), "line_chart: no series");
    detail::Frame f = detail::fit_frame(series);
    std::ostringstream os;
    detail::header(os, f, title, xlabel, ylabel);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill=\"none\" stroke=\"" << palette(si)
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) os << ' ';
            os << format_double(f.px(s.x[i])) << ',' << format_double(f.py(s.y[i]));
        }
        os << "\"/>\n";
        os << "<text x=\"" << f.w - f.mr - 6 << "\" y=\""
           << f.mt + 14 * static_cast<double>(si + 1)
           << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\" "
              "fill=\""
           << palette(si) << "\">" << s.name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct ScatterGroup {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

inline std::string scatter(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel,
                           const std::vector<ScatterGroup>& groups) {
    require_domain(!groups.empty(), "scatter: no groups");
    std::vector<Series> as_series;
    for (const auto& g : groups) as_series.push_back({g.name, g.x, g.y});
    detail::Frame f = detail::fit_frame(as_series);
    std::ostringstream os;
    detail::header(os, f, title, xlabel, ylabel);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        for (std::size_t i = 0; i < g.x.size(); ++i)
            os << "<circle cx=\"" << format_double(f.px(g.x[i])) << "\" cy=\""
               << format_double(f.py(g.y[i])) << "\" r=\"2\" fill=\""
               << palette(gi) << "\" fill-opacity=\"0.7\"/>\n";
        os << "<text x=\"" << f.w - f.mr - 6 << "\" y=\""
           << f.mt + 14 * static_cast<double>(gi + 1)
           << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\" "
              "fill=\""
           << palette(gi) << "\">" << g.name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string bar_chart(const std::string& title,
                             const std::string& ylabel,
                             const std::vector<std::string>& labels,
                             const std::vector<double>& values) {
    require_shape(labels.size() == values.size() && !values.empty(),
                  "bar_chart: labels/values mismatch");
    detail::Frame f;
    f.mb = 96;  // room for slanted category labels
    f.x0 = 0;
    f.x1 = static_cast<double>(values.size());
    f.y0 = 0.0;
    f.y1 = *std::max_element(values.begin(), values.end()) * 1.08 + 1e-12;
    std::ostringstream os;
    detail::header(os, f, title, "", ylabel);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double xa = f.px(static_cast<double>(i) + 0.15);
        const double xb = f.px(static_cast<double>(i) + 0.85);
        const double yv = f.py(values[i]);
        os << "<rect x=\"" << format_double(xa) << "\" y=\"" << format_double(yv)
           << "\" width=\"" << format_double(xb - xa) << "\" height=\""
           << format_double(f.py(0.0) - yv) << "\" fill=\"" << palette(i)
           << "\"/>\n";
        const double xm = (xa + xb) / 2;
        os << "<text x=\"" << format_double(xm) << "\" y=\""
           << format_double(f.h - f.mb + 14)
           << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\" "
              "transform=\"rotate(-35 "
           << format_double(xm) << " " << format_double(f.h - f.mb + 14) << ")\">"
           << labels[i] << "</text>\n";
        os << "<text x=\"" << format_double(xm) << "\" y=\""
           << format_double(yv - 4)
           << "\" text-anchor=\"middle\" font-family=\"monospace\" "
              "font-size=\"10\">"
           << format_double(values[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("svg: cannot write " + path);
    os << content;
}

}  // namespace reg::svg
