#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mwp/error.hpp"

// Minimal CSV reading and SVG line/scatter rendering for the plot command.

namespace mwp::plot {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(ErrorKind::missing_field, "no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }

    std::vector<double> numbers(const std::string& name) const {
        const auto c = column(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(c < r.size() && !r[c].empty() ? std::stod(r[c]) : std::nan(""));
        return out;
    }

    std::vector<std::string> strings(const std::string& name) const {
        const auto c = column(name);
        std::vector<std::string> out;
        for (const auto& r : rows) out.push_back(c < r.size() ? r[c] : std::string());
        return out;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline Table read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::io, path + " is empty");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (!line.empty()) t.rows.push_back(split_csv_line(line));
    }
    return t;
}

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct Options {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool scatter = false;
    int width = 640;
    int height = 420;
};

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string render_svg(const std::vector<Series>& series, const Options& o) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double ml = 60, mr = 120, mt = 36, mb = 48;
    const double pw = o.width - ml - mr, ph = o.height - mt - mb;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return mt + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream s;
    s.precision(6);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << o.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(o.title)
      << "</text>\n";
    s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
        s << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << fx
          << "</text>\n";
        s << "<text x=\"" << ml - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fy
          << "</text>\n";
    }
    s << "<text x=\"" << ml + pw / 2 << "\" y=\"" << o.height - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << escape(o.x_label) << "</text>\n";
    s << "<text x=\"14\" y=\"" << mt + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << mt + ph / 2
      << ")\" text-anchor=\"middle\">" << escape(o.y_label) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* c = colors[k % 7];
        if (o.scatter) {
            for (std::size_t i = 0; i < sr.x.size(); ++i) {
                if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) continue;
                s << "<circle cx=\"" << px(sr.x[i]) << "\" cy=\"" << py(sr.y[i]) << "\" r=\"2.5\" fill=\"" << c
                  << "\"/>\n";
            }
        } else {
            s << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.6\" points=\"";
            for (std::size_t i = 0; i < sr.x.size(); ++i) {
                if (std::isfinite(sr.x[i]) && std::isfinite(sr.y[i])) s << px(sr.x[i]) << ',' << py(sr.y[i]) << ' ';
            }
            s << "\"/>\n";
        }
        s << "<text x=\"" << ml + pw + 10 << "\" y=\"" << mt + 14 + 16 * static_cast<double>(k)
          << "\" font-size=\"12\" fill=\"" << c << "\">" << escape(sr.name) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

/// Series from a table: `y_columns` against `x_column`, or, with a group
/// column, one series per distinct group value.
inline std::vector<Series> series_from(const Table& t, const std::string& x_column,
                                       const std::vector<std::string>& y_columns, const std::string& group = {}) {
    std::vector<Series> out;
    const auto xs = t.numbers(x_column);
    if (!group.empty()) {
        const auto g = t.strings(group);
        const auto ys = t.numbers(y_columns.at(0));
        std::map<std::string, Series> by;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto& s = by[g[i]];
            s.name = g[i];
            s.x.push_back(xs[i]);
            s.y.push_back(ys[i]);
        }
        for (auto& [_, s] : by) out.push_back(std::move(s));
        return out;
    }
    for (const auto& y : y_columns) out.push_back({y, xs, t.numbers(y)});
    return out;
}

}  // namespace mwp::plot
