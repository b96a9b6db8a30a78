// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/harness.hpp"

namespace odeslab {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::Config, "csv: missing column \"" + name + "\"");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (first) {
            t.header = std::move(fields);
            first = false;
            continue;
        }
        if (fields.size() != t.header.size()) {
            fail(ErrorKind::Config, "csv line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) + " fields");
        }
        t.rows.push_back(std::move(fields));
    }
    if (first) fail(ErrorKind::Config, "csv: empty input (no header)");
    return t;
}

namespace detail {

inline std::string num(double v, int prec = 2) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

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

}  // namespace detail

/// Log-log plot of seed-averaged error against M, one polyline per (experiment, slope group),
/// labelled with its fitted slope. Output depends only on the CSV bytes.
inline std::string render_convergence_svg(const CsvTable& csv) {
    const std::size_t c_exp = csv.column("experiment"), c_group = csv.column("slope_group"), c_M = csv.column("M"),
                      c_err = csv.column("final_error");

    std::vector<ReportRow> rows;
    for (const auto& r : csv.rows) {
        ReportRow row;
        row.experiment = r[c_exp];
        row.slope_group = r[c_group];
        try {
            row.M = std::stoi(r[c_M]);
            row.final_error = std::stod(r[c_err]);
        } catch (const std::exception&) {
            fail(ErrorKind::Config, "csv: non-numeric M or final_error");
        }
        rows.push_back(std::move(row));
    }
    const auto fits = detail::fit_groups(rows);

    constexpr double W = 760, H = 520, L = 80, R = 250, T = 40, B = 60;
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"520\" viewBox=\"0 0 760 520\">\n";
    svg += "<rect width=\"760\" height=\"520\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::num(L + (W - L - R) / 2, 1) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">final error vs M (log-log)</text>\n";

    double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
    for (const auto& f : fits) {
        for (const auto& [M, e] : f.mean_errors) {
            if (!(e > 0.0)) continue;
            xmin = std::min(xmin, std::log10(static_cast<double>(M)));
            xmax = std::max(xmax, std::log10(static_cast<double>(M)));
            ymin = std::min(ymin, std::log10(e));
            ymax = std::max(ymax, std::log10(e));
        }
    }
    if (!(xmin <= xmax)) {
        svg += "<text x=\"380\" y=\"260\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">no data</text>\n</svg>\n";
        return svg;
    }
    xmin = std::floor(xmin);
    xmax = std::max(std::ceil(xmax), xmin + 1);
    ymin = std::floor(ymin);
    ymax = std::max(std::ceil(ymax), ymin + 1);
    const auto px = [&](double lx) { return L + (lx - xmin) / (xmax - xmin) * (W - L - R); };
    const auto py = [&](double ly) { return H - B - (ly - ymin) / (ymax - ymin) * (H - T - B); };

    svg += "<g stroke=\"#ddd\" stroke-width=\"1\">\n";
    for (double d = xmin; d <= xmax + 1e-9; d += 1) {
        svg += "<line x1=\"" + detail::num(px(d)) + "\" y1=\"" + detail::num(py(ymin)) + "\" x2=\"" + detail::num(px(d)) + "\" y2=\"" + detail::num(py(ymax)) + "\"/>\n";
    }
    for (double d = ymin; d <= ymax + 1e-9; d += 1) {
        svg += "<line x1=\"" + detail::num(px(xmin)) + "\" y1=\"" + detail::num(py(d)) + "\" x2=\"" + detail::num(px(xmax)) + "\" y2=\"" + detail::num(py(d)) + "\"/>\n";
    }
    svg += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (double d = xmin; d <= xmax + 1e-9; d += 1) {
        svg += "<text x=\"" + detail::num(px(d)) + "\" y=\"" + detail::num(py(ymin) + 16) + "\" text-anchor=\"middle\">1e" + detail::num(d, 0) + "</text>\n";
    }
    for (double d = ymin; d <= ymax + 1e-9; d += 1) {
        svg += "<text x=\"" + detail::num(px(xmin) - 6) + "\" y=\"" + detail::num(py(d) + 4) + "\" text-anchor=\"end\">1e" + detail::num(d, 0) + "</text>\n";
    }
    svg += "<text x=\"" + detail::num(px((xmin + xmax) / 2)) + "\" y=\"" + detail::num(H - 18) + "\" text-anchor=\"middle\">M</text>\n</g>\n";

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};
    std::size_t k = 0;
    for (const auto& f : fits) {
        const std::string color = palette[k % (sizeof palette / sizeof *palette)];
        std::string pts;
        for (const auto& [M, e] : f.mean_errors) {
            if (!(e > 0.0)) continue;
            pts += (pts.empty() ? "" : " ") + detail::num(px(std::log10(static_cast<double>(M)))) + "," + detail::num(py(std::log10(e)));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
        const std::string label = f.experiment + "/" + f.slope_group + (f.fitted ? "  slope " + detail::num(f.fit.slope, 3) : "  slope n/a");
        const double ly = T + 14 + 16.0 * static_cast<double>(k);
        svg += "<line x1=\"" + detail::num(W - R + 12) + "\" y1=\"" + detail::num(ly - 4) + "\" x2=\"" + detail::num(W - R + 30) + "\" y2=\"" + detail::num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + detail::num(W - R + 34) + "\" y=\"" + detail::num(ly) + "\" font-family=\"sans-serif\" font-size=\"10\">" + detail::xml_escape(label) + "</text>\n";
        ++k;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace odeslab
