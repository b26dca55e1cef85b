#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cdlab/core.hpp"

namespace cdlab {

/// Minimal deterministic SVG scatter/line plot; axes are drawn for the
/// already-transformed coordinates the caller supplies.
inline void write_svg_plot(const std::string& path,
                           const std::vector<std::pair<double, double>>& points,
                           const std::string& x_label, const std::string& y_label,
                           bool connect = true) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    const int W = 640, H = 480, M = 60;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (!points.empty()) {
        xmin = xmax = points[0].first;
        ymin = ymax = points[0].second;
        for (const auto& [x, y] : points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
    }
    auto px = [&](double x) { return M + (x - xmin) / (xmax - xmin) * (W - 2 * M); };
    auto py = [&](double y) { return H - M - (y - ymin) / (ymax - ymin) * (H - 2 * M); };
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M << "' y2='" << H - M
        << "' stroke='black'/>\n";
    out << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='" << H - M
        << "' stroke='black'/>\n";
    out << "<text x='" << W / 2 << "' y='" << H - 15 << "' font-size='14' text-anchor='middle'>"
        << x_label << "</text>\n";
    out << "<text x='18' y='" << H / 2 << "' font-size='14' text-anchor='middle' transform='rotate(-90 18 "
        << H / 2 << ")'>" << y_label << "</text>\n";
    // min/max tick labels
    out << "<text x='" << M << "' y='" << H - M + 18 << "' font-size='11'>" << format_double(xmin)
        << "</text>\n";
    out << "<text x='" << W - M << "' y='" << H - M + 18
        << "' font-size='11' text-anchor='end'>" << format_double(xmax) << "</text>\n";
    out << "<text x='" << M - 4 << "' y='" << H - M << "' font-size='11' text-anchor='end'>"
        << format_double(ymin) << "</text>\n";
    out << "<text x='" << M - 4 << "' y='" << M + 4 << "' font-size='11' text-anchor='end'>"
        << format_double(ymax) << "</text>\n";
    if (connect && points.size() > 1) {
        out << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
        for (const auto& [x, y] : points) out << px(x) << "," << py(y) << " ";
        out << "'/>\n";
    }
    for (const auto& [x, y] : points)
        out << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3.5' fill='crimson'/>\n";
    out << "</svg>\n";
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << "\n";
}

inline void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

}  // namespace cdlab
