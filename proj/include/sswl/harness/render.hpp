#pragma once

/// Raster output: binary PGM image grids and PPM line plots. Plots carry
/// no text; each is written next to a CSV holding the plotted numbers.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "sswl/ct_dataio.hpp"
#include "sswl/harness/csv.hpp"

namespace sswl::harness {

/// 8-bit gray raster.
struct GrayImage {
    int width = 0, height = 0;
    std::vector<unsigned char> px;

    GrayImage() = default;
    GrayImage(int w, int h, unsigned char fill = 0) : width(w), height(h), px(std::size_t(w) * h, fill) {}
    unsigned char& at(int x, int y) { return px[std::size_t(y) * width + x]; }
};

/// Maps [lo, hi] to [0, 255] with clamping.
template <class It>
GrayImage to_gray(It first, int w, int h, double lo = 0.0, double hi = 1.0) {
    GrayImage g(w, h);
    for (std::size_t i = 0; i < g.px.size(); ++i, ++first) {
        const double t = std::clamp((double(*first) - lo) / (hi - lo), 0.0, 1.0);
        g.px[i] = static_cast<unsigned char>(std::lround(255.0 * t));
    }
    return g;
}

/// Panels left to right, separated by `gap` white columns. Panels must share a height.
inline GrayImage hstack(const std::vector<GrayImage>& panels, int gap = 2) {
    if (panels.empty()) return {};
    int w = 0;
    for (const auto& p : panels) {
        if (p.height != panels.front().height) throw ValidationError("grid panels differ in height");
        w += p.width;
    }
    w += gap * int(panels.size() - 1);
    GrayImage out(w, panels.front().height, 255);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x) out.at(x0 + x, y) = p.px[std::size_t(y) * p.width + x];
        x0 += p.width + gap;
    }
    return out;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& g) {
    const std::string head = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
    std::vector<unsigned char> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), g.px.begin(), g.px.end());
    sswl::detail::write_file_atomic(path, bytes);
}

struct PlotSeries {
    std::string name;
    std::vector<double> y;  // one value per x position; NaN leaves a gap
};

/// Line plot over categorical x positions. Writes `<stem>.ppm` and `<stem>.csv`
/// (columns series,x,y).
inline void write_line_plot(const std::filesystem::path& stem, const std::vector<std::string>& x_labels,
                            const std::vector<PlotSeries>& series, int width = 480, int height = 320) {
    CsvTable t{{"series", "x", "y"}, {}};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.y.size() && i < x_labels.size(); ++i) {
            t.rows.push_back({s.name, x_labels[i], csv_real(s.y[i])});
            if (std::isfinite(s.y[i])) {
                lo = std::min(lo, s.y[i]);
                hi = std::max(hi, s.y[i]);
            }
        }
    }
    auto csv_path = stem;
    csv_path += ".csv";
    write_csv(csv_path, t);

    std::vector<unsigned char> rgb(std::size_t(width) * height * 3, 255);
    const auto put = [&](int x, int y, std::array<unsigned char, 3> c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        std::copy(c.begin(), c.end(), rgb.begin() + (std::ptrdiff_t(y) * width + x) * 3);
    };
    const auto line = [&](int x0, int y0, int x1, int y1, std::array<unsigned char, 3> c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            put(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) err += dy, x0 += sx;
            if (e2 <= dx) err += dx, y0 += sy;
        }
    };
    const int left = 40, right = width - 20, top = 20, bottom = height - 30;
    const std::array<unsigned char, 3> black{0, 0, 0}, grid{220, 220, 220};
    for (int k = 0; k <= 4; ++k) {
        const int y = bottom - (bottom - top) * k / 4;
        line(left, y, right, y, grid);
    }
    line(left, bottom, right, bottom, black);
    line(left, bottom, left, top, black);
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi == lo) lo -= 0.5, hi += 0.5;
    const int n = std::max<int>(1, int(x_labels.size()));
    const auto px = [&](std::size_t i) { return n == 1 ? (left + right) / 2 : left + int((right - left) * i / (n - 1)); };
    const auto py = [&](double v) { return bottom - int(std::lround((bottom - top) * (v - lo) / (hi - lo))); };
    for (std::size_t i = 0; i < x_labels.size(); ++i) line(px(i), bottom, px(i), bottom + 4, black);
    static const std::array<std::array<unsigned char, 3>, 6> palette{
        {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto c = palette[s % palette.size()];
        const auto& y = series[s].y;
        for (std::size_t i = 0; i < y.size() && i < x_labels.size(); ++i) {
            if (!std::isfinite(y[i])) continue;
            for (int d = -2; d <= 2; ++d) line(px(i) - 2, py(y[i]) + d, px(i) + 2, py(y[i]) + d, c);
            if (i + 1 < y.size() && i + 1 < x_labels.size() && std::isfinite(y[i + 1]))
                line(px(i), py(y[i]), px(i + 1), py(y[i + 1]), c);
        }
    }
    const std::string head = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<unsigned char> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), rgb.begin(), rgb.end());
    auto ppm_path = stem;
    ppm_path += ".ppm";
    sswl::detail::write_file_atomic(ppm_path, bytes);
}

}  // namespace sswl::harness
