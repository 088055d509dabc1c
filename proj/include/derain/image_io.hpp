// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/tensor.hpp"

namespace derain {

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Binary PPM (P6) of one RGB frame of a pixel-space video.
template <class T>
void write_ppm(const std::string& path, const Video<T>& video, std::size_t frame) {
    const VideoShape& s = video.shape;
    if (s.channels != 3) {
        throw std::invalid_argument("write_ppm: video must have 3 channels");
    }
    if (frame >= s.frames) {
        throw std::out_of_range("write_ppm: frame index out of range");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "P6\n" << s.width << ' ' << s.height << "\n255\n";
    for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                out.put(static_cast<char>(to_byte(static_cast<double>(video.at(frame, c, y, x)))));
            }
        }
    }
}

// Writes <dir>/<prefix>_NNN.ppm for every frame; returns the paths.
template <class T>
std::vector<std::string> write_frames(const std::string& dir, const std::string& prefix, const Video<T>& video) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> paths;
    for (std::size_t f = 0; f < video.shape.frames; ++f) {
        std::ostringstream name;
        name << prefix << '_' << std::setw(3) << std::setfill('0') << f << ".ppm";
        const std::string path = (std::filesystem::path(dir) / name.str()).string();
        write_ppm(path, video, f);
        paths.push_back(path);
    }
    return paths;
}

// Reads a P6 file with maxval 255 into a single-frame pixel video.
inline Video<double> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "'");
    }
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    auto skip_comments = [&] {
        in >> std::ws;
        while (in.peek() == '#') {
            in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
            in >> std::ws;
        }
    };
    in >> magic;
    skip_comments();
    in >> w;
    skip_comments();
    in >> h;
    skip_comments();
    in >> maxval;
    if (magic != "P6" || !in || maxval != 255 || w == 0 || h == 0) {
        throw std::runtime_error("'" + path + "' is not an 8-bit P6 image");
    }
    in.get();
    Video<double> v({1, 3, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const int b = in.get();
                if (b == std::char_traits<char>::eof()) {
                    throw std::runtime_error("'" + path + "' is truncated");
                }
                v.at(0, c, y, x) = static_cast<double>(b) / 255.0;
            }
        }
    }
    return v;
}

// Numbers for CSV/JSON text: shortest round-trip form, "inf" for infinity.
inline std::string format_number(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    if (std::isnan(v)) {
        return "nan";
    }
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out << (i ? "," : "") << cells[i];
        }
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) {
        if (r.size() != header.size()) {
            throw std::invalid_argument("write_csv: row width does not match header");
        }
        line(r);
    }
}

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal SVG line plot. Infinite y values are drawn at the top edge with a
// hollow marker.
inline std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                                 const std::vector<PlotSeries>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            if (std::isfinite(s.y[i])) {
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        }
    }
    if (!std::isfinite(xmin)) {
        xmin = 0;
        xmax = 1;
    }
    if (!std::isfinite(ymin)) {
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) {
        xmax = xmin + 1;
    }
    if (ymax == ymin) {
        ymax = ymin + 1;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return std::isfinite(y) ? H - B - (y - ymin) / (ymax - ymin) * (H - T - B) : T; };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream o;
    o << std::fixed << std::setprecision(2);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0, yv = ymin + (ymax - ymin) * k / 4.0;
        o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << format_number(std::round(xv * 100) / 100) << "</text>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
          << format_number(std::round(yv * 100) / 100) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << x_label << "</text>\n";
    o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* c = colors[k % 6];
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        o << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const bool fin = std::isfinite(s.y[i]);
            o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3.5\" fill=\""
              << (fin ? c : "white") << "\" stroke=\"" << c << "\"/>\n";
        }
        o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 18 * (k + 1) << "\" font-size=\"12\" fill=\"" << c << "\">"
          << s.label << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << text;
}

}  // namespace derain
