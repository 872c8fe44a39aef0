#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "lcvn/geometry.hpp"

namespace lcvn {

// Minimal deterministic SVG plotting; emitted artifacts, not an interactive UI.
struct SvgPlot {
    int width = 480, height = 480;
    double min_x = 0, min_y = 0, max_x = 1, max_y = 1;
    std::string body;

    void fit(const std::vector<const std::vector<Pose>*>& traces, double pad = 0.5) {
        min_x = min_y = 1e18;
        max_x = max_y = -1e18;
        for (const auto* tr : traces)
            for (const auto& p : *tr) {
                min_x = std::min(min_x, p.x);
                max_x = std::max(max_x, p.x);
                min_y = std::min(min_y, p.y);
                max_y = std::max(max_y, p.y);
            }
        min_x -= pad;
        min_y -= pad;
        max_x += pad;
        max_y += pad;
    }

    double sx(double x) const { return (x - min_x) / (max_x - min_x) * width; }
    double sy(double y) const { return height - (y - min_y) / (max_y - min_y) * height; }

    void polyline(const std::vector<Pose>& trace, const std::string& color, double stroke = 2.0,
                  bool dashed = false) {
        if (trace.empty()) return;
        body += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" +
                std::to_string(stroke) + "\"";
        if (dashed) body += " stroke-dasharray=\"6,4\"";
        body += " points=\"";
        char buf[64];
        for (const auto& p : trace) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", sx(p.x), sy(p.y));
            body += buf;
        }
        body += "\"/>\n";
    }

    void marker(double x, double y, const std::string& color, double r = 5.0) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\"/>\n", sx(x), sy(y),
                      r, color.c_str());
        body += buf;
    }

    void label(double px, double py, const std::string& text, const std::string& color = "#333") {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">%s</text>\n", px,
                      py, color.c_str(), text.c_str());
        body += buf;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        LCVN_CHECK(f.good(), "cannot write plot: " + path);
        f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
          << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
          << body << "</svg>\n";
    }
};

// simple line chart for metric-vs-horizon curves
struct CurvePlot {
    int width = 480, height = 320;
    std::string body;
    double min_y = 0.0, max_y = 1.0;
    double min_x = 1.0, max_x = 8.0;

    void series(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::string& color) {
        char buf[64];
        std::string pts;
        for (size_t i = 0; i < xs.size(); ++i) {
            double px = (xs[i] - min_x) / (max_x - min_x + 1e-12) * (width - 60) + 40;
            double py = height - 30 - (ys[i] - min_y) / (max_y - min_y + 1e-12) * (height - 60);
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px, py);
            pts += buf;
        }
        body += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" +
                pts + "\"/>\n";
    }

    void label(double px, double py, const std::string& text, const std::string& color = "#333") {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">%s</text>\n", px,
                      py, color.c_str(), text.c_str());
        body += buf;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        LCVN_CHECK(f.good(), "cannot write plot: " + path);
        f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
          << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
          << "<line x1=\"40\" y1=\"" << height - 30 << "\" x2=\"" << width - 20 << "\" y2=\""
          << height - 30 << "\" stroke=\"#999\"/>\n"
          << "<line x1=\"40\" y1=\"30\" x2=\"40\" y2=\"" << height - 30 << "\" stroke=\"#999\"/>\n"
          << body << "</svg>\n";
    }
};

}  // namespace lcvn
