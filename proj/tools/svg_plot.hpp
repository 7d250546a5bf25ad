#pragma once

// Minimal dependency-free SVG line charts for the CLI's plot outputs.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace alignlab::plot {

struct Series {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
};

class LineChart {
  public:
    LineChart(std::string title, std::string x_label, std::string y_label)
        : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

    void set_log_y(bool log_y) { log_y_ = log_y; }
    void set_log_x(bool log_x) { log_x_ = log_x; }

    void add_series(std::string name, std::vector<double> xs, std::vector<double> ys) {
        if (xs.size() != ys.size()) throw std::invalid_argument("series size mismatch");
        series_.push_back(Series{std::move(name), std::move(xs), std::move(ys)});
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write plot " + path);
        out << render();
    }

    std::string render() const {
        const double width = 720, height = 440;
        const double left = 70, right = 20, top = 40, bottom = 50;
        const double plot_w = width - left - right;
        const double plot_h = height - top - bottom;

        double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
        for (const auto& s : series_) {
            for (std::size_t i = 0; i < s.xs.size(); ++i) {
                const double x = tx(s.xs[i]);
                const double y = ty(s.ys[i]);
                if (!std::isfinite(x) || !std::isfinite(y)) continue;
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
            }
        }
        if (x_min > x_max) {
            x_min = 0;
            x_max = 1;
        }
        if (y_min > y_max) {
            y_min = 0;
            y_max = 1;
        }
        if (x_max == x_min) x_max = x_min + 1;
        if (y_max == y_min) y_max = y_min + 1;
        const double y_pad = 0.05 * (y_max - y_min);
        y_min -= y_pad;
        y_max += y_pad;

        const auto sx = [&](double x) { return left + (tx(x) - x_min) / (x_max - x_min) * plot_w; };
        const auto sy = [&](double y) {
            return top + plot_h - (ty(y) - y_min) / (y_max - y_min) * plot_h;
        };

        static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
        std::ostringstream svg;
        svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
            << height << "' viewBox='0 0 " << width << " " << height << "'>\n";
        svg << "<rect width='100%' height='100%' fill='white'/>\n";
        svg << "<text x='" << width / 2 << "' y='22' text-anchor='middle' font-size='15' "
            << "font-family='sans-serif'>" << title_ << "</text>\n";

        // axes
        svg << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='"
            << top + plot_h << "' stroke='black'/>\n";
        svg << "<line x1='" << left << "' y1='" << top + plot_h << "' x2='" << left + plot_w
            << "' y2='" << top + plot_h << "' stroke='black'/>\n";
        svg << "<text x='" << left + plot_w / 2 << "' y='" << height - 12
            << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label_
            << "</text>\n";
        svg << "<text x='16' y='" << top + plot_h / 2
            << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 16 "
            << top + plot_h / 2 << ")'>" << y_label_ << "</text>\n";

        // ticks
        for (int i = 0; i <= 5; ++i) {
            const double fx = x_min + (x_max - x_min) * i / 5.0;
            const double fy = y_min + (y_max - y_min) * i / 5.0;
            const double px = left + plot_w * i / 5.0;
            const double py = top + plot_h - plot_h * i / 5.0;
            svg << "<line x1='" << px << "' y1='" << top + plot_h << "' x2='" << px << "' y2='"
                << top + plot_h + 4 << "' stroke='black'/>\n";
            svg << "<text x='" << px << "' y='" << top + plot_h + 18
                << "' text-anchor='middle' font-size='10' font-family='sans-serif'>"
                << tick_label(fx, log_x_) << "</text>\n";
            svg << "<line x1='" << left - 4 << "' y1='" << py << "' x2='" << left << "' y2='" << py
                << "' stroke='black'/>\n";
            svg << "<text x='" << left - 8 << "' y='" << py + 3
                << "' text-anchor='end' font-size='10' font-family='sans-serif'>"
                << tick_label(fy, log_y_) << "</text>\n";
        }

        // series
        for (std::size_t s = 0; s < series_.size(); ++s) {
            const char* color = kPalette[s % 8];
            std::ostringstream points;
            for (std::size_t i = 0; i < series_[s].xs.size(); ++i) {
                if (!std::isfinite(tx(series_[s].xs[i])) || !std::isfinite(ty(series_[s].ys[i]))) {
                    continue;
                }
                points << sx(series_[s].xs[i]) << ',' << sy(series_[s].ys[i]) << ' ';
            }
            svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='"
                << points.str() << "'/>\n";
            for (std::size_t i = 0; i < series_[s].xs.size(); ++i) {
                svg << "<circle cx='" << sx(series_[s].xs[i]) << "' cy='" << sy(series_[s].ys[i])
                    << "' r='2.4' fill='" << color << "'/>\n";
            }
            const double ly = top + 14 + 16 * static_cast<double>(s);
            svg << "<rect x='" << left + plot_w - 150 << "' y='" << ly - 9
                << "' width='12' height='4' fill='" << color << "'/>\n";
            svg << "<text x='" << left + plot_w - 132 << "' y='" << ly - 3
                << "' font-size='11' font-family='sans-serif'>" << series_[s].name << "</text>\n";
        }
        svg << "</svg>\n";
        return svg.str();
    }

  private:
    double tx(double x) const { return log_x_ ? std::log10(x) : x; }
    double ty(double y) const { return log_y_ ? std::log10(y) : y; }

    static std::string tick_label(double value, bool logged) {
        std::ostringstream out;
        out.precision(3);
        out << (logged ? std::pow(10.0, value) : value);
        return out.str();
    }

    std::string title_, x_label_, y_label_;
    bool log_x_ = false, log_y_ = false;
    std::vector<Series> series_;
};

}  // namespace alignlab::plot
