#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace qnoise::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#1f77b4";
    bool dashed = false;
    bool markers = false;
};

struct Plot {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    bool logx = false;
    std::vector<Series> series;
    std::vector<std::pair<double, double>> bands;  // shaded x ranges
    double width = 900;
    double height = 520;
};

// Static line plot; non-finite points break the line.
void write_svg(std::ostream& out, const Plot& plot);

}  // namespace qnoise::svg
