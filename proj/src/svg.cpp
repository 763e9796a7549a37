#include "qnoise/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace qnoise::svg {

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// Rounded tick positions covering [lo, hi].
std::vector<double> linear_ticks(double lo, double hi) {
    const double span = hi - lo;
    if (!(span > 0.0)) return {lo};
    const double raw = span / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(v);
    return t;
}

}  // namespace

void write_svg(std::ostream& out, const Plot& p) {
    const double left = 80, right = 170, top = 40, bottom = 60;
    const double pw = p.width - left - right, ph = p.height - top - bottom;

    auto tx = [&](double x) { return p.logx ? std::log10(x) : x; };
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (p.logx && s.x[i] <= 0.0)) continue;
            xmin = std::min(xmin, tx(s.x[i]));
            xmax = std::max(xmax, tx(s.x[i]));
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    auto X = [&](double x) { return left + (tx(x) - xmin) / (xmax - xmin) * pw; };
    auto Y = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p.width << "\" height=\"" << p.height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& [a, b] : p.bands) {
        if (p.logx && b <= 0.0) continue;
        const double xa = std::clamp(X(p.logx ? std::max(a, std::pow(10.0, xmin)) : a), left, left + pw);
        const double xb = std::clamp(X(b), left, left + pw);
        out << "<rect x=\"" << xa << "\" y=\"" << top << "\" width=\"" << std::max(0.0, xb - xa) << "\" height=\"" << ph
            << "\" fill=\"#dddddd\" fill-opacity=\"0.5\"/>\n";
    }
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";

    // Axes ticks.
    if (p.logx) {
        for (int e = static_cast<int>(std::ceil(xmin)); e <= static_cast<int>(std::floor(xmax)); ++e) {
            const double px = left + (e - xmin) / (xmax - xmin) * pw;
            out << "<line x1=\"" << px << "\" y1=\"" << top + ph << "\" x2=\"" << px << "\" y2=\"" << top + ph + 5
                << "\" stroke=\"black\"/><text x=\"" << px << "\" y=\"" << top + ph + 18
                << "\" text-anchor=\"middle\">1e" << e << "</text>\n";
        }
    } else {
        for (double v : linear_ticks(xmin, xmax)) {
            const double px = X(v);
            out << "<line x1=\"" << px << "\" y1=\"" << top + ph << "\" x2=\"" << px << "\" y2=\"" << top + ph + 5
                << "\" stroke=\"black\"/><text x=\"" << px << "\" y=\"" << top + ph + 18
                << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
        }
    }
    for (double v : linear_ticks(ymin, ymax)) {
        const double py = Y(v);
        out << "<line x1=\"" << left - 5 << "\" y1=\"" << py << "\" x2=\"" << left << "\" y2=\"" << py
            << "\" stroke=\"black\"/><text x=\"" << left - 8 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
            << fmt(v) << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << p.height - 15 << "\" text-anchor=\"middle\">"
        << escape(p.xlabel) << "</text>\n";
    out << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(p.ylabel) << "</text>\n";
    out << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(p.title)
        << "</text>\n";

    double legend_y = top + 10;
    for (const auto& s : p.series) {
        std::string d;
        bool pen = false;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const bool ok = std::isfinite(s.x[i]) && std::isfinite(s.y[i]) && !(p.logx && s.x[i] <= 0.0);
            if (!ok) {
                pen = false;
                continue;
            }
            d += (pen ? " L" : " M") + fmt(X(s.x[i])) + "," + fmt(Y(s.y[i]));
            pen = true;
        }
        out << "<path d=\"" << d << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
            << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        if (s.markers)
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]) && !(p.logx && s.x[i] <= 0.0))
                    out << "<circle cx=\"" << X(s.x[i]) << "\" cy=\"" << Y(s.y[i]) << "\" r=\"2\" fill=\"" << s.color
                        << "\"/>\n";
        out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << legend_y << "\" x2=\"" << left + pw + 36 << "\" y2=\""
            << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
            << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/><text x=\"" << left + pw + 42 << "\" y=\""
            << legend_y + 4 << "\">" << escape(s.label) << "</text>\n";
        legend_y += 18;
    }
    out << "</svg>\n";
}

}  // namespace qnoise::svg
