#include "qnoise/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "qnoise/core.hpp"

namespace qnoise {

namespace {

GaussLegendre compute_gauss_legendre(int n) {
    GaussLegendre g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        g.x[i] = -z;
        g.x[n - 1 - i] = z;
        g.w[i] = g.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return g;
}

}  // namespace

const GaussLegendre& gauss_legendre(int order) {
    static std::mutex mu;
    static std::map<int, GaussLegendre> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, compute_gauss_legendre(order)).first;
    return it->second;
}

std::vector<double> clean_breakpoints(std::vector<double> pts, double lo, double hi) {
    pts.push_back(lo);
    pts.push_back(hi);
    std::erase_if(pts, [&](double p) { return !(p >= lo && p <= hi); });
    std::sort(pts.begin(), pts.end());
    const double tol = 1e-12 * std::max(std::abs(lo), std::abs(hi));
    std::vector<double> out;
    for (double p : pts)
        if (out.empty() || p - out.back() > tol) out.push_back(p);
    if (out.size() == 1) out.push_back(hi);
    return out;
}

QuadratureRule composite_rule(std::span<const double> breakpoints, double max_width, int order) {
    const auto& gl = gauss_legendre(order);
    QuadratureRule rule;
    for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
        const double a = breakpoints[k], b = breakpoints[k + 1];
        if (b <= a) continue;
        const auto panels = static_cast<std::size_t>(std::max(1.0, std::ceil((b - a) / max_width)));
        const double h = (b - a) / static_cast<double>(panels);
        for (std::size_t p = 0; p < panels; ++p) {
            const double lo = a + h * static_cast<double>(p);
            const double mid = lo + 0.5 * h;
            for (std::size_t i = 0; i < gl.x.size(); ++i) {
                rule.x.push_back(mid + 0.5 * h * gl.x[i]);
                rule.w.push_back(0.5 * h * gl.w[i]);
            }
        }
    }
    return rule;
}

}  // namespace qnoise
