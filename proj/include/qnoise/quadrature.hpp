#pragma once

#include <span>
#include <vector>

namespace qnoise {

// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
    std::vector<double> x;
    std::vector<double> w;
};

const GaussLegendre& gauss_legendre(int order);

// A composite rule: integral of f over the covered range is sum w[i] * f(x[i]).
struct QuadratureRule {
    std::vector<double> x;
    std::vector<double> w;

    std::size_t size() const { return x.size(); }
};

// Builds panels between sorted breakpoints, each panel no wider than max_width.
QuadratureRule composite_rule(std::span<const double> breakpoints, double max_width, int order);

// Sorted, deduplicated breakpoints restricted to [lo, hi] with both ends included.
std::vector<double> clean_breakpoints(std::vector<double> pts, double lo, double hi);

}  // namespace qnoise
