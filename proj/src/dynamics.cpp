#include "qnoise/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <random>

#include "qnoise/quadrature.hpp"

namespace qnoise::dynamics {

namespace {

using Mat2 = Eigen::Matrix2cd;

Mat2 pauli(Axis a) {
    Mat2 m;
    switch (a) {
        case Axis::x: m << 0, 1, 1, 0; break;
        case Axis::y: m << 0, cplx(0, -1), cplx(0, 1), 0; break;
        case Axis::z: m << 1, 0, 0, -1; break;
    }
    return m;
}

Axis axis_of(Observable o) { return o == Observable::x ? Axis::x : Axis::y; }

// int_{[a,b] x [c,d]} C(t - t') = int C(u) w(u) du with a trapezoidal weight w.
template <class Fn>
double rect_integral(double a, double b, double c, double d, Fn&& corr, double h, int order, bool ordered) {
    double lo = a - d, hi = b - c;
    if (ordered) lo = std::max(lo, 0.0);
    if (!(hi > lo)) return 0.0;
    std::vector<double> pts{lo, hi};
    for (double k : {a - d, a - c, b - d, b - c, 0.0})
        if (k > lo && k < hi) pts.push_back(k);
    const double k0 = std::ceil(lo / h), k1 = std::floor(hi / h);
    for (double k = k0; k <= k1; k += 1.0) {
        const double u = k * h;
        if (u > lo && u < hi) pts.push_back(u);
    }
    std::sort(pts.begin(), pts.end());
    const auto& gl = gauss_legendre(order);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double p = pts[i], q = pts[i + 1];
        if (q - p <= 1e-15 * (std::abs(p) + std::abs(q))) continue;
        const double mid = 0.5 * (p + q), half = 0.5 * (q - p);
        for (std::size_t g = 0; g < gl.x.size(); ++g) {
            const double u = mid + half * gl.x[g];
            const double w = std::min(b, d + u) - std::max(a, c + u);
            if (w > 0.0) sum += half * gl.w[g] * w * corr(u);
        }
    }
    return sum;
}

template <class Fn>
double pair_integral(const SwitchingFunction& f, const SwitchingFunction& g, Fn&& corr, double h, int order,
                     bool ordered) {
    double total = 0.0;
    for (std::size_t i = 0; i < f.segments(); ++i) {
        if (f.values[i] == 0) continue;
        for (std::size_t j = 0; j < g.segments(); ++j) {
            if (g.values[j] == 0) continue;
            total += f.values[i] * g.values[j] *
                     rect_integral(f.breakpoints[i], f.breakpoints[i + 1], g.breakpoints[j], g.breakpoints[j + 1], corr,
                                   h, order, ordered);
        }
    }
    return total;
}

double span_of(const SwitchingFunction& f, const SwitchingFunction& g) {
    const double lo = std::min(f.breakpoints.front(), g.breakpoints.front());
    const double hi = std::max(f.breakpoints.back(), g.breakpoints.back());
    return hi - lo;
}

void require_resolution(const spectra::SpectralGrid& grid, double span) {
    if (span <= 0.0) return;
    const double needed = grid.order * two_pi / (20.0 * span);
    if (grid.panel_width > needed * (1.0 + 1e-9))
        throw QuadratureError("frequency grid too coarse for a time span of " + std::to_string(span) + " s");
}

std::vector<cplx> transforms(const SwitchingFunction& f, const spectra::SpectralGrid& grid) {
    std::vector<cplx> out(grid.rule.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = control::filter(f, grid.rule.x[i]);
    return out;
}

SwitchingFunction shifted(SwitchingFunction f, double dt) {
    for (auto& t : f.breakpoints) t += dt;
    return f;
}

double c_coef(double theta, int r) { return std::cos(0.5 * theta + 0.5 * pi * r); }

}  // namespace

int frame_sign(Observable o, Axis alpha) {
    const Mat2 so = pauli(axis_of(o)), sa = pauli(alpha);
    return static_cast<int>(std::lround((so * sa * so * sa).trace().real() / 2.0));
}

double double_integral_plus(const SwitchingFunction& f, const SwitchingFunction& g,
                            const spectra::CorrelationFunction& corr, bool ordered) {
    return pair_integral(
        f, g, [&](double u) { return corr.plus(u); }, corr.resolution(), corr.panel_order(), ordered);
}

double double_integral_minus(const SwitchingFunction& f, const SwitchingFunction& g,
                             const spectra::CorrelationFunction& corr, bool ordered) {
    return pair_integral(
        f, g, [&](double u) { return corr.minus_imag(u); }, corr.resolution(), corr.panel_order(), ordered);
}

IntegralValue integral_time_domain(const SwitchingFunction& y_minus, const SwitchingFunction& y_other,
                                   const spectra::CorrelationFunction& corr, Kind kind) {
    if (kind == Kind::plus) return {Kind::plus, double_integral_plus(y_minus, y_other, corr, false)};
    return {Kind::minus, cplx(0.0, double_integral_minus(y_minus, y_other, corr, true))};
}

double spectral_pair_plus(const SwitchingFunction& f, const SwitchingFunction& g, const spectra::SpectralGrid& grid) {
    require_resolution(grid, span_of(f, g));
    double s = 0.0;
    for (std::size_t i = 0; i < grid.rule.size(); ++i) {
        const double w = grid.rule.x[i];
        s += grid.rule.w[i] * grid.s_plus[i] * std::real(control::filter(f, w) * std::conj(control::filter(g, w)));
    }
    return s / pi;
}

double spectral_pair_minus(const SwitchingFunction& f, const SwitchingFunction& g, const spectra::SpectralGrid& grid) {
    require_resolution(grid, span_of(f, g));
    double s = 0.0;
    for (std::size_t i = 0; i < grid.rule.size(); ++i) {
        const double w = grid.rule.x[i];
        s += grid.rule.w[i] * grid.s_minus[i] * std::imag(control::filter(f, w) * std::conj(control::filter(g, w)));
    }
    return s / pi;
}

IntegralValue integral_freq_domain(const SwitchingFunction& window, const SwitchingFunction& window_prime, double t2,
                                   const spectra::SpectralGrid& grid, Kind kind) {
    const auto first = shifted(window, -window.breakpoints.front());
    const auto second = shifted(window_prime, t2 - window_prime.breakpoints.front());
    if (kind == Kind::plus) return {Kind::plus, spectral_pair_plus(second, first, grid)};
    return {Kind::minus, cplx(0.0, spectral_pair_minus(second, first, grid))};
}

Blocks Blocks::zero(std::size_t n) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
            Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
}

FrequencyBackend::FrequencyBackend(const spectra::SpectrumPair& pair, double t_max)
    : grid_(spectra::make_spectral_grid(pair, t_max, 8, 1.25)) {}

Blocks FrequencyBackend::blocks(std::span<const SwitchingFunction> pieces) const {
    const std::size_t n = pieces.size();
    auto b = Blocks::zero(n);
    if (n == 0) return b;
    require_resolution(grid_, pieces.back().breakpoints.back() - pieces.front().breakpoints.front());
    std::vector<std::vector<cplx>> G;
    G.reserve(n);
    for (const auto& p : pieces) G.push_back(transforms(p, grid_));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double sp = 0.0, sm = 0.0;
            for (std::size_t k = 0; k < grid_.rule.size(); ++k) {
                const cplx z = G[j][k] * std::conj(G[i][k]);
                sp += grid_.rule.w[k] * grid_.s_plus[k] * z.real();
                sm += grid_.rule.w[k] * grid_.s_minus[k] * z.imag();
            }
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            b.plus(ii, jj) = b.plus(jj, ii) = sp / pi;
            if (i != j) {
                b.minus(ii, jj) = sm / pi;
                b.minus(jj, ii) = -sm / pi;
            }
        }
    return b;
}

Blocks TimeBackend::blocks(std::span<const SwitchingFunction> pieces) const {
    const std::size_t n = pieces.size();
    auto b = Blocks::zero(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            b.plus(ii, jj) = b.plus(jj, ii) = double_integral_plus(pieces[j], pieces[i], *corr_);
            if (i != j) {
                const double m = double_integral_minus(pieces[j], pieces[i], *corr_);
                b.minus(ii, jj) = m;
                b.minus(jj, ii) = -m;
            }
        }
    return b;
}

std::vector<SwitchingFunction> interval_pieces(const PulseSchedule& s) {
    const auto y = control::base_switching(s);
    std::vector<SwitchingFunction> out(s.intervals());
    for (std::size_t k = 0; k < s.intervals(); ++k) {
        const double lo = s.boundaries[k], hi = s.boundaries[k + 1];
        auto& p = out[k];
        p.breakpoints.push_back(lo);
        for (std::size_t i = 0; i < y.segments(); ++i) {
            const double a = y.breakpoints[i], bb = y.breakpoints[i + 1];
            if (bb <= lo || a >= hi) continue;
            p.values.push_back(y.values[i]);
            p.breakpoints.push_back(std::min(bb, hi));
        }
    }
    return out;
}

Blocks schedule_blocks(const PulseSchedule& s, const BlockBackend& backend) {
    const auto pieces = interval_pieces(s);
    return backend.blocks(pieces);
}

double plus_exponent(const Blocks& b, std::span<const int> a) {
    double s = 0.0;
    const auto n = static_cast<Eigen::Index>(a.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (a[i] == 0) continue;
        s += b.plus(i, i);
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (a[j] != 0) s += 2.0 * a[i] * a[j] * b.plus(i, j);
    }
    return s;
}

double minus_phase(const Blocks& b, std::span<const int> a, std::span<const int> a_prime) {
    double s = 0.0;
    const auto n = static_cast<Eigen::Index>(a.size());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (a[j] != 0 && a_prime[i] != 0) s += a[j] * a_prime[i] * b.minus(i, j);
    return s;
}

cplx v_value(const Blocks& b, std::span<const int> a, std::span<const int> a_prime) {
    return std::exp(cplx(-plus_exponent(b, a), -2.0 * minus_phase(b, a, a_prime)));
}

namespace {

// Visits every (r, r') term: fn(weight, a, a') with the term equal to weight * v(a, a').
template <class Fn>
void for_each_term(std::size_t n, const State& rho, Observable o, std::span<const double> angles, Fn&& fn) {
    if (angles.size() != n + 1) throw Error("expectation: need one angle per boundary");
    if (rho.sign != 1 && rho.sign != -1) throw Error("expectation: state sign must be +-1");

    const Mat2 rho_m = 0.5 * (Mat2::Identity() + static_cast<double>(rho.sign) * pauli(rho.axis));
    const Mat2 obs = pauli(axis_of(o));
    const cplx tr0 = (rho_m * obs).trace();
    const cplx tr1 = (pauli(Axis::y) * rho_m * obs).trace();
    const double fy = frame_sign(o, Axis::y);

    const unsigned masks = 1u << (n + 1);
    std::vector<double> coef(masks);
    std::vector<std::vector<int>> signs(masks, std::vector<int>(n));
    for (unsigned m = 0; m < masks; ++m) {
        double c = 1.0;
        for (std::size_t j = 0; j <= n; ++j) c *= c_coef(angles[j], (m >> j) & 1u);
        coef[m] = c;
        int acc = 0;
        for (std::size_t k = n; k >= 1; --k) {
            acc += (m >> k) & 1u;
            signs[m][k - 1] = acc % 2 == 0 ? 1 : -1;
        }
    }
    static const cplx ipow[4] = {1.0, cplx(0, 1), -1.0, cplx(0, -1)};
    std::vector<int> a(n), ap(n);
    for (unsigned r = 0; r < masks; ++r) {
        if (std::abs(coef[r]) < 1e-15) continue;
        const int R = std::popcount(r);
        for (unsigned rp = 0; rp < masks; ++rp) {
            const double co = coef[r] * coef[rp];
            if (std::abs(co) < 1e-15) continue;
            const int Rp = std::popcount(rp);
            for (std::size_t k = 0; k < n; ++k) {
                a[k] = (signs[r][k] + signs[rp][k]) / 2;
                ap[k] = (signs[r][k] - signs[rp][k]) / 2;
            }
            const cplx phase = ipow[((R - Rp) % 4 + 4) % 4] * (Rp % 2 == 0 ? 1.0 : fy);
            const cplx tr = (R + Rp) % 2 == 0 ? tr0 : tr1;
            fn(phase * co * tr, std::span<const int>(a), std::span<const int>(ap));
        }
    }
}

}  // namespace

double expectation(const Blocks& b, const State& rho, Observable o, std::span<const double> angles) {
    cplx total = 0.0;
    for_each_term(b.size(), rho, o, angles,
                  [&](cplx w, std::span<const int> a, std::span<const int> ap) { total += w * v_value(b, a, ap); });
    if (std::abs(total.imag()) > 1e-10)
        throw Error("expectation: imaginary residue " + std::to_string(total.imag()));
    return total.real();
}

LabelKey label_key(std::span<const int> a, std::span<const int> a_prime) {
    const std::size_t n = a.size();
    LabelKey k;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) k.plus.push_back(i == j ? a[i] * a[i] : 2 * a[i] * a[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) k.minus.push_back(a[j] * a_prime[i]);
    return k;
}

cplx label_value(const Blocks& b, const LabelKey& k) {
    const auto n = static_cast<Eigen::Index>(b.size());
    double re = 0.0, im = 0.0;
    std::size_t p = 0, m = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) re += k.plus[p++] * b.plus(i, j);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) im += k.minus[m++] * b.minus(i, j);
    return std::exp(cplx(-re, -2.0 * im));
}

std::map<LabelKey, cplx> expectation_terms(std::size_t n, const State& rho, Observable o,
                                           std::span<const double> angles) {
    std::map<LabelKey, cplx> out;
    for_each_term(n, rho, o, angles, [&](cplx w, std::span<const int> a, std::span<const int> ap) {
        out[label_key(a, ap)] += w;
    });
    std::erase_if(out, [](const auto& kv) { return std::abs(kv.second) < 1e-12; });
    return out;
}

double expectation(const ExperimentConfig& cfg, const BlockBackend& backend) {
    const auto viol = control::schedule_validate(cfg.schedule);
    if (!viol.empty()) throw ConfigError("experiment " + cfg.id + ": " + viol.front().what);
    const auto s = control::fold_boundary_pulses(cfg.schedule);
    return expectation(schedule_blocks(s, backend), cfg.rho, cfg.observable, s.angles);
}

std::size_t closed_form_intervals(ClosedForm id) {
    switch (id) {
        case ClosedForm::eqx01: return 1;
        case ClosedForm::eqx27:
        case ClosedForm::adj_x:
        case ClosedForm::adj_y: return 2;
        default: return 3;
    }
}

std::string to_string(ClosedForm id) {
    switch (id) {
        case ClosedForm::eqb4: return "eqb4";
        case ClosedForm::eqx01: return "eqx01";
        case ClosedForm::eqx27: return "eqx27";
        case ClosedForm::calA: return "calA";
        case ClosedForm::calB: return "calB";
        case ClosedForm::eqa6: return "eqa6";
        case ClosedForm::eqb14: return "eqb14";
        case ClosedForm::eqb14a: return "eqb14a";
        case ClosedForm::eqx02: return "eqx02";
        case ClosedForm::eqx03: return "eqx03";
        case ClosedForm::adj_x: return "adj_x";
        case ClosedForm::adj_y: return "adj_y";
    }
    return "?";
}

double closed_form_expectation(ClosedForm id, const Blocks& b, ClosedFormParams p) {
    if (b.size() != closed_form_intervals(id)) throw Error("closed form " + to_string(id) + ": template mismatch");
    const auto& P = b.plus;
    const auto& M = b.minus;
    const double s1 = p.k1 % 2 == 0 ? 1.0 : -1.0, s2 = p.k2 % 2 == 0 ? 1.0 : -1.0;
    switch (id) {
        case ClosedForm::eqb4: {
            const int a[3] = {1, static_cast<int>(s1), static_cast<int>(s1 * s2)};
            return std::exp(-plus_exponent(b, a));
        }
        case ClosedForm::eqx01: return std::exp(-P(0, 0));
        case ClosedForm::eqx27: return std::exp(-P(0, 0) - P(1, 1) - s1 * 2.0 * P(0, 1));
        case ClosedForm::calA:
            return 4.0 * std::exp(-P(0, 0) - P(2, 2)) * std::sinh(2.0 * P(0, 2)) * std::cos(2.0 * M(1, 2));
        case ClosedForm::calB:
            return 2.0 * std::exp(-P(0, 0) - P(2, 2)) * std::cosh(2.0 * P(0, 2)) * std::cos(2.0 * M(1, 2));
        case ClosedForm::eqa6: return std::sinh(2.0 * P(0, 2));
        case ClosedForm::eqb14: return s1 * std::exp(-P(2, 2)) * std::cos(2.0 * M(0, 2) + s1 * 2.0 * M(1, 2));
        case ClosedForm::eqb14a: return s1 * std::exp(-P(2, 2)) * std::sin(2.0 * M(0, 2) + s1 * 2.0 * M(1, 2));
        case ClosedForm::eqx02: return -std::exp(-2.0 * P(2, 2)) * std::sin(4.0 * M(0, 2));
        case ClosedForm::eqx03: return -std::exp(-2.0 * P(2, 2)) * std::cos(4.0 * M(0, 2));
        case ClosedForm::adj_x: return std::exp(-P(1, 1)) * std::cos(2.0 * M(0, 1));
        case ClosedForm::adj_y: return std::exp(-P(1, 1)) * std::sin(2.0 * M(0, 1));
    }
    return 0.0;
}

double generic_form(ClosedForm id, const Blocks& b, ClosedFormParams p) {
    if (b.size() != closed_form_intervals(id)) throw Error("closed form " + to_string(id) + ": template mismatch");
    const double h = pi / 2;
    const State py{Axis::y, 1}, pz{Axis::z, 1}, px{Axis::x, 1}, mx{Axis::x, -1};
    auto E3 = [&](State s, Observable o, double t1, double t2) {
        const double ang[4] = {0.0, t1, t2, 0.0};
        return expectation(b, s, o, ang);
    };
    auto calA = [&] {
        return E3(py, Observable::y, h, h) - E3(py, Observable::y, h, -h) + E3(py, Observable::y, -h, -h) -
               E3(py, Observable::y, -h, h);
    };
    auto calB = [&] { return E3(mx, Observable::x, h, h) + E3(px, Observable::x, -h, h); };
    switch (id) {
        case ClosedForm::eqb4: return E3(py, Observable::y, p.k1 * pi, p.k2 * pi);
        case ClosedForm::eqx01: {
            const double ang[2] = {0.0, 0.0};
            return expectation(b, py, Observable::y, ang);
        }
        case ClosedForm::eqx27: {
            const double ang[3] = {0.0, p.k1 * pi, 0.0};
            return expectation(b, py, Observable::y, ang);
        }
        case ClosedForm::calA: return calA();
        case ClosedForm::calB: return calB();
        case ClosedForm::eqa6: {
            const double A = calA(), B = calB();
            const double sgn = (A / B) < 0.0 ? -1.0 : 1.0;
            return sgn * std::abs(A) / std::sqrt(4.0 * B * B - A * A);
        }
        case ClosedForm::eqb14: return E3(pz, Observable::x, p.k1 * pi, h);
        case ClosedForm::eqb14a: return E3(pz, Observable::y, p.k1 * pi, h);
        case ClosedForm::eqx02:
            return E3(pz, Observable::x, 0, h) * E3(pz, Observable::y, pi, h) +
                   E3(pz, Observable::y, 0, h) * E3(pz, Observable::x, pi, h);
        case ClosedForm::eqx03:
            return E3(pz, Observable::x, 0, h) * E3(pz, Observable::x, pi, h) -
                   E3(pz, Observable::y, 0, h) * E3(pz, Observable::y, pi, h);
        case ClosedForm::adj_x:
        case ClosedForm::adj_y: {
            const double ang[3] = {0.0, h, 0.0};
            return expectation(b, pz, id == ClosedForm::adj_x ? Observable::x : Observable::y, ang);
        }
    }
    return 0.0;
}

double sample_shots(double e, std::optional<std::uint64_t> shots, std::uint64_t seed) {
    if (!shots) return e;
    if (*shots == 0) throw Error("sample_shots: shot count must be positive");
    const double p = std::clamp(0.5 * (1.0 + e), 0.0, 1.0);
    std::mt19937_64 rng(seed);
    std::binomial_distribution<std::uint64_t> dist(*shots, p);
    const auto k = static_cast<double>(dist(rng));
    const auto m = static_cast<double>(*shots);
    return (2.0 * k - m) / m;
}

void write_expectations_csv(std::ostream& out, std::span<const ExpectationRow> rows) {
    out << "config_id,expectation,shots,estimate,seed\n";
    out.precision(15);
    for (const auto& r : rows) {
        out << csv_field(r.config_id) << ',' << r.expectation << ',';
        if (r.shots) out << *r.shots;
        else out << "inf";
        out << ',' << r.estimate << ',' << r.seed << '\n';
    }
}

}  // namespace qnoise::dynamics
