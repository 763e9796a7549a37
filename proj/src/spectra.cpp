#include "qnoise/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "qnoise/parallel.hpp"

namespace qnoise::spectra {

namespace {

double unsigned_value(const SpectrumModel& m, double w) {
    double v = 0.0;
    if (m.dc) v += m.dc->a1 / (1.0 + m.dc->a2 * w);
    for (const auto& b : m.bumps) {
        const double d = w - b.omega0;
        v += b.b / (1.0 + b.c * d * d);
    }
    if (m.white && w >= m.white->threshold) {
        switch (m.white->formula) {
            case FloorFormula::constant: v += m.white->value; break;
            case FloorFormula::root_offset: v += std::abs(std::pow(two_pi * w, 0.25) - m.white->value); break;
        }
    }
    if (m.modulation && w >= m.modulation->threshold)
        v *= std::cos(m.modulation->phase + m.modulation->slope * w);
    return m.scale * v;
}

// Transform of the indicator of [a, b]: int_a^b e^{iwt} dt.
cplx box_transform(double a, double b, double w) {
    const double L = b - a;
    const double x = 0.5 * w * L;
    const double sinc = std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
    return std::polar(L * sinc, 0.5 * w * (a + b));
}

void add_graded(std::vector<double>& pts, double center, double width, double lo, double hi) {
    pts.push_back(center);
    for (int k = -3; k <= 14; ++k) {
        const double d = width * std::ldexp(1.0, k);
        if (center - d > lo) pts.push_back(center - d);
        if (center + d < hi) pts.push_back(center + d);
    }
}

}  // namespace

std::vector<double> SpectrumModel::features() const {
    std::vector<double> pts{0.0, cutoff};
    if (dc && dc->a2 > 0.0) add_graded(pts, 0.0, 1.0 / dc->a2, 0.0, cutoff);
    for (const auto& b : bumps)
        if (b.c > 0.0) add_graded(pts, b.omega0, 1.0 / std::sqrt(b.c), 0.0, cutoff);
    if (white) pts.push_back(white->threshold);
    if (modulation) pts.push_back(modulation->threshold);
    return pts;
}

double eval_spectrum(const SpectrumModel& model, double omega) {
    const double w = std::abs(omega);
    if (w > model.cutoff) return 0.0;
    if (model.parity == Parity::antisymmetric) {
        if (omega == 0.0) return 0.0;
        const double v = unsigned_value(model, w);
        return omega < 0.0 ? -v : v;
    }
    return unsigned_value(model, w);
}

double SpectrumPair::cutoff() const { return std::max(c.cutoff, q.cutoff); }

SpectralGrid make_spectral_grid(const SpectrumPair& pair, double t_max, int order, double refine) {
    const double wco = pair.cutoff();
    auto pts = pair.c.features();
    const auto qf = pair.q.features();
    pts.insert(pts.end(), qf.begin(), qf.end());
    const auto bps = clean_breakpoints(std::move(pts), 0.0, wco);

    double width = wco / 64.0;
    if (t_max > 0.0) width = std::min(width, pi / t_max);
    for (const auto* m : {&pair.c, &pair.q})
        if (m->modulation && m->modulation->slope > 0.0) width = std::min(width, pi / m->modulation->slope / 4.0);
    width /= refine;

    SpectralGrid g;
    g.rule = composite_rule(bps, width, order);
    g.panel_width = width;
    g.order = order;
    g.s_plus.resize(g.rule.size());
    g.s_minus.resize(g.rule.size());
    for (std::size_t i = 0; i < g.rule.size(); ++i) {
        g.s_plus[i] = eval_spectrum(pair.c, g.rule.x[i]);
        g.s_minus[i] = eval_spectrum(pair.q, g.rule.x[i]);
    }
    return g;
}

namespace {

CorrelationValue correlation_on(const SpectralGrid& g, double tau) {
    double cp = 0.0, cm = 0.0;
    for (std::size_t i = 0; i < g.rule.size(); ++i) {
        const double ph = g.rule.x[i] * tau;
        cp += g.rule.w[i] * g.s_plus[i] * std::cos(ph);
        cm += g.rule.w[i] * g.s_minus[i] * std::sin(ph);
    }
    return {cp / pi, cm / pi};
}

double total_weight(const SpectralGrid& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.rule.size(); ++i)
        s += g.rule.w[i] * (std::abs(g.s_plus[i]) + std::abs(g.s_minus[i]));
    return s / pi;
}

}  // namespace

CorrelationValue correlation(const SpectrumPair& pair, double tau) {
    const double t = std::abs(tau);
    auto coarse = make_spectral_grid(pair, t, 8, 1.0);
    auto value = correlation_on(coarse, t);
    const double scale = std::max(total_weight(coarse), std::numeric_limits<double>::min());
    for (double refine : {2.0, 4.0, 8.0}) {
        const auto fine_grid = make_spectral_grid(pair, t, 8, refine);
        const auto fine = correlation_on(fine_grid, t);
        const double diff = std::max(std::abs(fine.c_plus - value.c_plus), std::abs(fine.c_minus_imag - value.c_minus_imag));
        value = fine;
        if (diff <= 1e-9 * scale) {
            if (tau < 0.0) value.c_minus_imag = -value.c_minus_imag;
            return value;
        }
    }
    throw QuadratureError("correlation: frequency quadrature did not converge at tau=" + std::to_string(tau));
}

double CorrelationTable::default_step(const SpectrumPair& pair, double delta) {
    return std::min(delta, pi / (4.0 * pair.cutoff()));
}

CorrelationTable CorrelationTable::build(const SpectrumPair& pair, double tau_max, double step) {
    if (!(step > 0.0) || !(tau_max > 0.0)) throw Error("CorrelationTable: step and tau_max must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(tau_max / step - 1e-9)) + 1;
    CorrelationTable t;
    t.step_ = step;
    t.cp_.assign(n, 0.0);
    t.dcp_.assign(n, 0.0);
    t.cm_.assign(n, 0.0);
    t.dcm_.assign(n, 0.0);

    const auto g = make_spectral_grid(pair, step * static_cast<double>(n - 1), 8, 1.0);
    constexpr std::size_t chunk = 512;
    const std::size_t chunks = (n + chunk - 1) / chunk;
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t k0 = c * chunk, k1 = std::min(n, k0 + chunk);
        for (std::size_t i = 0; i < g.rule.size(); ++i) {
            const double w = g.rule.x[i];
            const double sp = g.rule.w[i] * g.s_plus[i] / pi;
            const double sm = g.rule.w[i] * g.s_minus[i] / pi;
            const cplx rot = std::polar(1.0, w * step);
            cplx z = std::polar(1.0, w * step * static_cast<double>(k0));
            for (std::size_t k = k0; k < k1; ++k) {
                if ((k - k0) % 128 == 0) z = std::polar(1.0, w * step * static_cast<double>(k));
                t.cp_[k] += sp * z.real();
                t.dcp_[k] -= sp * w * z.imag();
                t.cm_[k] += sm * z.imag();
                t.dcm_[k] += sm * w * z.real();
                z *= rot;
            }
        }
    });
    return t;
}

double CorrelationTable::hermite(std::span<const double> f, std::span<const double> df, double tau) const {
    const double u = tau / step_;
    if (u > static_cast<double>(f.size() - 1) * (1.0 + 1e-12) + 1e-9)
        throw QuadratureError("CorrelationTable: tau beyond table range");
    auto k = static_cast<std::size_t>(u);
    if (k >= f.size() - 1) k = f.size() - 2;
    const double s = u - static_cast<double>(k);
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * f[k] + h10 * step_ * df[k] + h01 * f[k + 1] + h11 * step_ * df[k + 1];
}

double CorrelationTable::plus(double tau) const { return hermite(cp_, dcp_, std::abs(tau)); }

double CorrelationTable::minus_imag(double tau) const {
    const double v = hermite(cm_, dcm_, std::abs(tau));
    return tau < 0.0 ? -v : v;
}

void CorrelationTable::write_csv(std::ostream& out) const {
    out << "tau_s,c_plus,c_minus_imag\n";
    out.precision(12);
    for (std::size_t k = 0; k < cp_.size(); ++k)
        out << step_ * static_cast<double>(k) << ',' << cp_[k] << ',' << cm_[k] << '\n';
}

PhysicalityReport check_physicality(const SpectrumPair& pair, std::span<const double> grid, double tol) {
    PhysicalityReport r;
    r.margin = std::numeric_limits<double>::infinity();
    for (double w : grid) {
        const double m = eval_spectrum(pair.c, w) - std::abs(eval_spectrum(pair.q, w));
        if (m < r.margin) {
            r.margin = m;
            r.margin_at = w;
        }
        if (m < -tol) r.violations.push_back(w);
    }
    r.pass = r.violations.empty();
    return r;
}

std::vector<double> physicality_grid(const SpectrumPair& pair, std::size_t points) {
    const double wco = pair.cutoff();
    std::vector<double> g;
    g.reserve(points + 256);
    for (std::size_t i = 0; i < points; ++i) g.push_back(wco * static_cast<double>(i) / static_cast<double>(points - 1));
    auto f = pair.c.features();
    auto fq = pair.q.features();
    g.insert(g.end(), f.begin(), f.end());
    g.insert(g.end(), fq.begin(), fq.end());
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

CorollaryReport corollary_bounds(const SpectrumPair& pair, double T1, double T2, const CorrelationTable* table) {
    if (T1 < 0.0 || T2 < 0.0) throw Error("corollary_bounds: T1, T2 must be non-negative");
    CorollaryReport r;
    const auto g = make_spectral_grid(pair, T1 + T2, 8, 1.0);
    double cross = 0.0, sq = 0.0, c0 = 0.0;
    for (std::size_t i = 0; i < g.rule.size(); ++i) {
        const double w = g.rule.x[i];
        const cplx gi = box_transform(0.0, T1, w);
        const cplx gj = box_transform(T1, T1 + T2, w);
        const cplx g2 = box_transform(0.0, T2, w);
        cross += g.rule.w[i] * g.s_minus[i] * std::imag(gj * std::conj(gi));
        sq += g.rule.w[i] * g.s_plus[i] * (std::norm(gi) + std::norm(g2));
        c0 += g.rule.w[i] * g.s_plus[i];
    }
    r.lhs = 2.0 * std::abs(cross / pi);
    r.rhs = sq / pi;
    r.c_plus0 = c0 / pi;
    r.integral_ok = r.lhs <= r.rhs * (1.0 + 1e-9) + 1e-15;
    if (table) {
        for (std::size_t k = 0; k < table->size(); ++k)
            r.max_abs_c_minus = std::max(r.max_abs_c_minus, std::abs(table->c_minus_imag_at(k)));
        r.pointwise_ok = r.max_abs_c_minus <= table->c_plus_at(0) * (1.0 + 1e-9);
    }
    return r;
}

BathSynthesizer::BathSynthesizer(const SpectrumPair& pair, std::size_t n_modes) {
    if (n_modes < 2) throw Error("synthesize_bath: need at least two modes");
    const std::size_t half = (n_modes + 1) / 2;
    const double wco = pair.cutoff();
    const double dw = wco / static_cast<double>(half);

    std::vector<double> pts = pair.c.features();
    const auto qf = pair.q.features();
    pts.insert(pts.end(), qf.begin(), qf.end());
    for (std::size_t k = 0; k <= half; ++k) pts.push_back(dw * static_cast<double>(k));
    const auto bps = clean_breakpoints(std::move(pts), 0.0, wco);
    const auto rule = composite_rule(bps, dw / 4.0, 8);

    std::vector<double> ip(half, 0.0), im(half, 0.0);
    for (std::size_t i = 0; i < rule.size(); ++i) {
        auto k = static_cast<std::size_t>(rule.x[i] / dw);
        if (k >= half) k = half - 1;
        ip[k] += rule.w[i] * eval_spectrum(pair.c, rule.x[i]);
        im[k] += rule.w[i] * eval_spectrum(pair.q, rule.x[i]);
    }

    const double cm = 1.0 / (2.0 * std::sqrt(two_pi));
    const double cr = 1.0 / (2.0 * std::sqrt(pi));
    auto push = [&](double p, double bp, double bm) {
        const double rest = bp - std::abs(bm);
        if (rest < -1e-12 * std::max(1.0, bp))
            throw PhysicalityError("synthesize_bath: |S-| exceeds S+ near omega=" + std::to_string(p));
        p_.push_back(p);
        bin_plus_.push_back(bp);
        bin_minus_.push_back(bm);
        amp_minus_.push_back((bm < 0.0 ? -1.0 : 1.0) * cm * std::sqrt(std::abs(bm)));
        amp_rest_.push_back(cr * std::sqrt(std::max(rest, 0.0)));
    };
    for (std::size_t k = half; k-- > 0;) push(-(static_cast<double>(k) + 0.5) * dw, ip[k], -im[k]);
    for (std::size_t k = 0; k < half; ++k) push((static_cast<double>(k) + 0.5) * dw, ip[k], im[k]);
}

BathRealization BathSynthesizer::draw(std::uint64_t seed) const {
    BathRealization r;
    r.p_ = p_;
    r.amp_minus_ = amp_minus_;
    r.amp_rest_ = amp_rest_;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    const std::size_t n = p_.size();
    for (auto* v : {&r.a_, &r.b_, &r.c_, &r.d_}) v->resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        r.a_[k] = n01(rng);
        r.b_[k] = n01(rng);
        r.c_[k] = n01(rng);
        r.d_[k] = n01(rng);
    }
    return r;
}

CorrelationValue BathSynthesizer::mode_sum(double tau) const {
    CorrelationValue v;
    for (std::size_t k = 0; k < p_.size(); ++k) {
        v.c_plus += bin_plus_[k] * std::cos(p_[k] * tau);
        v.c_minus_imag += bin_minus_[k] * std::sin(p_[k] * tau);
    }
    v.c_plus /= two_pi;
    v.c_minus_imag /= two_pi;
    return v;
}

BathRealization synthesize_bath(const SpectrumPair& pair, std::size_t n_modes, std::uint64_t seed) {
    return BathSynthesizer(pair, n_modes).draw(seed);
}

double BathRealization::x(double t) const {
    double s = 0.0;
    for (std::size_t k = 0; k < p_.size(); ++k) {
        const double c = std::cos(p_[k] * t), sn = std::sin(p_[k] * t);
        s += amp_minus_[k] * (a_[k] * c + b_[k] * sn) + amp_rest_[k] * (c_[k] * c + d_[k] * sn);
    }
    return s;
}

double BathRealization::y(double t) const {
    double s = 0.0;
    for (std::size_t k = 0; k < p_.size(); ++k) {
        const double c = std::cos(p_[k] * t), sn = std::sin(p_[k] * t);
        s += std::abs(amp_minus_[k]) * (b_[k] * c - a_[k] * sn);
    }
    return s;
}

void BathRealization::correlation_estimate(std::span<const double> taus, std::span<double> c_plus,
                                           std::span<double> c_minus_imag) const {
    std::fill(c_plus.begin(), c_plus.end(), 0.0);
    std::fill(c_minus_imag.begin(), c_minus_imag.end(), 0.0);
    for (std::size_t k = 0; k < p_.size(); ++k) {
        const double al = amp_minus_[k], be = amp_rest_[k], ga = std::abs(al);
        const double x0 = al * a_[k] + be * c_[k];
        const double xs = al * b_[k] + be * d_[k];
        const double u = x0 * x0 + ga * ga * b_[k] * b_[k];
        const double v = x0 * xs - ga * ga * a_[k] * b_[k];
        const double m = ga * (al * (a_[k] * a_[k] + b_[k] * b_[k]) + be * (b_[k] * d_[k] + a_[k] * c_[k]));
        for (std::size_t j = 0; j < taus.size(); ++j) {
            const double ph = p_[k] * taus[j];
            const double c = std::cos(ph), s = std::sin(ph);
            c_plus[j] += 2.0 * (u * c + v * s);
            c_minus_imag[j] += 2.0 * m * s;
        }
    }
}

}  // namespace qnoise::spectra
