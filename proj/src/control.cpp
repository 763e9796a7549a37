#include "qnoise/control.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace qnoise::control {

namespace {

bool is_zero_angle(double theta) {
    const double r = std::remainder(theta, two_pi);
    return std::abs(r) < 1e-12;
}

double time_tol(const PulseSchedule& s) { return 1e-9 * std::max(s.constraints.delta, 1e-12); }

}  // namespace

bool on_grid(double t, double delta) {
    if (!(delta > 0.0)) return true;
    const double u = t / delta;
    return std::abs(u - std::round(u)) < 1e-6;
}

double snap(double t, double delta) { return delta > 0.0 ? std::round(t / delta) * delta : t; }

PulseSchedule PulseSchedule::free(std::vector<double> boundaries, Constraints c) {
    PulseSchedule s;
    s.angles.assign(boundaries.size(), 0.0);
    s.pi_trains.assign(boundaries.empty() ? 0 : boundaries.size() - 1, {});
    s.boundaries = std::move(boundaries);
    s.constraints = c;
    return s;
}

PulseSchedule fold_boundary_pulses(PulseSchedule s) {
    const double tol = time_tol(s);
    for (std::size_t k = 0; k < s.pi_trains.size(); ++k) {
        auto& train = s.pi_trains[k];
        std::vector<double> kept;
        for (double t : train) {
            bool folded = false;
            for (std::size_t j = 0; j < s.boundaries.size(); ++j)
                if (std::abs(t - s.boundaries[j]) <= tol) {
                    s.angles[j] += pi;
                    folded = true;
                    break;
                }
            if (!folded) kept.push_back(t);
        }
        std::sort(kept.begin(), kept.end());
        train = std::move(kept);
    }
    return s;
}

std::vector<Violation> schedule_validate(const PulseSchedule& s) {
    std::vector<Violation> out;
    const auto& c = s.constraints;
    const std::size_t n = s.intervals();
    if (s.boundaries.size() < 2) {
        out.push_back({"schedule needs at least one interval", 0.0});
        return out;
    }
    if (s.angles.size() != n + 1) out.push_back({"angles must have one entry per boundary", 0.0});
    if (s.pi_trains.size() != n) out.push_back({"pi_trains must have one entry per interval", 0.0});
    if (s.boundaries.front() != 0.0) out.push_back({"first boundary must be 0", s.boundaries.front()});
    const double eps = 1e-9 * c.Delta;
    for (std::size_t k = 0; k < s.boundaries.size(); ++k) {
        if (!on_grid(s.boundaries[k], c.delta)) out.push_back({"boundary off the delta grid", s.boundaries[k]});
        if (k > 0) {
            const double len = s.boundaries[k] - s.boundaries[k - 1];
            if (len <= 0.0) out.push_back({"boundaries must increase", s.boundaries[k]});
            else if (len < c.Delta - eps) out.push_back({"interval shorter than Delta", s.boundaries[k - 1]});
        }
    }
    std::vector<double> pulses;
    for (std::size_t k = 0; k < std::min(s.angles.size(), s.boundaries.size()); ++k)
        if (!is_zero_angle(s.angles[k])) pulses.push_back(s.boundaries[k]);
    for (std::size_t k = 0; k < std::min(n, s.pi_trains.size()); ++k)
        for (double t : s.pi_trains[k]) {
            if (!on_grid(t, c.delta)) out.push_back({"pi pulse off the delta grid", t});
            if (t <= s.boundaries[k] || t >= s.boundaries[k + 1]) out.push_back({"pi pulse outside its interval", t});
            pulses.push_back(t);
        }
    std::sort(pulses.begin(), pulses.end());
    for (std::size_t i = 1; i < pulses.size(); ++i)
        if (pulses[i] - pulses[i - 1] < c.Delta - eps) out.push_back({"pulses closer than Delta", pulses[i - 1]});
    return out;
}

int SwitchingFunction::at(double t) const {
    if (values.empty()) return 0;
    auto it = std::upper_bound(breakpoints.begin() + 1, breakpoints.end() - 1, t);
    return values[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
}

SwitchingFunction base_switching(const PulseSchedule& s) {
    SwitchingFunction y;
    if (s.boundaries.size() < 2) return y;
    y.breakpoints.push_back(s.boundaries.front());
    int sign = 1;
    for (std::size_t k = 0; k < s.intervals(); ++k) {
        if (k < s.pi_trains.size())
            for (double t : s.pi_trains[k]) {
                y.values.push_back(sign);
                y.breakpoints.push_back(t);
                sign = -sign;
            }
        y.values.push_back(sign);
        y.breakpoints.push_back(s.boundaries[k + 1]);
    }
    return y;
}

namespace {

// Signs (-1)^{r_k + ... + r_N} for k = 1..N.
std::vector<int> interval_signs(std::span<const int> r, std::size_t n) {
    if (r.size() != n + 1) throw Error("toggling bits must have one entry per boundary");
    std::vector<int> out(n);
    int acc = 0;
    for (std::size_t k = n; k >= 1; --k) {
        acc += r[k];
        out[k - 1] = (acc % 2 == 0) ? 1 : -1;
    }
    return out;
}

std::size_t interval_of(const PulseSchedule& s, double mid) {
    auto it = std::upper_bound(s.boundaries.begin() + 1, s.boundaries.end() - 1, mid);
    return static_cast<std::size_t>(it - s.boundaries.begin()) - 1;
}

}  // namespace

SwitchingFunction toggling_switch(const PulseSchedule& s, std::span<const int> r) {
    const auto signs = interval_signs(r, s.intervals());
    auto y = base_switching(s);
    for (std::size_t i = 0; i < y.segments(); ++i) {
        const double mid = 0.5 * (y.breakpoints[i] + y.breakpoints[i + 1]);
        y.values[i] *= signs[interval_of(s, mid)];
    }
    return y;
}

EffectiveSwitching effective_switchings(const PulseSchedule& s, std::span<const int> r, std::span<const int> rp,
                                        int f_z) {
    if (f_z != 1 && f_z != -1) throw Error("f_z must be +1 or -1");
    const std::size_t n = s.intervals();
    const auto sr = interval_signs(r, n);
    const auto srp = interval_signs(rp, n);
    EffectiveSwitching es;
    es.a.resize(n);
    es.a_prime.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        // Y- carries (s_r - f_z s_r')/2, Y+ carries (s_r + f_z s_r')/2.
        es.a[k] = (sr[k] - f_z * srp[k]) / 2;
        es.a_prime[k] = (sr[k] + f_z * srp[k]) / 2;
    }
    const auto y = base_switching(s);
    es.breakpoints = y.breakpoints;
    for (std::size_t i = 0; i < y.segments(); ++i) {
        const double mid = 0.5 * (y.breakpoints[i] + y.breakpoints[i + 1]);
        const std::size_t k = interval_of(s, mid);
        es.y_minus.push_back(es.a[k] * y.values[i]);
        es.y_plus.push_back(es.a_prime[k] * y.values[i]);
    }
    return es;
}

CanonicalConfig canonical_config(std::span<const int> a, std::span<const int> a_prime) {
    if (a.size() != a_prime.size()) throw Error("canonical_config: label size mismatch");
    CanonicalConfig c;
    c.a.resize(a.size());
    c.a_prime.resize(a.size());
    c.gauge.resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        const int v = a[k] != 0 ? a[k] : a_prime[k];
        c.gauge[k] = v < 0 ? -1 : 1;
        c.a[k] = a[k] != 0 ? 1 : 0;
        c.a_prime[k] = a_prime[k] != 0 ? 1 : 0;
    }
    return c;
}

CanonicalConfig canonical_config(const EffectiveSwitching& es) { return canonical_config(es.a, es.a_prime); }

std::vector<double> cpmg_sequence(int n, double t1, const Constraints& c) {
    if (n < 0) throw Error("cpmg_sequence: n must be non-negative");
    const double tau = t1 / (2.0 * (n + 1));
    std::vector<double> times;
    for (int j = 0; j <= n; ++j) {
        const double t = (2.0 * j + 1.0) * tau;
        const double snapped = snap(t, c.delta);
        if (std::abs(snapped - t) > 0.5 * c.delta * (1.0 + 1e-9))
            throw InfeasibleError("cpmg_sequence: pulse cannot be placed on the delta grid");
        times.push_back(snapped);
    }
    if (n % 2 == 0) times.push_back(t1);
    const double eps = 1e-9 * c.Delta;
    double prev = 0.0;
    for (double t : times) {
        if (t - prev < c.Delta - eps)
            throw InfeasibleError("cpmg_sequence: " + std::to_string(n) + "-CPMG needs t1 >= 2 Delta (n+1)");
        prev = t;
    }
    if (n % 2 == 1 && t1 - times.back() < c.Delta - eps)
        throw InfeasibleError("cpmg_sequence: last pulse closer than Delta to the window end");
    return times;
}

SwitchingFunction window_switching(double start, double t1, std::span<const double> pi_times) {
    SwitchingFunction y;
    y.breakpoints.push_back(start);
    int sign = 1;
    for (double t : pi_times) {
        if (t <= 0.0 || t >= t1) continue;  // boundary pulses do not change y inside the window
        y.values.push_back(sign);
        y.breakpoints.push_back(start + t);
        sign = -sign;
    }
    y.values.push_back(sign);
    y.breakpoints.push_back(start + t1);
    return y;
}

cplx segment_transform(double a, double b, double w) {
    const double L = b - a;
    const double x = 0.5 * w * L;
    const double sinc = std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
    return std::polar(L * sinc, 0.5 * w * (a + b));
}

cplx filter(const SwitchingFunction& sw, double w) {
    cplx f = 0.0;
    for (std::size_t i = 0; i < sw.segments(); ++i)
        if (sw.values[i] != 0)
            f += static_cast<double>(sw.values[i]) * segment_transform(sw.breakpoints[i], sw.breakpoints[i + 1], w);
    return f;
}

void write_filter_csv(std::ostream& out, const SwitchingFunction& sw, std::span<const double> omegas) {
    out << "omega_rad_s,re_F,im_F,abs2_F\n";
    out.precision(12);
    for (double w : omegas) {
        const cplx f = filter(sw, w);
        out << w << ',' << f.real() << ',' << f.imag() << ',' << std::norm(f) << '\n';
    }
}

std::optional<Band> mfs(const std::function<double(double)>& g, double alpha, double beta, double w_max,
                        std::size_t samples, bool minimal) {
    if (!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0)) throw Error("mfs: alpha and beta must lie in (0,1)");
    if (samples < 16) samples = 16;
    const double h = w_max / static_cast<double>(samples - 1);
    std::vector<double> v(samples);
    for (std::size_t i = 0; i < samples; ++i) v[i] = std::abs(g(h * static_cast<double>(i)));
    const auto peak_it = std::max_element(v.begin(), v.end());
    const double peak = *peak_it;
    if (!(peak > 0.0)) return std::nullopt;
    const double floor = beta * peak;
    auto lo = static_cast<std::size_t>(peak_it - v.begin()), hi = lo;
    while (lo > 0 && v[lo - 1] >= floor) --lo;
    while (hi + 1 < samples && v[hi + 1] >= floor) ++hi;

    // Crossing points refined by bisection on the continuous function.
    auto edge = [&](double inside, double outside) {
        for (int it = 0; it < 60; ++it) {
            const double m = 0.5 * (inside + outside);
            (std::abs(g(m)) >= floor ? inside : outside) = m;
        }
        return inside;
    };
    const double a = lo == 0 ? 0.0 : edge(h * static_cast<double>(lo), h * static_cast<double>(lo - 1));
    const double b = hi + 1 == samples ? w_max : edge(h * static_cast<double>(hi), h * static_cast<double>(hi + 1));

    auto trapezoid = [&](std::size_t i0, std::size_t i1) {
        double s = 0.0;
        for (std::size_t i = i0; i < i1; ++i) s += 0.5 * (v[i] + v[i + 1]) * h;
        return s;
    };
    double total = trapezoid(0, samples - 1);
    // 1/w^2 tail beyond the grid
    double c2 = 0.0;
    const std::size_t tail0 = samples - samples / 10;
    for (std::size_t i = tail0; i < samples; ++i) c2 += v[i] * std::pow(h * static_cast<double>(i), 2);
    c2 /= static_cast<double>(samples - tail0);
    total += c2 / w_max;
    const double inside = trapezoid(lo, hi);
    if (inside < alpha * total) return std::nullopt;
    if (!minimal) return Band{a, b};

    // Two-pointer scan for the narrowest window with the required weight.
    const double need = alpha * total;
    std::size_t best_i = lo, best_j = hi, j = lo;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        while (j < hi && acc < need) {
            acc += 0.5 * (v[j] + v[j + 1]) * h;
            ++j;
        }
        if (acc < need) break;
        if (j - i < best_j - best_i) {
            best_i = i;
            best_j = j;
        }
        acc -= 0.5 * (v[i] + v[i + 1]) * h;
    }
    return Band{best_i == lo ? a : h * static_cast<double>(best_i), best_j == hi ? b : h * static_cast<double>(best_j)};
}

std::function<double(double)> filter_product_weight(SwitchingFunction f, SwitchingFunction fp, bool imaginary) {
    return [f = std::move(f), fp = std::move(fp), imaginary](double w) {
        const cplx p = filter(f, w) * std::conj(filter(fp, w));
        return std::abs(imaginary ? p.imag() : p.real());
    };
}

}  // namespace qnoise::control
