#include "qnoise/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "qnoise/parallel.hpp"

namespace qnoise::reconstruction {

using inference::ExperimentRunner;
using inference::IntegralEstimate;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

long long ticks(double t, double delta) { return std::llround(t / delta); }

double filter_power(const control::SwitchingFunction& sw, double w) { return std::norm(control::filter(sw, w)); }

// First w > from where |F|^2 has a local minimum that is numerically zero, or +inf.
double first_zero_beyond(const control::SwitchingFunction& sw, double from, double peak, double limit) {
    const double h = from / 4000.0;
    double prev2 = filter_power(sw, from), prev = filter_power(sw, from + h);
    for (double w = from + 2.0 * h; w <= limit; w += h) {
        const double cur = filter_power(sw, w);
        if (prev <= prev2 && prev <= cur && prev <= 1e-6 * peak) {
            // Golden refinement of the minimum on [w - 2h, w].
            double a = w - 2.0 * h, b = w;
            for (int it = 0; it < 80; ++it) {
                const double m1 = a + 0.382 * (b - a), m2 = a + 0.618 * (b - a);
                if (filter_power(sw, m1) < filter_power(sw, m2))
                    b = m2;
                else
                    a = m1;
            }
            return 0.5 * (a + b);
        }
        prev2 = prev;
        prev = cur;
    }
    return std::numeric_limits<double>::infinity();
}

struct Sample {
    double value = nan;
    double variance = 0.0;
    double s = 0.0;
    double c = 1.0;
    int branch = 0;
    bool ok = false;
};

Sample to_sample(const IntegralEstimate& e) {
    Sample out;
    if (e.ill_conditioned || !std::isfinite(e.value)) return out;
    out.ok = true;
    out.value = e.value;
    out.variance = e.variance;
    if (e.kind == Kind::minus) {
        double s = std::sin(4.0 * e.value), c = std::cos(4.0 * e.value);
        if (e.phase) {
            const double r = std::hypot(e.phase->s, e.phase->c);
            if (r > 0.0) s = e.phase->s / r, c = e.phase->c / r;
        }
        out.s = s;
        out.c = c;
    }
    return out;
}

// Linear fill of missing entries; returns true when some gap was not isolated.
bool fill_missing(std::vector<double>& v, std::vector<double>& var, const std::vector<bool>& missing) {
    const std::size_t n = v.size();
    bool degraded = false;
    std::vector<std::size_t> good;
    for (std::size_t i = 0; i < n; ++i)
        if (!missing[i]) good.push_back(i);
    if (good.empty()) throw EstimationError("collect_traces: every sample is ill-conditioned");
    for (std::size_t i = 0; i < n; ++i) {
        if (!missing[i]) continue;
        const bool isolated = i > 0 && i + 1 < n && !missing[i - 1] && !missing[i + 1];
        degraded = degraded || !isolated;
        const auto hi = std::lower_bound(good.begin(), good.end(), i);
        if (hi == good.begin()) {
            v[i] = v[*hi];
            var[i] = var[*hi];
        } else if (hi == good.end()) {
            v[i] = v[good.back()];
            var[i] = var[good.back()];
        } else {
            const std::size_t a = *(hi - 1), b = *hi;
            const double t = double(i - a) / double(b - a);
            v[i] = (1.0 - t) * v[a] + t * v[b];
            var[i] = (1.0 - t) * var[a] + t * var[b];
        }
    }
    return degraded;
}

bool inside(const Band& b, double w) { return w >= b.lo && w <= b.hi; }

// Windows [0, t1] and [t2, t2 + t1] as intervals 1 and 3 of an N = 3 schedule, every
// configuration measured, block 13 read off the Q algebra.
Sample q_algebra_sample(ExperimentRunner& run, const control::SwitchingFunction& w, double t2, Kind kind,
                        double divisor_floor) {
    const double t1 = w.breakpoints.back();
    const auto flips = inference::flip_times(w);
    auto s = control::PulseSchedule::free({0.0, t1, t2, t2 + t1}, run.constraints());
    s.pi_trains[0] = flips;
    for (double t : flips) s.pi_trains[2].push_back(t2 + t);
    inference::ExpectationSet e;
    for (const auto& q : inference::q_configs()) {
        auto sc = s;
        const auto a = q.angles();
        sc.angles.assign(a.begin(), a.end());
        e[q.label()] = run.measure(sc, q.rho, q.o).value;
    }
    const auto qs = inference::extract_q_quantities(e);
    const auto plus = inference::infer_plus_integrals(qs);
    // y at the start of interval 3 relative to the window's own leading sign.
    const double sign = flips.size() % 2 == 0 ? 1.0 : -1.0;
    auto pick = [](const std::vector<IntegralEstimate>& v, const char* label) {
        for (const auto& x : v)
            if (x.label == label) return x;
        throw Error(std::string("q algebra: missing ") + label);
    };
    auto est = kind == Kind::plus ? pick(plus, "P13")
                                  : pick(inference::infer_minus_integrals(qs, plus, divisor_floor), "M13");
    est.value *= sign;
    if (est.phase) est.phase->s *= sign;
    return to_sample(est);
}

}  // namespace

// ---------------------------------------------------------------------------------------
// windows and plans

std::vector<double> WindowSpec::pulses(const control::Constraints& c) const {
    if (!(t1 > 0.0)) throw ConfigError("window: t1 must be positive");
    if (kind == SequenceKind::free) return {};
    const int order = kind == SequenceKind::hahn ? 0 : n;
    auto times = control::cpmg_sequence(order, control::snap(t1, c.delta), c);
    std::erase_if(times, [&](double t) { return t >= control::snap(t1, c.delta) - 1e-6 * c.delta; });
    return times;
}

control::SwitchingFunction WindowSpec::switching(const control::Constraints& c) const {
    const auto p = pulses(c);
    return control::window_switching(0.0, control::snap(t1, c.delta), p);
}

std::string WindowSpec::name() const {
    std::ostringstream os;
    os.precision(6);
    switch (kind) {
        case SequenceKind::free: os << "free"; break;
        case SequenceKind::hahn: os << "hahn"; break;
        case SequenceKind::cpmg: os << "cpmg" << n; break;
    }
    os << '-' << t1 * 1e6 << "us";
    return os.str();
}

std::optional<Band> window_mfs(const WindowSpec& w, const control::Constraints& c, double alpha, double beta) {
    const auto sw = w.switching(c);
    const double w_max = 40.0 * pi / control::snap(w.t1, c.delta);
    return control::mfs([&](double x) { return filter_power(sw, x); }, alpha, beta, w_max, 40000, true);
}

std::vector<std::string> plan_violations(const SamplingPlan& p) {
    std::vector<std::string> out;
    const double d = p.constraints.delta;
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(6);
        os << x;
        return os.str();
    };
    if (p.K < 1) out.push_back("K must be at least 1");
    if (p.Ts < d * (1.0 - 1e-9)) out.push_back("Ts below the timing resolution");
    if (!control::on_grid(p.Ts, d)) out.push_back("Ts off the delta grid");
    const double nyquist = two_pi / (p.omega_c + p.target.hi);
    if (!(p.Ts < nyquist)) out.push_back("aliasing rule: Ts = " + num(p.Ts) + " s must stay below " + num(nyquist) + " s");
    if (!p.dc_plan && p.K >= 1) {
        const double res = two_pi / (p.Ts * (2.0 * p.K + 1.0));
        if (res > p.target.lo / p.gamma)
            out.push_back("resolution rule: 2pi/(Ts(2K+1)) = " + num(res) + " rad/s exceeds wa/gamma = " +
                          num(p.target.lo / p.gamma) + " rad/s");
    }
    return out;
}

SamplingPlan plan_sampling(const WindowSpec& window, std::optional<Band> target, const control::Constraints& c,
                           const PlanOptions& opt) {
    const auto band = window_mfs(window, c, opt.alpha, opt.beta);
    if (!band) throw InfeasibleError("plan_sampling: the window has no main frequency support");
    const Band tgt = target.value_or(*band);
    const double tol = 1e-6 * band->hi;
    if (tgt.lo <= tol && window.kind != SequenceKind::free)
        throw InfeasibleError("plan_sampling: a DC target needs a free-evolution window (F(0) = 0 otherwise)");
    if (tgt.lo < band->lo - tol || tgt.hi > band->hi + tol || !(tgt.hi > tgt.lo))
        throw InfeasibleError("plan_sampling: target lies outside the filter MFS");

    SamplingPlan p;
    p.window = window;
    p.target = tgt;
    p.gamma = opt.gamma;
    p.shots = opt.shots;
    p.constraints = c;
    p.dc_plan = tgt.lo <= tol;
    p.id = opt.id.empty() ? window.name() : opt.id;

    const auto sw = window.switching(c);
    const double peak = std::pow(control::snap(window.t1, c.delta), 2);
    const double multiple = opt.omega_c_multiple * tgt.hi;
    p.omega_c = std::min(multiple, first_zero_beyond(sw, tgt.hi, peak, multiple));
    if (opt.spectral_cutoff > 0.0) p.omega_c = std::min(p.omega_c, opt.spectral_cutoff);

    if (opt.Ts) {
        p.Ts = control::snap(*opt.Ts, c.delta);
    } else {
        const double limit = two_pi / (p.omega_c + tgt.hi);
        p.Ts = std::floor(0.95 * limit / c.delta) * c.delta;
    }
    if (p.Ts < c.delta * (1.0 - 1e-9))
        throw InfeasibleError("plan_sampling: required Ts is below the timing resolution delta");
    if (opt.K) {
        p.K = *opt.K;
    } else {
        const double lo = p.dc_plan ? tgt.hi : tgt.lo;
        p.K = std::max(1, static_cast<int>(std::ceil(0.5 * (two_pi * p.gamma / (lo * p.Ts) - 1.0))));
    }
    const auto v = plan_violations(p);
    if (!v.empty()) {
        std::string msg = "plan_sampling(" + p.id + "):";
        for (const auto& s : v) msg += " " + s + ";";
        throw InfeasibleError(msg);
    }
    return p;
}

// ---------------------------------------------------------------------------------------
// traces

TimeTraceSet collect_traces(const SamplingPlan& plan, ExperimentRunner& run, Kind kind, const PipelineOptions& opt) {
    const auto& c = run.constraints();
    const auto w = plan.window.switching(c);
    const double t1 = w.breakpoints.back();
    const long long t1_ticks = ticks(t1, c.delta);
    const long long Delta_ticks = std::max<long long>(1, std::llround(c.Delta / c.delta));

    auto sample = [&](long long kt) -> Sample {
        const double t2 = kt * c.delta;
        if (kt < t1_ticks)
            return to_sample(inference::deadtime_compose(inference::deadtime_pieces(run, w, t2, kind, opt.block)));
        const long long gap = kt - t1_ticks;
        if (gap > 0 && gap < Delta_ticks) return {};
        if (opt.pipeline == Pipeline::q_algebra && gap > 0)
            return q_algebra_sample(run, w, t2, kind, opt.block.divisor_floor);
        auto later = w;
        for (auto& b : later.breakpoints) b += t2;
        return to_sample(inference::measure_block(run, w, later, kind, opt.block));
    };

    const std::size_t n = static_cast<std::size_t>(plan.K) + 1;
    const long long step = ticks(plan.Ts, c.delta);
    TimeTraceSet out;
    out.plan_id = plan.id;
    out.kind = kind;
    out.Ts = step * c.delta;
    out.t2.resize(n);
    out.value.assign(n, 0.0);
    out.variance.assign(n, 0.0);
    out.branch.assign(n, 0);
    out.missing.assign(n, false);
    for (std::size_t k = 0; k < n; ++k) out.t2[k] = double(k * step) * c.delta;

    // Sample times in ticks: the k grid, refined for branch tracking when needed.
    std::vector<long long> grid;
    for (std::size_t k = 0; k < n; ++k) grid.push_back(static_cast<long long>(k) * step);
    bool track = false;
    if (kind == Kind::minus) {
        if (!opt.s_plus_estimate) throw ConfigError("collect_traces: minus traces need an S+ estimate");
        const double w_max = opt.w_max > 0.0 ? opt.w_max : 40.0 * pi / t1;
        const auto bound = inference::safe_zone_bound(opt.s_plus_estimate, w, w, w_max);
        track = 4.0 * bound.bound >= pi;
        if (track) {
            const long long last = grid.back();
            double eps = inference::tracking_step(bound, 4, out.Ts, c.delta);
            long long e = std::max<long long>(1, ticks(eps, c.delta));
            if (static_cast<std::size_t>(last / e) + n > opt.max_tracking_samples) {
                e = std::max<long long>(1, (last + static_cast<long long>(opt.max_tracking_samples) - 1) /
                                               static_cast<long long>(opt.max_tracking_samples));
                out.tracking_unverified = true;
            }
            for (long long t = e; t < last; t += e) grid.push_back(t);
            std::sort(grid.begin(), grid.end());
            grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        }
    }
    out.tracked_samples = grid.size();

    std::vector<Sample> samples(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) { samples[i] = sample(grid[i]); });

    std::map<long long, std::size_t> index;
    for (std::size_t i = 0; i < grid.size(); ++i) index[grid[i]] = i;

    if (track) {
        std::vector<double> s, cc;
        std::vector<std::size_t> where;
        double noise = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!samples[i].ok) continue;
            s.push_back(samples[i].s);
            cc.push_back(samples[i].c);
            where.push_back(i);
            noise = std::max(noise, 12.0 * std::sqrt(samples[i].variance));
        }
        inference::SafeZoneState zone;
        const auto br = inference::resolve_branch(s, cc, zone, noise);
        for (std::size_t j = 0; j < where.size(); ++j) {
            samples[where[j]].value = br.phi[j] / 4.0;
            samples[where[j]].branch = br.k[j];
        }
        if (!br.gaps.empty()) out.tracking_unverified = true;
    }

    for (std::size_t k = 0; k < n; ++k) {
        const auto& smp = samples[index.at(static_cast<long long>(k) * step)];
        out.missing[k] = !smp.ok;
        if (!smp.ok) continue;
        out.value[k] = smp.value;
        out.variance[k] = smp.variance;
        out.branch[k] = smp.branch;
    }
    out.degraded = fill_missing(out.value, out.variance, out.missing);
    return out;
}

// ---------------------------------------------------------------------------------------
// inversion

SpectrumEstimate dtft_reconstruct(const TimeTraceSet& traces, const SamplingPlan& plan, std::span<const double> omega,
                                  double floor) {
    const auto sw = plan.window.switching(plan.constraints);
    const std::size_t n = traces.value.size();
    const std::size_t m = omega.size();
    SpectrumEstimate est;
    est.kind = traces.kind;
    est.omega.assign(omega.begin(), omega.end());
    est.value.assign(m, nan);
    est.variance.assign(m, 0.0);
    est.error_bound.assign(m, 0.0);
    est.valid.assign(m, false);
    est.mfs.assign(m, false);
    est.plan_id.assign(m, plan.id);

    std::vector<double> F2(m);
    for (std::size_t i = 0; i < m; ++i) F2[i] = filter_power(sw, omega[i]);
    const double top = m ? *std::max_element(F2.begin(), F2.end()) : 0.0;
    const bool plus = traces.kind == Kind::plus;
    const double Ts = traces.Ts;

    parallel_for(m, [&](std::size_t i) {
        if (!(F2[i] >= floor * top) || F2[i] <= 0.0) return;
        const double w = std::abs(omega[i]);
        double acc = 0.0, var = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double weight = k == 0 ? 1.0 : 2.0;
            const double basis = plus ? std::cos(w * k * Ts) : std::sin(w * k * Ts);
            acc += weight * traces.value[k] * basis;
            var += weight * weight * traces.variance[k] * basis * basis;
        }
        const double scale = Ts / F2[i];
        double v = scale * acc;
        if (!plus && omega[i] < 0.0) v = -v;
        est.value[i] = v;
        est.variance[i] = scale * scale * var;
        est.valid[i] = true;
        est.mfs[i] = inside(plan.target, w);
    });
    if (std::none_of(est.valid.begin(), est.valid.end(), [](bool b) { return b; }))
        throw EstimationError("dtft_reconstruct: every frequency is masked for plan " + plan.id);
    return est;
}

StitchResult stitch_regions(std::span<const SpectrumEstimate> parts, std::optional<Band> target) {
    if (parts.empty()) throw ConfigError("stitch_regions: nothing to stitch");
    const auto& grid = parts.front().omega;
    for (const auto& p : parts)
        if (p.omega != grid || p.kind != parts.front().kind)
            throw ConfigError("stitch_regions: estimates must share one frequency grid and kind");
    const std::size_t m = grid.size();
    StitchResult r;
    auto& e = r.estimate;
    e.kind = parts.front().kind;
    e.omega = grid;
    e.value.assign(m, nan);
    e.variance.assign(m, 0.0);
    e.error_bound.assign(m, 0.0);
    e.valid.assign(m, false);
    e.mfs.assign(m, false);
    e.plan_id.assign(m, "");

    for (std::size_t i = 0; i < m; ++i) {
        std::vector<const SpectrumEstimate*> use;
        for (const auto& p : parts)
            if (p.valid[i] && p.mfs[i]) use.push_back(&p);
        if (use.empty()) continue;
        // Inverse-variance weights, falling back to the error bounds, then to equal weights.
        auto spread = [&](const SpectrumEstimate* p) { return p->variance[i] + p->error_bound[i] * p->error_bound[i]; };
        const bool weighted = std::all_of(use.begin(), use.end(), [&](auto* p) { return spread(p) > 0.0; });
        double wsum = 0.0, acc = 0.0, eb = 0.0, var = 0.0;
        std::string ids;
        for (const auto* p : use) {
            const double wt = weighted ? 1.0 / spread(p) : 1.0;
            wsum += wt;
            acc += wt * p->value[i];
            eb += wt * p->error_bound[i];
            var += wt * wt * p->variance[i];
            if (!ids.empty()) ids += '+';
            ids += p->plan_id[i];
        }
        e.value[i] = acc / wsum;
        e.error_bound[i] = eb / wsum;
        e.variance[i] = var / (wsum * wsum);
        e.valid[i] = e.mfs[i] = true;
        e.plan_id[i] = ids;
    }

    // Gaps: runs of uncovered grid points inside the target (or between the covered extremes).
    Band span;
    if (target) {
        span = *target;
    } else {
        bool any = false;
        for (std::size_t i = 0; i < m; ++i)
            if (e.valid[i]) {
                span.lo = any ? std::min(span.lo, grid[i]) : grid[i];
                span.hi = any ? std::max(span.hi, grid[i]) : grid[i];
                any = true;
            }
        if (!any) return r;
    }
    std::optional<Band> open;
    double last_covered = span.lo;
    for (std::size_t i = 0; i < m; ++i) {
        if (!inside(span, grid[i])) continue;
        if (e.valid[i]) {
            if (open) {
                open->hi = grid[i];
                r.gaps.push_back(*open);
                open.reset();
            }
            last_covered = grid[i];
        } else if (!open) {
            open = Band{last_covered, span.hi};
        }
    }
    if (open) r.gaps.push_back(*open);
    return r;
}

// ---------------------------------------------------------------------------------------
// error bounds

namespace {

// Sum of |I_k| beyond K from a geometric fit of the trace's last quarter.
double tail_estimate(const TimeTraceSet& t) {
    const std::size_t n = t.value.size();
    if (n < 5) return 0.0;
    const std::size_t start = std::max<std::size_t>(1, n - std::max<std::size_t>(4, n / 4));
    double sx = 0, sy = 0, sxx = 0, sxy = 0, mean_abs = 0;
    std::size_t cnt = 0;
    for (std::size_t k = start; k < n; ++k) {
        const double y = std::log(std::abs(t.value[k]) + 1e-300);
        const double x = double(k);
        sx += x, sy += y, sxx += x * x, sxy += x * y;
        mean_abs += std::abs(t.value[k]);
        ++cnt;
    }
    mean_abs /= double(cnt);
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    const double K = double(n - 1);
    if (!(slope < -1e-9)) return mean_abs * K;  // no visible decay
    const double intercept = (sy - slope * sx) / double(cnt);
    const double r = std::exp(slope);
    return std::exp(intercept + slope * (K + 1.0)) / (1.0 - r);
}

double alias_sum(const control::SwitchingFunction& sw, double w, double w2, const std::function<double(double)>& s_hat,
                 double w_max, bool absolute) {
    double acc = 0.0;
    const int mmax = static_cast<int>(std::ceil((w_max + std::abs(w)) / w2)) + 1;
    for (int j = -mmax; j <= mmax; ++j) {
        if (j == 0) continue;
        const double x = w - j * w2;
        if (std::abs(x) > w_max) continue;
        const double s = s_hat(x);
        acc += filter_power(sw, x) * (absolute ? std::abs(s) : s);
    }
    return acc;
}

}  // namespace

ErrorTerms error_bounds(const SamplingPlan& plan, const TimeTraceSet& traces, const SpectrumEstimate& est,
                        const std::function<double(double)>& s_hat, double w_max) {
    const auto sw = plan.window.switching(plan.constraints);
    const std::size_t m = est.omega.size();
    ErrorTerms t;
    t.finite_k.assign(m, 0.0);
    t.aliasing.assign(m, 0.0);
    t.trace.assign(m, 0.0);
    t.total.assign(m, 0.0);
    const double Ts = traces.Ts;
    const double w2 = two_pi / Ts;
    const double tail = tail_estimate(traces);
    double sigma_sum = 0.0;
    for (std::size_t k = 0; k < traces.variance.size(); ++k)
        sigma_sum += (k == 0 ? 1.0 : 2.0) * std::sqrt(std::max(0.0, traces.variance[k]));
    parallel_for(m, [&](std::size_t i) {
        if (!est.valid[i]) return;
        const double F2 = filter_power(sw, est.omega[i]);
        if (!(F2 > 0.0)) return;
        t.finite_k[i] = 2.0 * Ts * tail / F2;
        t.aliasing[i] = alias_sum(sw, est.omega[i], w2, s_hat, w_max, true) / F2;
        t.trace[i] = Ts * sigma_sum / F2;
        t.total[i] = t.finite_k[i] + t.aliasing[i] + t.trace[i];
    });
    return t;
}

void apply_error_bounds(SpectrumEstimate& est, const ErrorTerms& terms) {
    if (terms.total.size() != est.omega.size()) throw Error("apply_error_bounds: size mismatch");
    est.error_bound = terms.total;
}

SpectrumEstimate mitigate_aliasing(const SpectrumEstimate& est, const SamplingPlan& plan,
                                   const std::function<double(double)>& s_hat, double w_max) {
    const auto sw = plan.window.switching(plan.constraints);
    // Trace sampling period as planned (already on the grid).
    const double w2 = two_pi / plan.Ts;
    SpectrumEstimate out = est;
    for (std::size_t i = 0; i < est.omega.size(); ++i) {
        if (!est.valid[i]) continue;
        const double F2 = filter_power(sw, est.omega[i]);
        out.value[i] -= alias_sum(sw, est.omega[i], w2, s_hat, w_max, false) / F2;
    }
    return out;
}

std::function<double(double)> interpolant(const SpectrumEstimate& est) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < est.omega.size(); ++i)
        if (est.valid[i] && std::isfinite(est.value[i]) && est.omega[i] >= 0.0)
            pts.emplace_back(est.omega[i], est.value[i]);
    std::sort(pts.begin(), pts.end());
    if (pts.empty()) throw EstimationError("interpolant: no valid points");
    const bool odd = est.kind == Kind::minus;
    return [pts = std::move(pts), odd](double w) {
        const double sign = (odd && w < 0.0) ? -1.0 : 1.0;
        const double x = std::abs(w);
        if (x <= pts.front().first) return sign * pts.front().second;
        if (x >= pts.back().first) return sign * pts.back().second;
        const auto hi = std::lower_bound(pts.begin(), pts.end(), std::pair{x, -std::numeric_limits<double>::infinity()});
        const auto lo = hi - 1;
        const double t = (x - lo->first) / (hi->first - lo->first);
        return sign * ((1.0 - t) * lo->second + t * hi->second);
    };
}

void write_spectrum_csv(std::ostream& out, const SpectrumEstimate& est) {
    out << "omega_rad_s,s_hat,error_bound,mfs_flag,plan_id\n";
    out.precision(12);
    for (std::size_t i = 0; i < est.omega.size(); ++i) {
        if (!est.valid[i]) continue;
        out << est.omega[i] << ',' << est.value[i] << ',' << est.error_bound[i] << ',' << (est.mfs[i] ? 1 : 0) << ','
            << csv_field(est.plan_id[i]) << '\n';
    }
}

}  // namespace qnoise::reconstruction
