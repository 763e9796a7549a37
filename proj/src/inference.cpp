#include "qnoise/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "qnoise/quadrature.hpp"

namespace qnoise::inference {

using dynamics::Axis;
using dynamics::Blocks;
using dynamics::Observable;
using dynamics::State;

namespace {

constexpr double half_pi = pi / 2;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

long long ticks(double t, double delta) { return std::llround(t / delta); }

char axis_char(Axis a) { return a == Axis::x ? 'x' : a == Axis::y ? 'y' : 'z'; }

std::string state_label(const State& s) { return std::string(s.sign > 0 ? "+" : "-") + axis_char(s.axis); }

PulseSchedule snapped(const PulseSchedule& s) {
    PulseSchedule out = s;
    const double d = s.constraints.delta;
    for (auto& b : out.boundaries) b = control::snap(b, d);
    for (auto& train : out.pi_trains)
        for (auto& t : train) t = control::snap(t, d);
    return out;
}

SwitchingFunction restrict_to(const SwitchingFunction& sw, double lo, double hi) {
    SwitchingFunction out;
    out.breakpoints.push_back(lo);
    for (std::size_t i = 0; i < sw.segments(); ++i) {
        const double a = sw.breakpoints[i], b = sw.breakpoints[i + 1];
        if (b <= lo || a >= hi) continue;
        out.values.push_back(sw.values[i]);
        out.breakpoints.push_back(std::min(b, hi));
    }
    return out;
}

SwitchingFunction shifted(SwitchingFunction sw, double by) {
    for (auto& b : sw.breakpoints) b += by;
    return sw;
}

SwitchingFunction constant_piece(double lo, double hi, int value) { return {{lo, hi}, {value}}; }

// Flip times in absolute time.
std::vector<double> absolute_flips(const SwitchingFunction& w) {
    std::vector<double> out;
    for (std::size_t i = 1; i < w.segments(); ++i)
        if (w.values[i] != w.values[i - 1]) out.push_back(w.breakpoints[i]);
    return out;
}

double lo_of(const SwitchingFunction& w) { return w.breakpoints.front(); }
double hi_of(const SwitchingFunction& w) { return w.breakpoints.back(); }

// y on the first segment of a piece relative to the piece's own leading sign.
int orientation(const PulseSchedule& s, const SwitchingFunction& piece_abs, double offset) {
    const auto y = control::base_switching(s);
    const double t = 0.5 * (piece_abs.breakpoints[0] + piece_abs.breakpoints[1]) - offset;
    return y.at(t) * piece_abs.values.front();
}

const State plus_y{Axis::y, 1}, plus_x{Axis::x, 1}, minus_x{Axis::x, -1}, plus_z{Axis::z, 1};

PulseSchedule single_piece_schedule(const SwitchingFunction& piece, const control::Constraints& c) {
    const double a = lo_of(piece);
    auto s = PulseSchedule::free({0.0, hi_of(piece) - a}, c);
    for (double t : absolute_flips(piece)) s.pi_trains[0].push_back(t - a);
    return s;
}

// Earlier piece, optional middle pulses (relative to the middle start), later piece.
PulseSchedule pair_schedule(const SwitchingFunction& f, const SwitchingFunction& g, std::span<const double> middle,
                            const control::Constraints& c) {
    const double a = lo_of(f), b = hi_of(f), cc = lo_of(g), d = hi_of(g);
    const bool adjacent = ticks(cc - b, c.delta) == 0;
    std::vector<double> bounds{0.0, b - a};
    if (!adjacent) bounds.push_back(cc - a);
    bounds.push_back(d - a);
    auto s = PulseSchedule::free(bounds, c);
    for (double t : absolute_flips(f)) s.pi_trains[0].push_back(t - a);
    if (!adjacent)
        for (double t : middle) s.pi_trains[1].push_back(b - a + t);
    for (double t : absolute_flips(g)) s.pi_trains.back().push_back(t - a);
    return s;
}

// Equally spaced CPMG-like middle pulses of count n on a gap of length L, or nothing if infeasible.
std::optional<std::vector<double>> middle_candidate(int n, double L, const control::Constraints& c) {
    std::vector<double> out;
    if (n == 0) return out;
    double prev = 0.0;
    for (int j = 0; j < n; ++j) {
        const double t = control::snap(L * (2.0 * j + 1.0) / (2.0 * n), c.delta);
        if (t - prev < c.Delta - 1e-6 * c.delta) return std::nullopt;
        out.push_back(t);
        prev = t;
    }
    if (L - prev < c.Delta - 1e-6 * c.delta) return std::nullopt;
    return out;
}

Measurement run_angles(ExperimentRunner& run, PulseSchedule s, State rho, Observable o,
                       std::initializer_list<double> angles) {
    s.angles.assign(angles);
    return run.measure(s, rho, o);
}

IntegralEstimate ill(std::string label, Kind kind) {
    IntegralEstimate e;
    e.label = std::move(label);
    e.kind = kind;
    e.value = std::numeric_limits<double>::quiet_NaN();
    e.ill_conditioned = true;
    return e;
}

std::string piece_label(const SwitchingFunction& f) {
    std::ostringstream os;
    os.precision(9);
    os << '[' << lo_of(f) << ',' << hi_of(f) << ']';
    return os.str();
}

IntegralEstimate plus_separated(ExperimentRunner& run, const SwitchingFunction& f, const SwitchingFunction& g,
                                const BlockOptions& opt, const std::string& label) {
    const auto& c = run.constraints();
    const double L = lo_of(g) - hi_of(f);
    // Middle sequence: the first candidate passing the pretest, else the best one.
    std::vector<double> middle;
    double best = -1.0;
    for (int n = 0; n <= opt.max_middle_pulses; ++n) {
        const auto cand = middle_candidate(n, L, c);
        if (!cand) continue;
        const auto pt = magnitude_pretest(run, f, g, *cand, opt);
        if (pt.value > best) {
            best = pt.value;
            middle = *cand;
        }
        if (pt.ok) break;
    }
    const auto s = pair_schedule(f, g, middle, c);
    const double h = half_pi;
    const Measurement m[6] = {
        run_angles(run, s, plus_y, Observable::y, {0, h, h, 0}),
        run_angles(run, s, plus_y, Observable::y, {0, h, -h, 0}),
        run_angles(run, s, plus_y, Observable::y, {0, -h, -h, 0}),
        run_angles(run, s, plus_y, Observable::y, {0, -h, h, 0}),
        run_angles(run, s, minus_x, Observable::x, {0, h, h, 0}),
        run_angles(run, s, plus_x, Observable::x, {0, -h, h, 0}),
    };
    auto fn = [](std::span<const double> x) {
        const double A = x[0] - x[1] + x[2] - x[3];
        const double B = x[4] + x[5];
        const double d = 4.0 * B * B - A * A;
        // B carries the sign of the common phase factor, which A shares.
        return 0.5 * std::asinh(std::copysign(1.0, B) * A / std::sqrt(std::max(d, 1e-300)));
    };
    double x[6], v[6];
    for (int i = 0; i < 6; ++i) x[i] = m[i].value, v[i] = m[i].variance;
    const double A = x[0] - x[1] + x[2] - x[3], B = x[4] + x[5];
    IntegralEstimate e;
    e.label = label;
    e.kind = Kind::plus;
    const int sigma = orientation(s, f, lo_of(f)) * orientation(s, g, lo_of(f));
    if (4.0 * B * B - A * A <= opt.divisor_floor) {
        e = ill(label, Kind::plus);
        return e;
    }
    e.value = sigma * fn(x);
    e.variance = propagate_variance(fn, x, v);
    return e;
}

IntegralEstimate plus_adjacent(ExperimentRunner& run, const SwitchingFunction& f, const SwitchingFunction& g,
                               const BlockOptions& opt, const std::string& label) {
    const auto s = pair_schedule(f, g, {}, run.constraints());
    const auto sf = measure_square(run, f), sg = measure_square(run, g);
    if (sf.ill_conditioned || sg.ill_conditioned) return ill(label, Kind::plus);
    const int sigma = orientation(s, f, lo_of(f)) * orientation(s, g, lo_of(f));
    double num = 0.0, den = 0.0, plain = 0.0;
    int used = 0;
    for (int k1 : {0, 1}) {
        const auto m = run_angles(run, s, plus_y, Observable::y, {0, k1 * pi, 0});
        if (m.value <= opt.divisor_floor) continue;
        const double sgn = k1 == 0 ? 1.0 : -1.0;
        const double val = -sgn * 0.5 * (std::log(m.value) + sf.value + sg.value);
        const double var = 0.25 * (m.variance / (m.value * m.value) + sf.variance + sg.variance);
        ++used;
        plain += val;
        if (var > 0.0) {
            num += val / var;
            den += 1.0 / var;
        }
    }
    if (used == 0) return ill(label, Kind::plus);
    IntegralEstimate e;
    e.label = label;
    e.kind = Kind::plus;
    if (den > 0.0) {
        e.value = sigma * num / den;
        e.variance = 1.0 / den;
    } else {
        e.value = sigma * plain / used;
    }
    return e;
}

IntegralEstimate minus_separated(ExperimentRunner& run, const SwitchingFunction& f, const SwitchingFunction& g,
                                 const BlockOptions& opt, const std::string& label) {
    const auto s = pair_schedule(f, g, {}, run.constraints());
    const auto sq = measure_square(run, g);
    if (sq.ill_conditioned) return ill(label, Kind::minus);
    const double h = half_pi;
    const Measurement m[4] = {
        run_angles(run, s, plus_z, Observable::x, {0, 0, h, 0}),
        run_angles(run, s, plus_z, Observable::y, {0, pi, h, 0}),
        run_angles(run, s, plus_z, Observable::y, {0, 0, h, 0}),
        run_angles(run, s, plus_z, Observable::x, {0, pi, h, 0}),
    };
    const double amp = std::exp(-2.0 * sq.value);
    if (amp < opt.divisor_floor) return ill(label, Kind::minus);
    // x = (EX0, EYpi, EY0, EXpi, P_gg)
    double x[5] = {m[0].value, m[1].value, m[2].value, m[3].value, sq.value};
    double v[5] = {m[0].variance, m[1].variance, m[2].variance, m[3].variance, sq.variance};
    auto sfn = [](std::span<const double> y) { return -(y[0] * y[1] + y[2] * y[3]) * std::exp(2.0 * y[4]); };
    auto cfn = [](std::span<const double> y) { return -(y[0] * y[3] - y[2] * y[1]) * std::exp(2.0 * y[4]); };
    const int sigma = orientation(s, f, lo_of(f)) * orientation(s, g, lo_of(f));
    const double sh = sigma * sfn(x), ch = cfn(x);
    auto afn = [&](std::span<const double> y) { return std::atan2(sfn(y), cfn(y)) / 4.0; };
    IntegralEstimate e;
    e.label = label;
    e.kind = Kind::minus;
    e.value = std::atan2(sh, ch) / 4.0;
    e.variance = propagate_variance(afn, x, v);
    e.phase = Phase{sh, ch, 4};
    return e;
}

IntegralEstimate minus_adjacent(ExperimentRunner& run, const SwitchingFunction& f, const SwitchingFunction& g,
                                const BlockOptions& opt, const std::string& label) {
    const auto s = pair_schedule(f, g, {}, run.constraints());
    const auto sq = measure_square(run, g);
    if (sq.ill_conditioned) return ill(label, Kind::minus);
    const auto ex = run_angles(run, s, plus_z, Observable::x, {0, half_pi, 0});
    const auto ey = run_angles(run, s, plus_z, Observable::y, {0, half_pi, 0});
    const double amp = std::exp(-sq.value);
    if (amp < opt.divisor_floor) return ill(label, Kind::minus);
    const int sigma = orientation(s, f, lo_of(f)) * orientation(s, g, lo_of(f));
    double x[3] = {ex.value, ey.value, sq.value};
    double v[3] = {ex.variance, ey.variance, sq.variance};
    auto afn = [](std::span<const double> y) { return std::atan2(y[1], y[0]) / 2.0; };
    const double c2 = ex.value / amp, s2 = sigma * ey.value / amp;
    IntegralEstimate e;
    e.label = label;
    e.kind = Kind::minus;
    e.value = std::atan2(s2, c2) / 2.0;
    e.variance = propagate_variance(afn, x, v);
    e.phase = Phase{2.0 * s2 * c2, c2 * c2 - s2 * s2, 4};
    return e;
}

IntegralEstimate zero_estimate(std::string label, Kind kind) {
    IntegralEstimate e;
    e.label = std::move(label);
    e.kind = kind;
    if (kind == Kind::minus) e.phase = Phase{0.0, 1.0, 4};
    return e;
}

}  // namespace

// ---------------------------------------------------------------------------------------
// runner

ExperimentRunner::ExperimentRunner(spectra::SpectrumPair truth, control::Constraints c,
                                   std::optional<std::uint64_t> shots, std::uint64_t seed)
    : truth_(std::move(truth)), constraints_(c), shots_(shots), seed_(seed) {}

ExperimentRunner::ExperimentRunner(std::shared_ptr<const dynamics::BlockBackend> backend, control::Constraints c,
                                   std::optional<std::uint64_t> shots, std::uint64_t seed)
    : fixed_(std::move(backend)), constraints_(c), shots_(shots), seed_(seed) {}

const dynamics::BlockBackend& ExperimentRunner::backend_for(double span) {
    if (fixed_) return *fixed_;
    const int bucket = std::max(0, static_cast<int>(std::ceil(std::log2(std::max(span, 1e-5) / 1e-5) - 1e-9)));
    std::lock_guard lock(backend_mu_);
    auto& slot = backends_[bucket];
    if (!slot) slot = std::make_shared<dynamics::FrequencyBackend>(*truth_, 1e-5 * std::ldexp(1.0, bucket));
    return *slot;
}

std::string ExperimentRunner::geometry_key(const PulseSchedule& s) const {
    std::ostringstream os;
    const double d = constraints_.delta;
    for (std::size_t k = 0; k < s.boundaries.size(); ++k) os << (k ? "," : "b") << ticks(s.boundaries[k], d);
    for (std::size_t k = 0; k < s.pi_trains.size(); ++k) {
        os << "|p";
        for (std::size_t j = 0; j < s.pi_trains[k].size(); ++j) os << (j ? "," : "") << ticks(s.pi_trains[k][j], d);
    }
    return os.str();
}

Blocks ExperimentRunner::blocks(const PulseSchedule& s_in) {
    auto s = snapped(s_in);
    s.constraints = constraints_;
    // Angles do not enter the blocks; boundary pulses only flip signs inside intervals.
    const auto folded = control::fold_boundary_pulses(s);
    const std::string key = geometry_key(folded);
    {
        std::lock_guard lock(mu_);
        if (auto it = block_cache_.find(key); it != block_cache_.end()) return it->second;
    }
    const auto viol = control::schedule_validate(folded);
    auto b = dynamics::schedule_blocks(folded, backend_for(folded.duration()));
    std::lock_guard lock(mu_);
    if (!block_cache_.contains(key) && !viol.empty())
        violation_log_.push_back(key + ": " + viol.front().what);
    block_cache_.emplace(key, b);
    return b;
}

Measurement ExperimentRunner::measure(const PulseSchedule& s_in, State rho, Observable o) {
    auto s = snapped(s_in);
    s.constraints = constraints_;
    if (s.angles.size() != s.boundaries.size()) throw Error("measure: need one angle per boundary");
    std::ostringstream id;
    id << geometry_key(s) << "|a";
    for (std::size_t k = 0; k < s.angles.size(); ++k)
        id << (k ? "," : "") << std::llround(s.angles[k] / half_pi * 1e6);
    id << '|' << state_label(rho) << '|' << (o == Observable::x ? 'X' : 'Y');
    const std::string key = id.str();
    {
        std::lock_guard lock(mu_);
        if (auto it = measured_.find(key); it != measured_.end()) return it->second;
    }
    const auto folded = control::fold_boundary_pulses(s);
    const auto b = blocks(s);
    const double exact = dynamics::expectation(b, rho, o, folded.angles);
    const std::uint64_t seed = splitmix(seed_ ^ fnv1a(key));
    Measurement m;
    m.value = dynamics::sample_shots(exact, shots_, seed);
    if (shots_) {
        const double M = static_cast<double>(*shots_);
        m.variance = std::max(1.0 - m.value * m.value, 1.0 / M) / M;
    }
    std::lock_guard lock(mu_);
    measured_.emplace(key, m);
    if (record_) rows_.emplace(key, dynamics::ExpectationRow{key, exact, shots_, m.value, seed});
    return m;
}

std::size_t ExperimentRunner::experiments() const {
    std::lock_guard lock(mu_);
    return measured_.size();
}

std::size_t ExperimentRunner::violations() const {
    std::lock_guard lock(mu_);
    return violation_log_.size();
}

std::vector<std::string> ExperimentRunner::violation_log() const {
    std::lock_guard lock(mu_);
    return violation_log_;
}

std::vector<dynamics::ExpectationRow> ExperimentRunner::rows() const {
    std::lock_guard lock(mu_);
    std::vector<dynamics::ExpectationRow> out;
    out.reserve(rows_.size());
    for (const auto& [k, r] : rows_) out.push_back(r);
    return out;
}

// ---------------------------------------------------------------------------------------
// estimates

void write_integral_estimates_csv(std::ostream& out, std::span<const IntegralEstimate> rows) {
    out << "label,kind,value,branch_k,variance\n";
    out.precision(15);
    for (const auto& r : rows)
        out << csv_field(r.label) << ',' << (r.kind == Kind::plus ? "plus" : "minus") << ',' << r.value << ',' << r.branch_k
            << ',' << r.variance << '\n';
}

double propagate_variance(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                          std::span<const double> var) {
    std::vector<double> p(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (var[i] <= 0.0) continue;
        const double h = std::max(1e-7, 1e-3 * std::sqrt(var[i]));
        p[i] = x[i] + h;
        const double up = f(p);
        p[i] = x[i] - h;
        const double dn = f(p);
        p[i] = x[i];
        const double g = (up - dn) / (2.0 * h);
        if (std::isfinite(g)) total += g * g * var[i];
    }
    return total;
}

std::vector<double> flip_times(const SwitchingFunction& w) {
    auto t = absolute_flips(w);
    for (auto& x : t) x -= lo_of(w);
    return t;
}

PretestResult magnitude_pretest(ExperimentRunner& run, const SwitchingFunction& earlier,
                                const SwitchingFunction& later, std::span<const double> middle_pulses,
                                const BlockOptions& opt) {
    const auto& c = run.constraints();
    auto one = single_piece_schedule(earlier, c);
    one.angles = {0.0, 0.0};
    const auto a1 = run.measure(one, plus_y, Observable::y);
    // N = 2: the middle gap followed by the later piece; X after a pi/2 at the junction.
    const double L = lo_of(later) - hi_of(earlier);
    PretestResult r;
    if (ticks(L, c.delta) <= 0) {
        r.value = 16.0 * a1.value * a1.value * a1.value * a1.value;
    } else {
        auto two = PulseSchedule::free({0.0, L, L + hi_of(later) - lo_of(later)}, c);
        two.pi_trains[0].assign(middle_pulses.begin(), middle_pulses.end());
        for (double t : absolute_flips(later)) two.pi_trains[1].push_back(t - lo_of(later) + L);
        two.angles = {0.0, half_pi, 0.0};
        const auto ax = run.measure(two, plus_z, Observable::x);
        r.value = 16.0 * ax.value * ax.value * a1.value * a1.value;
    }
    r.ok = r.value >= opt.pretest_threshold;
    return r;
}

IntegralEstimate measure_square(ExperimentRunner& run, const SwitchingFunction& piece) {
    auto s = single_piece_schedule(piece, run.constraints());
    s.angles = {0.0, 0.0};
    const auto m = run.measure(s, plus_y, Observable::y);
    const std::string label = "sq" + piece_label(piece);
    if (m.value <= 0.0) return ill(label, Kind::plus);
    IntegralEstimate e;
    e.label = label;
    e.kind = Kind::plus;
    e.value = -std::log(m.value);
    e.variance = m.variance / (m.value * m.value);
    return e;
}

IntegralEstimate measure_block(ExperimentRunner& run, const SwitchingFunction& earlier,
                               const SwitchingFunction& later, Kind kind, const BlockOptions& opt) {
    const double gap = lo_of(later) - hi_of(earlier);
    const long long g = ticks(gap, run.constraints().delta);
    if (g < 0) throw Error("measure_block: pieces overlap");
    const std::string label = piece_label(earlier) + "x" + piece_label(later);
    if (kind == Kind::plus)
        return g == 0 ? plus_adjacent(run, earlier, later, opt, label) : plus_separated(run, earlier, later, opt, label);
    return g == 0 ? minus_adjacent(run, earlier, later, opt, label) : minus_separated(run, earlier, later, opt, label);
}

IntegralEstimate measure_same_support(ExperimentRunner& run, const SwitchingFunction& f, const SwitchingFunction& g,
                                      Kind kind, const BlockOptions& opt) {
    const double lo = lo_of(f), hi = hi_of(f);
    std::vector<double> cuts = f.breakpoints;
    cuts.insert(cuts.end(), g.breakpoints.begin(), g.breakpoints.end());
    std::sort(cuts.begin(), cuts.end());
    const double d = run.constraints().delta;
    cuts.erase(std::unique(cuts.begin(), cuts.end(), [d](double a, double b) { return std::abs(a - b) < 1e-3 * d; }),
               cuts.end());
    const std::size_t n = cuts.size() - 1;
    std::vector<int> fv(n), gv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
        fv[i] = f.at(mid);
        gv[i] = g.at(mid);
    }
    const std::string label = "same" + piece_label(f);
    // Proportional patterns collapse to one square (plus) or vanish (minus).
    const bool prop_pos = fv == gv;
    bool prop_neg = true;
    for (std::size_t i = 0; i < n; ++i) prop_neg = prop_neg && fv[i] == -gv[i];
    if (prop_pos || prop_neg) {
        if (kind == Kind::minus) return zero_estimate(label, kind);
        auto sq = measure_square(run, f);
        sq.label = label;
        if (prop_neg) sq.value = -sq.value;
        return sq;
    }
    IntegralEstimate e = zero_estimate(label, kind);
    e.phase.reset();
    for (std::size_t p = 0; p < n; ++p) {
        const auto cp = constant_piece(cuts[p], cuts[p + 1], 1);
        if (kind == Kind::plus) {
            const auto sq = measure_square(run, cp);
            if (sq.ill_conditioned) return ill(label, kind);
            e.value += gv[p] * fv[p] * sq.value;
            e.variance += sq.variance;
        }
        for (std::size_t q = 0; q < p; ++q) {
            const auto cq = constant_piece(cuts[q], cuts[q + 1], 1);
            const double w = kind == Kind::plus ? gv[p] * fv[q] + gv[q] * fv[p] : gv[p] * fv[q] - gv[q] * fv[p];
            if (w == 0.0) continue;
            const auto b = measure_block(run, cq, cp, kind, opt);
            if (b.ill_conditioned) return ill(label, kind);
            e.value += w * b.value;
            e.variance += w * w * b.variance;
        }
    }
    (void)lo;
    (void)hi;
    return e;
}

DeadtimePieces deadtime_pieces(ExperimentRunner& run, const SwitchingFunction& window, double t2, Kind kind,
                               const BlockOptions& opt) {
    const double t1 = hi_of(window) - lo_of(window);
    if (!(t2 >= 0.0 && t2 < t1)) throw Error("deadtime_pieces: need 0 <= t2 < t1");
    const auto f = shifted(window, -lo_of(window));
    const auto g = shifted(f, t2);
    DeadtimePieces p;
    const long long k = ticks(t2, run.constraints().delta);
    if (k == 0) {
        p.green = zero_estimate("green", kind);
        p.orange = zero_estimate("orange", kind);
        p.red = measure_same_support(run, f, f, kind, opt);
        p.red.label = "red";
        return p;
    }
    p.green = measure_block(run, f, restrict_to(g, t1, t1 + t2), kind, opt);
    p.green.label = "green";
    p.orange = measure_block(run, restrict_to(f, 0.0, t2), restrict_to(g, t2, t1), kind, opt);
    p.orange.label = "orange";
    p.red = measure_same_support(run, restrict_to(f, t2, t1), restrict_to(g, t2, t1), kind, opt);
    p.red.label = "red";
    return p;
}

IntegralEstimate deadtime_compose(const DeadtimePieces& p) {
    IntegralEstimate e;
    e.label = "deadtime";
    e.kind = p.green.kind;
    for (const auto* x : {&p.green, &p.orange, &p.red}) {
        if (x->ill_conditioned || !std::isfinite(x->value)) {
            e.ill_conditioned = true;
            e.value = std::numeric_limits<double>::quiet_NaN();
            return e;
        }
        e.value += x->value;
        e.variance += x->variance;
    }
    if (e.kind == Kind::minus) e.phase = Phase{std::sin(4.0 * e.value), std::cos(4.0 * e.value), 4};
    return e;
}

CellEstimate strip_refine(const RectSource& rect, double u, double v, double delta, int q1, int q3,
                          double noise_ratio) {
    const double A = u - q1 * delta, B = v + delta + q3 * delta;
    const Measurement r[4] = {rect(A, u + delta, v, B), rect(A, u, v, B), rect(A, u + delta, v + delta, B),
                              rect(A, u, v + delta, B)};
    CellEstimate c;
    c.value = r[0].value - r[1].value - r[2].value + r[3].value;
    for (const auto& m : r) c.variance += m.variance;
    c.noisy = c.variance > 0.0 && std::sqrt(c.variance) > noise_ratio * std::abs(c.value);
    return c;
}

cplx full_access_Mf(std::span<const double> cells, std::span<const cplx> f, double delta) {
    if (cells.size() != f.size()) throw Error("full_access_Mf: size mismatch");
    cplx acc = 0.0;
    for (std::size_t q = 0; q < cells.size(); ++q) acc += f[q] * cells[q];
    return acc / (delta * delta);
}

// ---------------------------------------------------------------------------------------
// branch tracking

BranchResult resolve_branch(std::span<const double> s, std::span<const double> c, SafeZoneState& zone,
                            double noise) {
    if (s.size() != c.size()) throw Error("resolve_branch: size mismatch");
    BranchResult out;
    out.phi.resize(s.size());
    out.k.resize(s.size());
    const double floor = std::max(noise, 1e-12);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double si = std::clamp(s[i], -1.0, 1.0);
        if (zone.started) {
            const bool flip = (c[i] >= 0.0) != (zone.last_c >= 0.0);
            const double sum = si + zone.last_s;
            if (flip) {
                if (std::abs(sum) <= floor) {
                    out.gaps.push_back(i);
                } else {
                    const int dir = sum > 0.0 ? 1 : -1;
                    zone.k += dir * (zone.k % 2 == 0 ? 1 : -1);
                }
            } else if (std::abs(si) > 1.0 - 1e-3 && std::abs(si) >= std::abs(zone.last_s) &&
                       (i + 1 == s.size() || std::abs(si) >= std::abs(s[i + 1]))) {
                out.touches.push_back(i);
            }
        }
        zone.started = true;
        zone.last_s = si;
        zone.last_c = c[i];
        const double sign = zone.k % 2 == 0 ? 1.0 : -1.0;
        out.k[i] = zone.k;
        out.phi[i] = zone.k * pi + sign * std::asin(si);
    }
    return out;
}

SafeZoneBound safe_zone_bound(const std::function<double(double)>& s_plus, const SwitchingFunction& f,
                              const SwitchingFunction& fp, double w_max) {
    const double span = std::max(hi_of(f) - lo_of(f), hi_of(fp) - lo_of(fp));
    const double width = std::min(w_max / 64.0, pi / (4.0 * span));
    const double ends[2] = {0.0, w_max};
    const auto rule = composite_rule(ends, width, 8);
    const auto fz = shifted(f, -lo_of(f)), fpz = shifted(fp, -lo_of(fp));
    SafeZoneBound b;
    for (std::size_t i = 0; i < rule.x.size(); ++i) {
        const double w = rule.x[i];
        const double sp = std::max(0.0, s_plus(w));
        if (sp == 0.0) continue;
        const double g = std::abs(control::filter(fz, w)) * std::abs(control::filter(fpz, w)) * sp;
        b.bound += rule.w[i] * g;
        b.derivative += rule.w[i] * w * g;
    }
    b.bound /= pi;
    b.derivative /= pi;
    return b;
}

double tracking_step(const SafeZoneBound& b, int multiplier, double cap, double delta) {
    double eps = cap;
    if (b.derivative > 0.0) eps = std::min(cap, pi / (4.0 * multiplier * b.derivative));
    return std::max(delta, std::floor(eps / delta + 1e-9) * delta);
}

// ---------------------------------------------------------------------------------------
// Q path

namespace {

struct QTerm {
    double coef;
    std::array<int, 3> a;
    std::array<int, 3> ap;
};

struct QDef {
    std::string id;
    std::vector<QTerm> terms;
};

const std::vector<QDef>& q_defs() {
    static const std::vector<QDef> defs = [] {
        std::vector<QDef> d;
        auto pair = [&](const std::string& base, std::array<int, 3> a, std::array<int, 3> ap_plus,
                        std::array<int, 3> ap_minus) {
            d.push_back({base + "+", {{1, a, ap_plus}, {1, a, ap_minus}}});
            d.push_back({base + "-", {{1, a, ap_plus}, {-1, a, ap_minus}}});
        };
        for (int sgn : {1, -1})
            d.push_back({sgn > 0 ? "Q1+" : "Q1-",
                         {{1, {1, 0, -1}, {0, 1, 0}},
                          {1, {1, 0, -1}, {0, -1, 0}},
                          {double(sgn), {1, 0, 1}, {0, 1, 0}},
                          {double(sgn), {1, 0, 1}, {0, -1, 0}}}});
        pair("Q2", {0, 1, -1}, {1, 0, 0}, {-1, 0, 0});
        pair("Q3", {0, 1, 1}, {1, 0, 0}, {-1, 0, 0});
        pair("Q4", {0, 1, 0}, {1, 0, 1}, {-1, 0, 1});
        d.pop_back();  // Q4- is outside the reachable span
        pair("Q5", {0, 0, 1}, {1, 1, 0}, {-1, -1, 0});
        pair("Q6", {0, 0, 1}, {-1, 1, 0}, {1, -1, 0});
        d.push_back({"Qpi(1,0,0)", {{1, {1, 0, 0}, {0, 1, 1}}}});
        for (int s2 : {1, -1}) {
            d.push_back({"Qpi(1," + std::to_string(s2) + ",0)", {{1, {1, s2, 0}, {0, 0, 1}}}});
            for (int s3 : {1, -1})
                d.push_back({"Qpi(1," + std::to_string(s2) + "," + std::to_string(s3) + ")",
                             {{1, {1, s2, s3}, {0, 0, 0}}}});
        }
        return d;
    }();
    return defs;
}

struct QSystem {
    std::vector<dynamics::LabelKey> keys;
    std::map<dynamics::LabelKey, std::size_t> index;
    Eigen::MatrixXcd coef;  // configs x keys
};

const QSystem& q_system() {
    static const QSystem sys = [] {
        QSystem s;
        const auto& cfgs = q_configs();
        std::vector<std::map<dynamics::LabelKey, cplx>> rows;
        rows.reserve(cfgs.size());
        for (const auto& c : cfgs) {
            const auto ang = c.angles();
            rows.push_back(dynamics::expectation_terms(3, c.rho, c.o, ang));
            for (const auto& [k, v] : rows.back())
                if (!s.index.contains(k)) {
                    s.index.emplace(k, s.keys.size());
                    s.keys.push_back(k);
                }
        }
        s.coef = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(cfgs.size()), static_cast<Eigen::Index>(s.keys.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (const auto& [k, v] : rows[i]) s.coef(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s.index.at(k))) = v;
        return s;
    }();
    return sys;
}

std::optional<Eigen::VectorXcd> q_target(const QDef& d) {
    const auto& sys = q_system();
    Eigen::VectorXcd t = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(sys.keys.size()));
    for (const auto& term : d.terms) {
        const auto key = dynamics::label_key(term.a, term.ap);
        const auto it = sys.index.find(key);
        if (it == sys.index.end()) return std::nullopt;
        t(static_cast<Eigen::Index>(it->second)) += term.coef;
    }
    return t;
}

// Min-norm weights over the given configuration rows, or nullopt when the target is unreachable.
std::optional<Eigen::VectorXcd> solve_weights(const std::vector<std::size_t>& rows, const Eigen::VectorXcd& t) {
    const auto& sys = q_system();
    Eigen::MatrixXcd At(sys.coef.cols(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) At.col(static_cast<Eigen::Index>(j)) = sys.coef.row(static_cast<Eigen::Index>(rows[j])).transpose();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(At);
    cod.setThreshold(1e-10);
    Eigen::VectorXcd w = cod.solve(t);
    if ((At * w - t).norm() > 1e-8 * std::max(1.0, t.norm())) return std::nullopt;
    return w;
}

double q_real(std::span<const QQuantity> qs, const std::string& id, bool imag_times_i = false) {
    for (const auto& q : qs)
        if (q.id == id) return imag_times_i ? (cplx(0, 1) * q.value).real() : q.value.real();
    throw EstimationError("missing quantity " + id);
}

const IntegralEstimate& find_est(std::span<const IntegralEstimate> es, const std::string& label) {
    for (const auto& e : es)
        if (e.label == label) return e;
    throw EstimationError("missing estimate " + label);
}

}  // namespace

std::string QConfig::label() const {
    std::string s = state_label(rho) + (o == Observable::x ? "|X|" : "|Y|");
    for (int t : theta) s += static_cast<char>('0' + t);
    return s;
}

std::array<double, 4> QConfig::angles() const {
    return {theta[0] * half_pi, theta[1] * half_pi, theta[2] * half_pi, theta[3] * half_pi};
}

const std::vector<QConfig>& q_configs() {
    static const std::vector<QConfig> cfgs = [] {
        std::vector<QConfig> out;
        for (State rho : {State{Axis::x, 1}, State{Axis::x, -1}, State{Axis::y, 1}, State{Axis::y, -1}})
            for (Observable o : {Observable::x, Observable::y})
                for (int m = 0; m < 81; ++m) {
                    QConfig c{rho, o, {m % 3, (m / 3) % 3, (m / 9) % 3, (m / 27) % 3}};
                    out.push_back(c);
                }
        return out;
    }();
    return cfgs;
}

std::vector<std::string> q_ids() {
    std::vector<std::string> out;
    for (const auto& d : q_defs()) out.push_back(d.id);
    return out;
}

ExpectationSet q_expectations(const Blocks& b) {
    ExpectationSet e;
    for (const auto& c : q_configs()) {
        const auto ang = c.angles();
        e[c.label()] = dynamics::expectation(b, c.rho, c.o, ang);
    }
    return e;
}

std::vector<QQuantity> extract_q_quantities(const ExpectationSet& e, std::span<const std::string> ids) {
    const auto& cfgs = q_configs();
    std::vector<std::size_t> avail;
    for (std::size_t i = 0; i < cfgs.size(); ++i)
        if (e.contains(cfgs[i].label())) avail.push_back(i);
    std::vector<std::size_t> all(cfgs.size());
    std::iota(all.begin(), all.end(), 0);

    std::vector<QQuantity> out;
    for (const auto& d : q_defs()) {
        if (!ids.empty() && std::find(ids.begin(), ids.end(), d.id) == ids.end()) continue;
        const auto t = q_target(d);
        if (!t) throw EstimationError(d.id + ": not reachable by any configuration");
        auto w = solve_weights(avail, *t);
        if (!w) {
            std::string msg = d.id + ": missing configurations:";
            const auto full = solve_weights(all, *t);
            int listed = 0;
            if (full)
                for (std::size_t i = 0; i < all.size() && listed < 12; ++i)
                    if (std::abs((*full)(static_cast<Eigen::Index>(i))) > 1e-10 && !e.contains(cfgs[i].label())) {
                        msg += " " + cfgs[i].label();
                        ++listed;
                    }
            throw EstimationError(msg);
        }
        QQuantity q;
        q.id = d.id;
        for (std::size_t j = 0; j < avail.size(); ++j) {
            const cplx wj = (*w)(static_cast<Eigen::Index>(j));
            if (std::abs(wj) < 1e-12) continue;
            const auto label = cfgs[avail[j]].label();
            q.value += wj * e.at(label);
            q.constituents.push_back(label);
        }
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<IntegralEstimate> infer_plus_integrals(std::span<const QQuantity> qs) {
    auto L = [&](const std::string& id) {
        const double v = q_real(qs, id);
        if (!(v > 0.0)) throw EstimationError(id + ": nonpositive amplitude");
        return std::log(v);
    };
    auto est = [](std::string label, double v) {
        IntegralEstimate e;
        e.label = std::move(label);
        e.kind = Kind::plus;
        e.value = v;
        return e;
    };
    std::vector<IntegralEstimate> out;
    try {
        const double p11 = -L("Qpi(1,0,0)");
        const double lp = L("Qpi(1,1,0)"), lm = L("Qpi(1,-1,0)");
        const double p12 = 0.25 * (lm - lp);
        const double p22 = -0.5 * (lp + lm) - p11;
        const double ratio = q_real(qs, "Q1-") / q_real(qs, "Q1+");
        if (!(std::abs(ratio) < 1.0)) throw EstimationError("Q1 ratio outside (-1, 1)");
        const double p13 = 0.5 * std::atanh(ratio);
        const double q5p = q_real(qs, "Q5+"), q5m = q_real(qs, "Q5-", true);
        const double a001 = 0.5 * std::hypot(q5p, q5m);
        if (!(a001 > 0.0)) throw EstimationError("Q5: vanishing amplitude");
        const double p33 = -std::log(a001);
        double p23 = 0.0;
        for (int s2 : {1, -1})
            for (int s3 : {1, -1})
                p23 -= s2 * s3 * L("Qpi(1," + std::to_string(s2) + "," + std::to_string(s3) + ")") / 8.0;
        out = {est("P11", p11), est("P12", p12), est("P13", p13), est("P22", p22), est("P23", p23), est("P33", p33)};
    } catch (const EstimationError&) {
        for (const char* l : {"P11", "P12", "P13", "P22", "P23", "P33"}) out.push_back(ill(l, Kind::plus));
    }
    return out;
}

std::vector<IntegralEstimate> infer_minus_integrals(std::span<const QQuantity> qs,
                                                    std::span<const IntegralEstimate> plus, double divisor_floor) {
    // Q+ = 2 A cos x, i Q- = 2 A sin x
    auto angle = [&](const std::string& base, double amp, bool& bad) {
        if (amp < divisor_floor) bad = true;
        return std::pair{q_real(qs, base + "+") / (2.0 * amp), q_real(qs, base + "-", true) / (2.0 * amp)};
    };
    const double p22 = find_est(plus, "P22").value, p33 = find_est(plus, "P33").value,
                 p23 = find_est(plus, "P23").value;
    bool bad = false;
    const double a001 = std::exp(-p33);
    const auto [ca, sa] = angle("Q5", a001, bad);  // alpha = 2(m13 + m23)
    const auto [cb, sb] = angle("Q6", a001, bad);  // beta  = 2(m23 - m13)
    const auto [cg, sg] = angle("Q2", std::exp(-(p22 + p33 - 2.0 * p23)), bad);  // gamma = 2(m12 - m13)
    const auto [cd, sd] = angle("Q3", std::exp(-(p22 + p33 + 2.0 * p23)), bad);  // delta = 2(m12 + m13)

    auto make = [&](std::string label, double c, double s) {
        IntegralEstimate e;
        e.label = std::move(label);
        e.kind = Kind::minus;
        e.value = std::atan2(s, c) / 4.0;
        e.phase = Phase{s, c, 4};
        e.ill_conditioned = bad;
        return e;
    };
    return {
        make("M12", cg * cd - sg * sd, sg * cd + cg * sd),
        make("M13", ca * cb + sa * sb, sa * cb - ca * sb),
        make("M23", ca * cb - sa * sb, sa * cb + ca * sb),
    };
}

double q4_residual(std::span<const QQuantity> qs, std::span<const IntegralEstimate> plus,
                   std::span<const IntegralEstimate> minus) {
    const double p22 = find_est(plus, "P22").value;
    const double m12 = find_est(minus, "M12").value;
    return std::abs(std::abs(q_real(qs, "Q4+")) - std::abs(2.0 * std::exp(-p22) * std::cos(2.0 * m12)));
}

}  // namespace qnoise::inference
