#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "qnoise/inference.hpp"

using namespace qnoise;
using namespace qnoise::inference;
using dynamics::Blocks;
using dynamics::Kind;

namespace {

Blocks random_blocks(std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Blocks b = Blocks::zero(3);
    // Plus blocks from a Gram matrix keep the label exponents nonnegative.
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) g(i, j) = u(rng);
    b.plus = scale * g * g.transpose();
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            b.minus(i, j) = 0.1 * scale * u(rng);
            b.minus(j, i) = -b.minus(i, j);
        }
    return b;
}

spectra::SpectrumPair bump_pair(double bc, double bq, double w0 = 1e5, double width = 2e4) {
    spectra::SpectrumPair p;
    p.c.parity = spectra::Parity::symmetric;
    p.c.bumps = {{bc, 1.0 / (width * width), w0}};
    p.c.cutoff = 4e5;
    p.q.parity = spectra::Parity::antisymmetric;
    p.q.bumps = {{bq, 1.0 / (width * width), w0}};
    p.q.cutoff = 4e5;
    return p;
}

const control::Constraints fine{1e-6, 1e-7};

SwitchingFunction hahn(double start, double t1) {
    const double mid[1] = {t1 / 2};
    return control::window_switching(start, t1, mid);
}

double value_of(const QQuantity& q) { return q.value.real(); }

const QQuantity& find_q(const std::vector<QQuantity>& qs, const std::string& id) {
    for (const auto& q : qs)
        if (q.id == id) return q;
    throw std::runtime_error("missing " + id);
}

double est(const std::vector<IntegralEstimate>& es, const std::string& l) {
    for (const auto& e : es)
        if (e.label == l) return e.value;
    throw std::runtime_error("missing " + l);
}

}  // namespace

TEST_CASE("q quantities at unit amplitudes") {
    const auto e = q_expectations(Blocks::zero(3));
    const auto qs = extract_q_quantities(e);
    CHECK(value_of(find_q(qs, "Q1+")) == doctest::Approx(4.0));
    CHECK(std::abs(find_q(qs, "Q2-").value) < 1e-10);
    for (const auto& q : qs)
        if (q.id.rfind("Qpi", 0) == 0) CHECK(q.value.real() == doctest::Approx(1.0));
}

TEST_CASE("q path round trip recovers blocks") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto b = random_blocks(rng, 0.2);
        const auto qs = extract_q_quantities(q_expectations(b));
        // pi-set members equal the plus labels directly
        const int a[3] = {1, 1, -1};
        CHECK(value_of(find_q(qs, "Qpi(1,1,-1)")) == doctest::Approx(std::exp(-dynamics::plus_exponent(b, a))));

        const auto plus = infer_plus_integrals(qs);
        CHECK(std::abs(est(plus, "P11") - b.plus(0, 0)) < 1e-6);
        CHECK(std::abs(est(plus, "P22") - b.plus(1, 1)) < 1e-6);
        CHECK(std::abs(est(plus, "P33") - b.plus(2, 2)) < 1e-6);
        CHECK(std::abs(est(plus, "P12") - b.plus(0, 1)) < 1e-6);
        CHECK(std::abs(est(plus, "P13") - b.plus(0, 2)) < 1e-6);
        CHECK(std::abs(est(plus, "P23") - b.plus(1, 2)) < 1e-6);

        // sinh identity for the corner
        const int m1[3] = {1, 0, -1}, p1[3] = {1, 0, 1}, e1[3] = {1, 0, 0}, e3[3] = {0, 0, 1};
        const double lhs = (std::exp(-dynamics::plus_exponent(b, m1)) - std::exp(-dynamics::plus_exponent(b, p1))) /
                           (2.0 * std::exp(-dynamics::plus_exponent(b, e1)) * std::exp(-dynamics::plus_exponent(b, e3)));
        CHECK(lhs == doctest::Approx(std::sinh(2.0 * b.plus(0, 2))).epsilon(1e-12));

        const auto minus = infer_minus_integrals(qs, plus);
        for (const auto& m : minus) {
            REQUIRE(m.phase);
            CHECK(std::abs(m.phase->s * m.phase->s + m.phase->c * m.phase->c - 1.0) < 1e-8);
        }
        CHECK(std::abs(est(minus, "M12") - b.minus(0, 1)) < 1e-6);
        CHECK(std::abs(est(minus, "M13") - b.minus(0, 2)) < 1e-6);
        CHECK(std::abs(est(minus, "M23") - b.minus(1, 2)) < 1e-6);
        CHECK(q4_residual(qs, plus, minus) < 1e-8);
    }
}

TEST_CASE("zero q noise gives zero minus angles") {
    std::mt19937_64 rng(4);
    auto b = random_blocks(rng, 0.3);
    b.minus.setZero();
    const auto qs = extract_q_quantities(q_expectations(b));
    CHECK(std::abs(find_q(qs, "Q2-").value) < 1e-10);
    const auto plus = infer_plus_integrals(qs);
    for (const auto& m : infer_minus_integrals(qs, plus)) CHECK(std::abs(m.value) < 1e-10);
}

TEST_CASE("missing configurations are named") {
    auto e = q_expectations(Blocks::zero(3));
    for (auto it = e.begin(); it != e.end();)
        it = it->first.find("|Y|") != std::string::npos ? e.erase(it) : std::next(it);
    const std::string id = "Q5-";
    bool threw = false;
    try {
        extract_q_quantities(e, std::span<const std::string>(&id, 1));
    } catch (const EstimationError& err) {
        threw = true;
        CHECK(std::string(err.what()).find("missing configurations") != std::string::npos);
        CHECK(std::string(err.what()).find("|Y|") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("direct equations match spectral quadrature") {
    const auto pair = bump_pair(2e4, 1.5e4);
    const auto grid = spectra::make_spectral_grid(pair, 4e-4, 8, 2.0);
    ExperimentRunner run(pair, fine, std::nullopt, 1);
    const double t1 = 50e-6;
    const auto w = hahn(0.0, t1);
    for (double t2 : {50e-6, 62e-6, 90e-6, 171.3e-6}) {
        const auto g = hahn(t2, t1);
        const double ref_p = dynamics::integral_freq_domain(w, w, t2, grid, Kind::plus).value.real();
        const double ref_m = dynamics::integral_freq_domain(w, w, t2, grid, Kind::minus).value.imag();
        const auto p = measure_block(run, w, g, Kind::plus);
        const auto m = measure_block(run, w, g, Kind::minus);
        CHECK_FALSE(p.ill_conditioned);
        CHECK_FALSE(m.ill_conditioned);
        CHECK(std::abs(p.value - ref_p) < 1e-8);
        CHECK(std::abs(m.value - ref_m) < 1e-8);
        CHECK(std::abs(ref_p) > 1e-4);
    }
    const auto sq = measure_square(run, w);
    CHECK(sq.value == doctest::Approx(dynamics::spectral_pair_plus(w, w, grid)).epsilon(1e-8));
    CHECK(run.violations() == 0);
}

TEST_CASE("separated plus blocks keep their sign under a strong cross phase") {
    // Slow, strong q noise makes the common phase factor of the six measurements negative.
    auto pair = bump_pair(3e4, 2.4e4, 2.0 * pi * 400.0, 2.0 * pi * 300.0);
    pair.c.cutoff = pair.q.cutoff = 2.0 * pi * 5e3;
    const auto grid = spectra::make_spectral_grid(pair, 4e-3, 8, 2.0);
    ExperimentRunner run(pair, fine, std::nullopt, 1);
    const double t1 = 120e-6;
    const SwitchingFunction w{{0.0, t1}, {1}};
    for (double t2 : {0.6e-3, 1.2e-3, 2.0e-3, 2.4e-3, 3.2e-3}) {
        const SwitchingFunction g{{t2, t2 + t1}, {1}};
        const double ref = dynamics::integral_freq_domain(w, w, t2, grid, Kind::plus).value.real();
        const auto p = measure_block(run, w, g, Kind::plus);
        REQUIRE_FALSE(p.ill_conditioned);
        CHECK(p.value == doctest::Approx(ref).epsilon(1e-6));
    }
}

TEST_CASE("deadtime composition against direct quadrature") {
    const auto pair = bump_pair(2e4, 1.5e4);
    const auto grid = spectra::make_spectral_grid(pair, 4e-4, 8, 2.0);
    ExperimentRunner run(pair, fine, std::nullopt, 2);
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> len(40, 160);
    for (int trial = 0; trial < 20; ++trial) {
        const double t1 = 2 * len(rng) * fine.delta;
        std::uniform_int_distribution<int> sh(0, static_cast<int>(std::lround(t1 / fine.delta)) - 1);
        const double t2 = sh(rng) * fine.delta;
        const auto w = hahn(0.0, t1);
        for (Kind kind : {Kind::plus, Kind::minus}) {
            const auto ref = dynamics::integral_freq_domain(w, w, t2, grid, kind).value;
            const auto got = deadtime_compose(deadtime_pieces(run, w, t2, kind));
            REQUIRE_FALSE(got.ill_conditioned);
            CHECK(std::abs(got.value - (kind == Kind::plus ? ref.real() : ref.imag())) < 1e-6);
        }
    }
    // red region vanishes for the minus kind once t2 >= t1 / 2
    const auto w = hahn(0.0, 60e-6);
    CHECK(deadtime_pieces(run, w, 35e-6, Kind::minus).red.value == 0.0);
    // no overlap at t2 = 0 besides the square
    const auto p0 = deadtime_pieces(run, w, 0.0, Kind::plus);
    CHECK(p0.red.value == doctest::Approx(dynamics::spectral_pair_plus(w, w, grid)).epsilon(1e-8));
}

TEST_CASE("strip refinement and full access sum") {
    const double c0 = 3.0;
    RectSource flat = [&](double a, double b, double c, double d) { return Measurement{c0 * (b - a) * (d - c), 0.0}; };
    const double delta = 1e-7;
    CHECK(strip_refine(flat, 2e-6, 5e-6, delta, 10, 10).value == doctest::Approx(c0 * delta * delta));

    const double gamma = 2e4;
    const spectra::AnalyticCorrelation lor([&](double t) { return std::exp(-gamma * std::abs(t)); },
                                           [](double) { return 0.0; }, 1e-6);
    auto rect = [&](double a, double b, double c, double d) {
        const SwitchingFunction f{{a, b}, {1}}, g{{c, d}, {1}};
        return Measurement{dynamics::double_integral_plus(g, f, lor), 0.0};
    };
    double err[2];
    int i = 0;
    for (double dl : {4e-6, 2e-6}) {
        const double u = 10e-6, v = 40e-6;
        const double cell = strip_refine(rect, u, v, dl, 3, 3).value;
        const double mid = std::exp(-gamma * (v - u)) * dl * dl;
        err[i++] = std::abs(cell / mid - 1.0);
    }
    CHECK(err[0] < 1e-2);
    CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.05));

    // cells from experiments agree with the oracle
    const auto pair = bump_pair(2e4, 1.5e4);
    const auto grid = spectra::make_spectral_grid(pair, 4e-4, 8, 2.0);
    ExperimentRunner run(pair, fine, std::nullopt, 3);
    RectSource measured = [&](double a, double b, double c, double d) {
        const auto e = measure_block(run, SwitchingFunction{{a, b}, {1}}, SwitchingFunction{{c, d}, {1}}, Kind::plus);
        return Measurement{e.value, e.variance};
    };
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> off(0, 100);
    for (int trial = 0; trial < 20; ++trial) {
        const double dl = 2e-6;
        const double u = 20e-6 + off(rng) * fine.delta, v = u + 2 * dl + off(rng) * 1e-6;
        const auto cell = strip_refine(measured, u, v, dl, 10, 10);
        const SwitchingFunction f{{u, u + dl}, {1}}, g{{v, v + dl}, {1}};
        CHECK(std::abs(cell.value - dynamics::spectral_pair_plus(f, g, grid)) < 1e-9);
    }

    // M_f with cosine weights approaches the Lorentzian spectrum 2 gamma / (gamma^2 + W^2)
    const double d = 2e-6;
    const std::size_t Q = 2000;
    std::vector<double> cells(Q);
    for (std::size_t q = 0; q < Q; ++q) cells[q] = rect(0.0, d, q * d, (q + 1) * d).value;
    for (double W : {0.0, 1e4, 5e4}) {
        std::vector<cplx> f(Q);
        for (std::size_t q = 0; q < Q; ++q) f[q] = (q == 0 ? 1.0 : 2.0) * d * std::cos(W * q * d);
        const double expect = 2.0 * gamma / (gamma * gamma + W * W);
        CHECK(full_access_Mf(cells, f, d).real() == doctest::Approx(expect).epsilon(0.02));
    }
}

TEST_CASE("branch resolution") {
    const double w0 = 3.0;
    std::vector<double> t, s, c, truth;
    for (int i = 0; i <= 4000; ++i) {
        const double x = i * 1e-3;
        const double phi = 2.5 * std::sin(w0 * x) + 6.0 * x;
        truth.push_back(phi);
        s.push_back(std::sin(phi));
        c.push_back(std::cos(phi));
    }
    SafeZoneState zone;
    const auto r = resolve_branch(s, c, zone);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        worst = std::max(worst, std::abs(r.phi[i] - truth[i]));
        CHECK(std::sin(r.phi[i]) == doctest::Approx(s[i]).epsilon(1e-12));
    }
    CHECK(worst < 1e-3);
    CHECK(r.gaps.empty());
    CHECK(zone.k == r.k.back());

    // never leaving the principal range
    std::vector<double> s2, c2;
    for (int i = 0; i < 100; ++i) {
        s2.push_back(std::sin(1.2 * std::sin(0.1 * i)));
        c2.push_back(std::cos(1.2 * std::sin(0.1 * i)));
    }
    SafeZoneState z2;
    const auto r2 = resolve_branch(s2, c2, z2);
    for (std::size_t i = 0; i < s2.size(); ++i) {
        CHECK(r2.k[i] == 0);
        CHECK(r2.phi[i] == doctest::Approx(std::asin(s2[i])));
    }

    // a single crossing of pi/2 with c changing sign
    const double ss[2] = {0.99, 0.98}, cc[2] = {0.14, -0.2};
    SafeZoneState z3;
    const auto r3 = resolve_branch(ss, cc, z3);
    CHECK(r3.k[0] == 0);
    CHECK(r3.k[1] == 1);
    CHECK(r3.phi[1] == doctest::Approx(pi - std::asin(0.98)));
}

TEST_CASE("safe zone bound") {
    const double t1 = 50e-6;
    const auto w = hahn(0.0, t1);
    const auto zero = safe_zone_bound([](double) { return 0.0; }, w, w, 4e5);
    CHECK(zero.bound == 0.0);

    const auto pair = bump_pair(2e4, 1.5e4);
    auto sp = [&](double x) { return spectra::eval_spectrum(pair.c, x); };
    const auto b1 = safe_zone_bound(sp, w, w, 4e5);
    const auto b2 = safe_zone_bound([&](double x) { return 2.5 * sp(x); }, w, w, 4e5);
    CHECK(b2.bound == doctest::Approx(2.5 * b1.bound));
    CHECK(b2.derivative == doctest::Approx(2.5 * b1.derivative));

    const auto grid = spectra::make_spectral_grid(pair, 1e-3, 8, 2.0);
    for (double t2 : {0.0, 30e-6, 60e-6, 200e-6, 700e-6}) {
        const double v = dynamics::integral_freq_domain(w, w, t2, grid, Kind::minus).value.imag();
        CHECK(std::abs(v) <= b1.bound);
    }
    const double eps = tracking_step(b1, 4, 1e-3, 1e-7);
    CHECK(eps <= pi / (4.0 * 4.0 * b1.derivative) + 1e-12);
    CHECK(eps >= 1e-7);
}

TEST_CASE("magnitude pretest") {
    spectra::SpectrumPair quiet = bump_pair(0.0, 0.0);
    ExperimentRunner calm(quiet, fine, std::nullopt, 4);
    const auto w = hahn(0.0, 50e-6);
    const auto pt = magnitude_pretest(calm, w, hahn(80e-6, 50e-6), {});
    CHECK(pt.value == doctest::Approx(16.0));
    CHECK(pt.ok);

    ExperimentRunner loud(bump_pair(3e6, 0.0, 1e5, 4e4), fine, std::nullopt, 4);
    const auto bad = magnitude_pretest(loud, w, hahn(80e-6, 50e-6), {});
    CHECK_FALSE(bad.ok);
    CHECK(bad.value < 1e-3);
}

TEST_CASE("runner sampling is reproducible") {
    const auto pair = bump_pair(2e4, 1.5e4);
    auto s = PulseSchedule::free({0.0, 50e-6}, fine);
    s.pi_trains[0] = {25e-6};
    s.angles = {0.0, 0.0};
    ExperimentRunner a(pair, fine, 10000, 77), b(pair, fine, 10000, 77), c(pair, fine, 10000, 78);
    a.record(true);
    const auto ma = a.measure(s, {dynamics::Axis::y, 1}, dynamics::Observable::y);
    const auto mb = b.measure(s, {dynamics::Axis::y, 1}, dynamics::Observable::y);
    const auto mc = c.measure(s, {dynamics::Axis::y, 1}, dynamics::Observable::y);
    CHECK(ma.value == mb.value);
    CHECK(ma.variance > 0.0);
    CHECK(ma.value != mc.value);
    CHECK(a.rows().size() == 1);
    CHECK(std::abs(a.rows()[0].expectation - ma.value) < 5.0 * std::sqrt(ma.variance));

    std::ostringstream os;
    IntegralEstimate e;
    e.label = "x";
    write_integral_estimates_csv(os, std::span<const IntegralEstimate>(&e, 1));
    CHECK(os.str().rfind("label,kind,value,branch_k,variance\n", 0) == 0);
}
