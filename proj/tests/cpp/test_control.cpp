#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "qnoise/control.hpp"

using namespace qnoise;
using namespace qnoise::control;

namespace {

std::vector<int> bits(unsigned mask, std::size_t n) {
    std::vector<int> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = (mask >> i) & 1u;
    return b;
}

PulseSchedule random_schedule(std::mt19937_64& rng) {
    const Constraints c{1e-6, 1e-7};
    std::uniform_int_distribution<int> len(20, 200), npulse(0, 3);
    std::vector<double> b{0.0};
    for (int k = 0; k < 3; ++k) b.push_back(b.back() + len(rng) * c.delta);
    auto s = PulseSchedule::free(b, c);
    for (std::size_t k = 0; k < 3; ++k) {
        const int n = npulse(rng);
        const double L = b[k + 1] - b[k];
        for (int j = 0; j < n; ++j) s.pi_trains[k].push_back(snap(b[k] + L * (j + 1) / (n + 1), c.delta));
    }
    return s;
}

// Midpoint rule on a fine grid; segment boundaries fall on the grid so it converges quickly.
cplx brute_filter(const SwitchingFunction& sw, double w) {
    cplx acc = 0.0;
    for (std::size_t i = 0; i < sw.segments(); ++i) {
        const double a = sw.breakpoints[i], b = sw.breakpoints[i + 1];
        const int n = 4000;
        const double h = (b - a) / n;
        // Gauss-Legendre 3-point per sub-panel
        const double g = std::sqrt(0.6);
        for (int k = 0; k < n; ++k) {
            const double m = a + (k + 0.5) * h;
            acc += sw.values[i] * h / 18.0 *
                   (5.0 * std::exp(cplx(0, w * (m - g * h / 2))) + 8.0 * std::exp(cplx(0, w * m)) +
                    5.0 * std::exp(cplx(0, w * (m + g * h / 2))));
        }
    }
    return acc;
}

}  // namespace

TEST_CASE("schedule_validate") {
    const Constraints c{10e-6, 1e-6};
    auto ok = PulseSchedule::free({0.0, 20e-6, 50e-6}, c);
    ok.pi_trains[1] = {35e-6};
    CHECK(schedule_validate(ok).empty());

    auto gap = ok;
    gap.pi_trains[1] = {25e-6};
    gap.angles[1] = pi / 2;
    CHECK_FALSE(schedule_validate(gap).empty());

    auto off = PulseSchedule::free({0.0, 20e-6 + 1e-6 / 3.0}, c);
    CHECK_FALSE(schedule_validate(off).empty());
}

TEST_CASE("toggling switch examples") {
    auto free1 = PulseSchedule::free({0.0, 1e-4});
    const std::array<int, 2> zero{0, 0}, flip{0, 1};
    auto y = toggling_switch(free1, zero);
    CHECK(y.values == std::vector<int>{1});
    y = toggling_switch(free1, flip);
    CHECK(y.values == std::vector<int>{-1});

    auto hahn = PulseSchedule::free({0.0, 1e-4});
    hahn.pi_trains[0] = {5e-5};
    y = toggling_switch(hahn, zero);
    CHECK(y.values == std::vector<int>{1, -1});
    CHECK(y.at(1e-5) == 1);
    CHECK(y.at(7e-5) == -1);
}

TEST_CASE("effective switchings examples") {
    auto s = PulseSchedule::free({0.0, 1e-5, 3e-5, 6e-5});
    const std::vector<int> r{0, 1, 0, 1};
    auto es = effective_switchings(s, r, r, -1);
    for (std::size_t i = 0; i < es.y_minus.size(); ++i) {
        CHECK(std::abs(es.y_minus[i]) == 1);
        CHECK(es.y_plus[i] == 0);
    }
    // r' differs by flipping interval 2 only: toggle bits at boundaries 1 and 2.
    const std::vector<int> rp{0, 0, 1, 1};
    es = effective_switchings(s, r, rp, -1);
    CHECK(es.a[1] == 0);
    CHECK(es.a_prime[1] != 0);
    CHECK(es.a[0] != 0);
    CHECK(es.a[2] != 0);
    CHECK(es.a_prime[0] == 0);
    CHECK(es.a_prime[2] == 0);
}

TEST_CASE("incompatibility holds for every (r, r') on random trains") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_schedule(rng);
        for (unsigned m = 0; m < 16; ++m)
            for (unsigned mp = 0; mp < 16; ++mp)
                for (int fz : {-1, 1}) {
                    const auto r = bits(m, 4), rp = bits(mp, 4);
                    const auto es = effective_switchings(s, r, rp, fz);
                    const auto y = base_switching(s);
                    for (std::size_t i = 0; i < es.y_plus.size(); ++i) {
                        CHECK(std::abs(es.y_plus[i] + es.y_minus[i]) == 1);
                        CHECK(es.y_plus[i] * es.y_minus[i] == 0);
                    }
                    // label consistency: Y- = a_k y on interval k
                    for (std::size_t i = 0; i < es.y_minus.size(); ++i) {
                        const double mid = 0.5 * (es.breakpoints[i] + es.breakpoints[i + 1]);
                        std::size_t k = 0;
                        while (mid > s.boundaries[k + 1]) ++k;
                        CHECK(es.y_minus[i] == es.a[k] * y.at(mid));
                        CHECK(es.y_plus[i] == es.a_prime[k] * y.at(mid));
                    }
                }
    }
}

TEST_CASE("canonical config is gauge invariant and idempotent") {
    const std::vector<int> a{1, 0, -1}, ap{0, 1, 0};
    const auto c = canonical_config(a, ap);
    CHECK(c.a == std::vector<int>{1, 0, 1});
    CHECK(c.a_prime == std::vector<int>{0, 1, 0});
    CHECK(canonical_config(c.a, c.a_prime).a == c.a);

    // full inversion
    const std::vector<int> na{-1, 0, 1}, nap{0, -1, 0};
    CHECK(canonical_config(na, nap).a == c.a);
    CHECK(canonical_config(na, nap).a_prime == c.a_prime);
    // partial inversion of (a1,0,a3) only
    const std::vector<int> pa{-1, 0, 1};
    CHECK(canonical_config(pa, ap).a == c.a);

    const std::vector<int> all{1, 1, 1}, none{0, 0, 0};
    const auto f = canonical_config(all, none);
    CHECK(f.a == all);
    CHECK(f.gauge == all);
}

TEST_CASE("filter closed forms") {
    const double t1 = 1e-4;
    const auto free_w = window_switching(0.0, t1, {});
    CHECK(filter(free_w, 0.0).real() == doctest::Approx(t1));
    for (double w : {1e3, 3.7e4, 2e5}) {
        const double expect = 4.0 * std::pow(std::sin(w * t1 / 2), 2) / (w * w);
        CHECK(std::norm(filter(free_w, w)) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(std::abs(filter(free_w, w)) <= t1 * (1 + 1e-12));
    }
    const std::array<double, 2> hahn_times{t1 / 2, t1};
    const auto hahn = window_switching(0.0, t1, hahn_times);
    CHECK(std::abs(filter(hahn, 0.0)) < 1e-18);
}

TEST_CASE("filter matches numerical quadrature") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> wdist(-3e5, 3e5);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = random_schedule(rng);
        auto y = base_switching(s);
        const double w = wdist(rng);
        const cplx f = filter(y, w);
        if (trial % 20 == 0) {
            const cplx ref = brute_filter(y, w);
            CHECK(std::abs(f - ref) <= 1e-10 * std::max(std::abs(ref), s.duration() * 1e-3));
        }
        // cheap identity check on every trial: F(w) for reversed sign is -F(w)
        for (auto& v : y.values) v = -v;
        CHECK(std::abs(filter(y, w) + f) < 1e-18);
    }
}

TEST_CASE("cpmg sequences") {
    const Constraints c{1e-6, 1e-7};
    const auto one = cpmg_sequence(1, 100e-6, c);
    REQUIRE(one.size() == 2);
    CHECK(one[0] == doctest::Approx(25e-6));
    CHECK(one[1] == doctest::Approx(75e-6));
    const auto hahn = cpmg_sequence(0, 100e-6, c);
    REQUIRE(hahn.size() == 2);
    CHECK(hahn[0] == doctest::Approx(50e-6));
    CHECK(hahn[1] == doctest::Approx(100e-6));
    const Constraints wide{10e-6, 1e-6};
    CHECK_THROWS_AS(cpmg_sequence(1, 19e-6, wide), InfeasibleError);

    for (int n : {0, 1, 2, 3})
        for (double t1 : {19e-6, 50e-6, 130e-6, 405e-6}) {
            std::vector<double> times;
            try {
                times = cpmg_sequence(n, t1, c);
            } catch (const InfeasibleError&) {
                continue;
            }
            auto s = PulseSchedule::free({0.0, snap(t1, c.delta)}, c);
            s.pi_trains[0] = times;
            s = fold_boundary_pulses(s);
            CHECK(schedule_validate(s).empty());
        }
}

TEST_CASE("main frequency support") {
    const Constraints c{1e-6, 1e-7};
    const double wmax = 2e6;
    std::optional<Band> bands[2];
    int i = 0;
    for (double t1 : {1e-4, 1.8e-4}) {
        const auto times = cpmg_sequence(1, t1, c);
        const auto sw = window_switching(0.0, t1, times);
        bands[i++] = mfs(filter_product_weight(sw, sw), 0.5, 0.5, wmax, 200000);
    }
    REQUIRE(bands[0]);
    REQUIRE(bands[1]);
    const double lo = std::min(bands[0]->lo, bands[1]->lo), hi = std::max(bands[0]->hi, bands[1]->hi);
    CHECK(bands[1]->hi >= bands[0]->lo);  // the two bands overlap
    // Edge ratio of the stitched band; absolute values depend on the axis convention.
    CHECK(hi / lo == doctest::Approx(2.43 / 0.64).epsilon(0.02));

    const auto free_w = window_switching(0.0, 1e-4, {});
    const auto fb = mfs(filter_product_weight(free_w, free_w), 0.5, 0.5, wmax, 200000);
    REQUIRE(fb);
    CHECK(fb->lo == 0.0);

    const auto hb = window_switching(0.0, 1e-4, std::vector<double>{5e-5, 1e-4});
    const auto g = filter_product_weight(hb, hb);
    const auto narrow = mfs(g, 0.3, 0.1, wmax, 200000, true);
    const auto wide = mfs(g, 0.5, 0.1, wmax, 200000, true);
    REQUIRE(narrow);
    REQUIRE(wide);
    CHECK(wide->lo <= narrow->lo);
    CHECK(wide->hi >= narrow->hi);
}

TEST_CASE("filter csv") {
    std::ostringstream os;
    const std::vector<double> w{0.0, 1.0};
    write_filter_csv(os, window_switching(0.0, 1.0, {}), w);
    CHECK(os.str().rfind("omega_rad_s,re_F,im_F,abs2_F\n", 0) == 0);
}
