#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "qnoise/dynamics.hpp"

using namespace qnoise;
using namespace qnoise::dynamics;
using control::PulseSchedule;
using control::SwitchingFunction;

namespace {

spectra::SpectrumModel bump(double b, double c, double w0, double wco, spectra::Parity p) {
    spectra::SpectrumModel m;
    m.parity = p;
    m.bumps.push_back({b, c, w0});
    m.cutoff = wco;
    return m;
}

spectra::SpectrumPair random_pair(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double wco = 2e5;
    auto c = bump(2e3 + 4e3 * u(rng), 1e-8 + 1e-7 * u(rng), 2e4 + 4e4 * u(rng), wco, spectra::Parity::symmetric);
    c.dc = spectra::DcTerm{1e4 * u(rng), 1e-4};
    auto q = c;
    q.parity = spectra::Parity::antisymmetric;
    q.scale = 0.8 * u(rng);
    return {c, q};
}

Blocks random_blocks(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto b = Blocks::zero(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            const double p = i == j ? 0.4 * std::abs(u(rng)) : 0.15 * u(rng);
            b.plus(ii, jj) = b.plus(jj, ii) = p;
            if (i != j) {
                const double m = 1.5 * u(rng);
                b.minus(ii, jj) = m;
                b.minus(jj, ii) = -m;
            }
        }
    return b;
}

SwitchingFunction hahn(double start, double t1) {
    const std::vector<double> times{t1 / 2};
    return control::window_switching(start, t1, times);
}

// Qubit coupled through sigma_z to one thermal oscillator: an exactly solvable Gaussian bath.
class OscillatorBath {
public:
    OscillatorBath(double w0, double g, double nbar, int levels) : w0_(w0), g_(g), nbar_(nbar), n_(levels) {}

    double c_plus(double tau) const { return 2 * g_ * g_ * (2 * nbar_ + 1) * std::cos(w0_ * tau); }
    double c_minus_imag(double tau) const { return -2 * g_ * g_ * std::sin(w0_ * tau); }

    double expectation(const PulseSchedule& s, const State& st, Observable o) const {
        using Mat = Eigen::MatrixXcd;
        const int d = 2 * n_;
        Mat a = Mat::Zero(n_, n_);
        for (int k = 1; k < n_; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
        const Mat num = a.adjoint() * a;
        const Mat x = a + a.adjoint();
        auto evolve = [&](double dt) {
            Mat u = Mat::Zero(d, d);
            const Mat hp = w0_ * num + g_ * x, hm = w0_ * num - g_ * x;
            u.topLeftCorner(n_, n_) = (cplx(0, -dt) * hp).exp();
            u.bottomRightCorner(n_, n_) = (cplx(0, -dt) * hm).exp();
            return u;
        };
        auto rot = [&](double theta) {
            Eigen::Matrix2cd r;
            r << std::cos(theta / 2), -std::sin(theta / 2), std::sin(theta / 2), std::cos(theta / 2);
            return kron(r, Mat::Identity(n_, n_));
        };
        Mat thermal = Mat::Zero(n_, n_);
        const double q = nbar_ / (1 + nbar_);
        double z = 0;
        for (int k = 0; k < n_; ++k) z += std::pow(q, k);
        for (int k = 0; k < n_; ++k) thermal(k, k) = std::pow(q, k) / z;
        Eigen::Matrix2cd rs = 0.5 * (Eigen::Matrix2cd::Identity() + static_cast<double>(st.sign) * pauli(st.axis));
        Mat rho = kron(rs, thermal);

        const auto f = control::fold_boundary_pulses(s);
        std::vector<std::pair<double, double>> events;  // (time, angle)
        for (std::size_t k = 0; k < f.boundaries.size(); ++k) events.push_back({f.boundaries[k], f.angles[k]});
        int npi = 0;
        for (const auto& tr : f.pi_trains)
            for (double t : tr) {
                events.push_back({t, pi});
                ++npi;
            }
        std::stable_sort(events.begin(), events.end(), [](auto& l, auto& r) { return l.first < r.first; });
        Mat u = Mat::Identity(d, d);
        double now = 0.0;
        for (const auto& [t, th] : events) {
            if (t > now) {
                u = evolve(t - now) * u;
                now = t;
            }
            u = rot(th) * u;
        }
        rho = u * rho * u.adjoint();
        Eigen::Matrix2cd obs = pauli(o == Observable::x ? Axis::x : Axis::y);
        // toggling frame: conjugate by the interior pi pulses
        if (npi % 2 == 1) obs = pauli(Axis::y) * obs * pauli(Axis::y);
        return (rho * kron(obs, Mat::Identity(n_, n_))).trace().real();
    }

private:
    static Eigen::Matrix2cd pauli(Axis a) {
        Eigen::Matrix2cd m;
        if (a == Axis::x) m << 0, 1, 1, 0;
        else if (a == Axis::y) m << 0, cplx(0, -1), cplx(0, 1), 0;
        else m << 1, 0, 0, -1;
        return m;
    }
    static Eigen::MatrixXcd kron(const Eigen::Matrix2cd& s, const Eigen::MatrixXcd& b) {
        const auto n = b.rows();
        Eigen::MatrixXcd out(2 * n, 2 * n);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) out.block(i * n, j * n, n, n) = s(i, j) * b;
        return out;
    }

    double w0_, g_, nbar_;
    int n_;
};

}  // namespace

TEST_CASE("frame signs") {
    CHECK(frame_sign(Observable::x, Axis::x) == 1);
    CHECK(frame_sign(Observable::y, Axis::y) == 1);
    CHECK(frame_sign(Observable::x, Axis::z) == -1);
    CHECK(frame_sign(Observable::y, Axis::z) == -1);
    CHECK(frame_sign(Observable::x, Axis::y) == -1);
}

TEST_CASE("time-domain integrals: trivial and flat cases") {
    const double T = 3e-4, c0 = 2.5e7;
    spectra::AnalyticCorrelation flat([&](double) { return c0; }, [](double) { return 0.0; }, 1e-5);
    const auto free_y = control::window_switching(0.0, T, {});
    CHECK(integral_time_domain(free_y, free_y, flat, Kind::plus).value.real() == doctest::Approx(c0 * T * T));
    SwitchingFunction zero{{0.0, T}, {0}};
    spectra::AnalyticCorrelation osc([](double t) { return std::cos(1e4 * t); }, [](double t) { return std::sin(3e4 * t); },
                                     1e-5);
    CHECK(integral_time_domain(free_y, zero, osc, Kind::minus).value == cplx(0.0, 0.0));
}

TEST_CASE("frequency and time backends agree on separated windows") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 4; ++trial) {
        const auto pair = random_pair(rng);
        const double t1 = 60e-6, t2 = 3 * t1;
        const auto table = spectra::CorrelationTable::build(pair, t2 + t1, 5e-8);
        const auto grid = spectra::make_spectral_grid(pair, t2 + t1, 8, 1.25);
        const auto w = hahn(0.0, t1);
        for (Kind k : {Kind::plus, Kind::minus}) {
            const auto f = integral_freq_domain(w, w, t2, grid, k);
            const auto later = hahn(t2, t1);
            const double t = k == Kind::plus ? double_integral_plus(later, w, table) : double_integral_minus(later, w, table);
            const double fv = k == Kind::plus ? f.value.real() : f.value.imag();
            CHECK(std::abs(fv - t) <= 1e-5 * std::max(1.0, std::abs(t)));
        }
    }
}

TEST_CASE("separated minus integral decays with t2") {
    spectra::SpectrumPair p{bump(3e3, 1e-8, 3e4, 2e5, spectra::Parity::symmetric),
                            bump(2e3, 1e-8, 3e4, 2e5, spectra::Parity::antisymmetric)};
    const double t1 = 50e-6;
    const auto w = hahn(0.0, t1);
    auto at = [&](double t2) {
        const auto g = spectra::make_spectral_grid(p, t2 + t1, 8, 1.25);
        return std::abs(integral_freq_domain(w, w, t2, g, Kind::minus).value.imag());
    };
    // the bump has width ~1e4 rad/s, so correlations decay on a ~1e-4 s scale
    double near = 0.0, far = 0.0;
    for (double d : {0.0, 7e-6, 13e-6}) {
        near = std::max(near, at(2e-4 + d));
        far = std::max(far, at(2e-3 + d));
    }
    CHECK(far < 0.05 * near);
    const auto coarse = spectra::make_spectral_grid(p, 1e-4, 8, 1.0);
    CHECK_THROWS_AS(integral_freq_domain(w, w, 1e-3, coarse, Kind::plus), QuadratureError);
}

TEST_CASE("expectation: trivial cases") {
    const auto b = Blocks::zero(3);
    const double ang[4] = {0, 0, 0, 0};
    CHECK(expectation(b, {Axis::y, 1}, Observable::y, ang) == doctest::Approx(1.0));
    std::mt19937_64 rng(9);
    const auto r = random_blocks(rng, 3);
    // pi-only control with +x / X gives exp(-I+(T)) over the whole window
    const double pis[4] = {0, pi, pi, 0};
    const int all[3] = {1, -1, 1};
    CHECK(expectation(r, {Axis::x, 1}, Observable::x, pis) == doctest::Approx(std::exp(-plus_exponent(r, all))));
    const double none[4] = {0, 0, 0, 0};
    const int ones[3] = {1, 1, 1};
    CHECK(expectation(r, {Axis::x, 1}, Observable::x, none) == doctest::Approx(std::exp(-plus_exponent(r, ones))));
}

TEST_CASE("closed forms match the generic engine") {
    std::mt19937_64 rng(21);
    const ClosedForm ids[] = {ClosedForm::eqb4,  ClosedForm::eqx01,  ClosedForm::eqx27, ClosedForm::calA,
                              ClosedForm::calB,  ClosedForm::eqa6,   ClosedForm::eqb14, ClosedForm::eqb14a,
                              ClosedForm::eqx02, ClosedForm::eqx03,  ClosedForm::adj_x, ClosedForm::adj_y};
    for (auto id : ids)
        for (int trial = 0; trial < 20; ++trial) {
            const auto b = random_blocks(rng, closed_form_intervals(id));
            ClosedFormParams p{trial % 2, (trial / 2) % 2};
            const double c = closed_form_expectation(id, b, p);
            const double g = generic_form(id, b, p);
            INFO(to_string(id), " k1=", p.k1, " k2=", p.k2);
            CHECK(std::abs(c - g) <= 1e-8);
        }
}

TEST_CASE("engine matches an exactly solvable oscillator bath") {
    const double w0 = 2e5, g = 4e4, nbar = 0.4;
    OscillatorBath bath(w0, g, nbar, 40);
    spectra::AnalyticCorrelation corr([&](double t) { return bath.c_plus(t); },
                                      [&](double t) { return bath.c_minus_imag(t); }, 2e-6);
    const TimeBackend backend(corr);
    const control::Constraints c{1e-6, 1e-7};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ang(-pi, pi);
    const State states[] = {{Axis::x, 1}, {Axis::y, -1}, {Axis::z, 1}};
    double largest = 0.0;
    for (int trial = 0; trial < 6; ++trial) {
        auto s = PulseSchedule::free({0.0, 12e-6, 20e-6, 31e-6}, c);
        s.angles = {ang(rng), ang(rng), ang(rng), ang(rng)};
        if (trial % 2 == 1) s.pi_trains[0] = {6e-6};
        if (trial % 3 == 2) s.pi_trains[2] = {25e-6};
        for (const auto& st : states)
            for (Observable o : {Observable::x, Observable::y}) {
                ExperimentConfig cfg{"t", st, o, s, std::nullopt};
                const double engine = expectation(cfg, backend);
                const double exact = bath.expectation(s, st, o);
                CHECK(std::abs(engine - exact) < 1e-9);
                largest = std::max(largest, std::abs(exact));
            }
    }
    CHECK(largest > 0.5);
}

TEST_CASE("shot sampling") {
    CHECK(sample_shots(1.0, 1000, 1) == 1.0);
    CHECK(sample_shots(0.5, std::nullopt, 1) == 0.5);
    CHECK(std::abs(sample_shots(0.0, 1'000'000, 2)) < 5e-3);
    CHECK(sample_shots(0.3, 5000, 7) == sample_shots(0.3, 5000, 7));
    std::ostringstream os;
    const ExpectationRow rows[] = {{"a", 0.5, std::nullopt, 0.5, 0}, {"b", 0.25, 100, 0.26, 3}};
    write_expectations_csv(os, rows);
    CHECK(os.str() == "config_id,expectation,shots,estimate,seed\na,0.5,inf,0.5,0\nb,0.25,100,0.26,3\n");
}
