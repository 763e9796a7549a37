#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnoise/core.hpp"

namespace qnoise::control {

struct Constraints {
    double Delta = 10e-6;  // minimum separation between pulses
    double delta = 1e-6;   // timing resolution
};

// True when t is an integer multiple of delta (to a relative 1e-6 of delta).
bool on_grid(double t, double delta);
double snap(double t, double delta);

// Boundaries t_0 = 0 < ... < t_N = T with angles theta_j applied at t_j (y-rotations),
// plus the pi-pulse train inside each interval (absolute times).
struct PulseSchedule {
    std::vector<double> boundaries;
    std::vector<double> angles;
    std::vector<std::vector<double>> pi_trains;
    Constraints constraints;

    std::size_t intervals() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
    double duration() const { return boundaries.empty() ? 0.0 : boundaries.back(); }

    // Empty trains and zero angles for the given boundaries.
    static PulseSchedule free(std::vector<double> boundaries, Constraints c = {});
};

// Pi pulses that coincide with a boundary commute with the boundary rotation; they are
// moved into the angle (theta + pi) so trains hold only interior pulses.
PulseSchedule fold_boundary_pulses(PulseSchedule s);

struct Violation {
    std::string what;
    double time = 0.0;
};

std::vector<Violation> schedule_validate(const PulseSchedule& s);

// Piecewise constant +-1 (or 0 for filters) on [breakpoints.front(), breakpoints.back()].
struct SwitchingFunction {
    std::vector<double> breakpoints;
    std::vector<int> values;

    int at(double t) const;
    std::size_t segments() const { return values.size(); }
};

// y(t): +1 at t=0, flipped by every interior pi pulse.
SwitchingFunction base_switching(const PulseSchedule& s);

// r has N+1 bits, one per boundary. On interval k (1-based) y_r = (-1)^{r_k + ... + r_N} y.
SwitchingFunction toggling_switch(const PulseSchedule& s, std::span<const int> r);

struct EffectiveSwitching {
    std::vector<double> breakpoints;
    std::vector<int> y_plus;
    std::vector<int> y_minus;
    std::vector<int> a;        // Y- = a_k y on interval k
    std::vector<int> a_prime;  // Y+ = a'_k y on interval k
};

// Y+- = (y_r +- f_z y_r') / 2.
EffectiveSwitching effective_switchings(const PulseSchedule& s, std::span<const int> r, std::span<const int> rp,
                                        int f_z = -1);

struct CanonicalConfig {
    std::vector<int> a;        // 1 where Y- is active, else 0
    std::vector<int> a_prime;  // 1 where Y+ is active, else 0
    std::vector<int> gauge;    // sign per interval mapping the representative back

    bool operator==(const CanonicalConfig&) const = default;
};

CanonicalConfig canonical_config(const EffectiveSwitching& es);
CanonicalConfig canonical_config(std::span<const int> a, std::span<const int> a_prime);

// Pi times inside [0, t1] for n-CPMG, including the final pulse when n is even.
// Throws InfeasibleError when the grid-snapped sequence breaks the Delta rule.
std::vector<double> cpmg_sequence(int n, double t1, const Constraints& c);

// Switching function on [start, start + t1] for the pulses at start + times.
SwitchingFunction window_switching(double start, double t1, std::span<const double> pi_times);

// int_a^b e^{i w t} dt
cplx segment_transform(double a, double b, double w);

// int e^{i w t} y(t) dt over the switching function's support.
cplx filter(const SwitchingFunction& sw, double w);

void write_filter_csv(std::ostream& out, const SwitchingFunction& sw, std::span<const double> omegas);

struct Band {
    double lo = 0.0;
    double hi = 0.0;
};

// Main frequency support of a nonnegative weight g(w) on [0, w_max]: the connected
// region around the peak where g >= beta * max, accepted when it holds at least an
// alpha fraction of the total weight. With minimal set, the narrowest sub-band of that
// region holding the alpha fraction is returned instead. Empty when no band qualifies.
std::optional<Band> mfs(const std::function<double(double)>& g, double alpha, double beta, double w_max,
                        std::size_t samples = 20000, bool minimal = false);

// |Re[F(w) conj(F'(w))]| for two windows with the same origin.
std::function<double(double)> filter_product_weight(SwitchingFunction f, SwitchingFunction fp, bool imaginary = false);

}  // namespace qnoise::control
