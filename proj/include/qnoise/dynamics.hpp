#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qnoise/control.hpp"
#include "qnoise/spectra.hpp"

namespace qnoise::dynamics {

using control::PulseSchedule;
using control::SwitchingFunction;

enum class Axis { x, y, z };
enum class Observable { x, y };

// rho_S = (I + sign * sigma_axis) / 2
struct State {
    Axis axis = Axis::y;
    int sign = 1;
};

// f_o^alpha = Tr(s_o s_alpha s_o s_alpha) / 2
int frame_sign(Observable o, Axis alpha);

enum class Kind { plus, minus };

// Plus values are real; minus values are i * imag.
struct IntegralValue {
    Kind kind = Kind::plus;
    cplx value = 0.0;
};

// Time-domain double integrals of f(t) g(t') C(t - t') over the product of the supports.
// With ordered set only t >= t' contributes. Minus results are Im of the C- integral.
double double_integral_plus(const SwitchingFunction& f, const SwitchingFunction& g,
                            const spectra::CorrelationFunction& corr, bool ordered = false);
double double_integral_minus(const SwitchingFunction& f, const SwitchingFunction& g,
                             const spectra::CorrelationFunction& corr, bool ordered = false);

// I+ = int int Y-(t) Y-(t') C+ over the full square; I- = int int_{t >= t'} Y-(t) Y+(t') C-.
IntegralValue integral_time_domain(const SwitchingFunction& y_minus, const SwitchingFunction& y_other,
                                   const spectra::CorrelationFunction& corr, Kind kind);

// Same quantities from the spectra: (1/pi) int_0 Re|Im[G_f(w) conj(G_g(w))] S(w) dw.
// Throws QuadratureError when the grid cannot resolve the time span.
double spectral_pair_plus(const SwitchingFunction& f, const SwitchingFunction& g, const spectra::SpectralGrid& grid);
double spectral_pair_minus(const SwitchingFunction& f, const SwitchingFunction& g, const spectra::SpectralGrid& grid);

// Windows [0, t1] with y and [t2, t2 + t1] with y' (both given relative to their window start):
// (1/2pi) int Re|Im[e^{i w t2} F'(w) F(-w)] S(w) dw.
IntegralValue integral_freq_domain(const SwitchingFunction& window, const SwitchingFunction& window_prime, double t2,
                                   const spectra::SpectralGrid& grid, Kind kind);

// Interval blocks of the base switching function y:
//   plus(i, j)  = int_{t in j} int_{t' in i} y y C+   (symmetric)
//   minus(i, j) = Im int_{t in j} int_{t' in i} y y C-  for i < j (antisymmetric fill)
struct Blocks {
    Eigen::MatrixXd plus;
    Eigen::MatrixXd minus;

    std::size_t size() const { return static_cast<std::size_t>(plus.rows()); }
    static Blocks zero(std::size_t n);
};

class BlockBackend {
public:
    virtual ~BlockBackend() = default;
    virtual Blocks blocks(std::span<const SwitchingFunction> pieces) const = 0;
};

class FrequencyBackend final : public BlockBackend {
public:
    FrequencyBackend(const spectra::SpectrumPair& pair, double t_max);
    explicit FrequencyBackend(spectra::SpectralGrid grid) : grid_(std::move(grid)) {}
    Blocks blocks(std::span<const SwitchingFunction> pieces) const override;
    const spectra::SpectralGrid& grid() const { return grid_; }

private:
    spectra::SpectralGrid grid_;
};

class TimeBackend final : public BlockBackend {
public:
    explicit TimeBackend(const spectra::CorrelationFunction& corr) : corr_(&corr) {}
    Blocks blocks(std::span<const SwitchingFunction> pieces) const override;

private:
    const spectra::CorrelationFunction* corr_;
};

// y restricted to each interval of the schedule.
std::vector<SwitchingFunction> interval_pieces(const PulseSchedule& s);
Blocks schedule_blocks(const PulseSchedule& s, const BlockBackend& backend);

// Label values for effective switching coefficients a (Y-) and a' (Y+).
double plus_exponent(const Blocks& b, std::span<const int> a);
double minus_phase(const Blocks& b, std::span<const int> a, std::span<const int> a_prime);
cplx v_value(const Blocks& b, std::span<const int> a, std::span<const int> a_prime);

// Integer coefficients of a label: plus over (i <= j) with off-diagonals doubled, minus over (i < j).
// Its value is exp(-sum plus * P - 2i sum minus * M).
struct LabelKey {
    std::vector<int> plus;
    std::vector<int> minus;

    auto operator<=>(const LabelKey&) const = default;
};

LabelKey label_key(std::span<const int> a, std::span<const int> a_prime);
cplx label_value(const Blocks& b, const LabelKey& k);

struct ExperimentConfig {
    std::string id;
    State rho;
    Observable observable = Observable::y;
    PulseSchedule schedule;
    std::optional<std::uint64_t> shots;  // nullopt: infinite
};

// Full (r, r') assembly for rotation angles at the block boundaries.
double expectation(const Blocks& b, const State& rho, Observable o, std::span<const double> angles);
double expectation(const ExperimentConfig& cfg, const BlockBackend& backend);

// The expectation as a linear combination of label values (terms with equal labels merged).
std::map<LabelKey, cplx> expectation_terms(std::size_t n, const State& rho, Observable o,
                                           std::span<const double> angles);

enum class ClosedForm {
    eqb4,    // Y, +y, (k1 pi, k2 pi)
    eqx01,   // Y, +y, single interval
    eqx27,   // Y, +y, N = 2, (k1 pi)
    calA,    // Y, +y combination over (+-pi/2, +-pi/2)
    calB,    // X, -+x combination
    eqa6,    // sinh of twice the corner block, from A and B
    eqb14,   // X, +z, (k1 pi, pi/2)
    eqb14a,  // Y, +z, (k1 pi, pi/2)
    eqx02,   // products of eqb14 / eqb14a: sine of 4 m13
    eqx03,   //   and cosine
    adj_x,   // X, +z, N = 2, (pi/2)
    adj_y,   // Y, +z, N = 2, (pi/2)
};

struct ClosedFormParams {
    int k1 = 0;
    int k2 = 0;
};

// Closed-form value from blocks (N matching the template).
double closed_form_expectation(ClosedForm id, const Blocks& b, ClosedFormParams p = {});
// The same quantity assembled from generic expectation() calls.
double generic_form(ClosedForm id, const Blocks& b, ClosedFormParams p = {});
std::size_t closed_form_intervals(ClosedForm id);
std::string to_string(ClosedForm id);

// Empirical mean of M outcomes +-1 with P(+1) = (1 + e) / 2; infinite shots return e.
double sample_shots(double e, std::optional<std::uint64_t> shots, std::uint64_t seed);

struct ExpectationRow {
    std::string config_id;
    double expectation = 0.0;
    std::optional<std::uint64_t> shots;
    double estimate = 0.0;
    std::uint64_t seed = 0;
};

void write_expectations_csv(std::ostream& out, std::span<const ExpectationRow> rows);

}  // namespace qnoise::dynamics
