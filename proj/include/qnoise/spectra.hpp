#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "qnoise/core.hpp"
#include "qnoise/quadrature.hpp"

namespace qnoise::spectra {

enum class Parity { symmetric, antisymmetric };

// a1 / (1 + a2 * w)
struct DcTerm {
    double a1 = 0.0;
    double a2 = 0.0;
};

// b / (1 + c * (w - omega0)^2)
struct Bump {
    double b = 0.0;
    double c = 0.0;
    double omega0 = 0.0;
};

enum class FloorFormula {
    constant,     // value
    root_offset,  // |(2 pi w)^(1/4) - value|
};

struct WhiteFloor {
    double threshold = 0.0;
    FloorFormula formula = FloorFormula::constant;
    double value = 0.0;
};

// Multiplies the spectrum by cos(phase + slope * w) above threshold.
struct Modulation {
    double threshold = 0.0;
    double phase = 0.0;
    double slope = 0.0;
};

struct SpectrumModel {
    Parity parity = Parity::symmetric;
    std::optional<DcTerm> dc;
    std::vector<Bump> bumps;
    std::optional<WhiteFloor> white;
    std::optional<Modulation> modulation;
    double cutoff = 0.0;
    double scale = 1.0;

    // Frequencies (w >= 0) where the model has kinks, peaks or fine structure.
    std::vector<double> features() const;
};

double eval_spectrum(const SpectrumModel& model, double omega);

struct SpectrumPair {
    SpectrumModel c;
    SpectrumModel q;

    double cutoff() const;
};

// Fixed frequency quadrature over [0, cutoff] with cached spectra at the nodes.
struct SpectralGrid {
    QuadratureRule rule;
    std::vector<double> s_plus;
    std::vector<double> s_minus;
    double panel_width = 0.0;  // widest panel
    int order = 8;
};

// Panels resolve e^{i w t} for |t| <= t_max plus every spectral feature.
SpectralGrid make_spectral_grid(const SpectrumPair& pair, double t_max, int order = 8, double refine = 1.0);

struct CorrelationValue {
    double c_plus = 0.0;        // real
    double c_minus_imag = 0.0;  // C- is i times this
};

CorrelationValue correlation(const SpectrumPair& pair, double tau);

// Source of C+(tau) and Im C-(tau) for time-domain quadrature.
class CorrelationFunction {
public:
    virtual ~CorrelationFunction() = default;
    virtual double plus(double tau) const = 0;
    virtual double minus_imag(double tau) const = 0;
    // Panel width that resolves the function.
    virtual double resolution() const = 0;
    // Gauss order per panel matching the representation.
    virtual int panel_order() const { return 8; }
};

class CorrelationTable final : public CorrelationFunction {
public:
    static CorrelationTable build(const SpectrumPair& pair, double tau_max, double step);
    // min(delta, pi / (4 w_co))
    static double default_step(const SpectrumPair& pair, double delta);

    double plus(double tau) const override;
    double minus_imag(double tau) const override;
    double resolution() const override { return step_; }
    int panel_order() const override { return 4; }

    double step() const { return step_; }
    double tau_max() const { return step_ * static_cast<double>(cp_.size() - 1); }
    std::size_t size() const { return cp_.size(); }
    double c_plus_at(std::size_t k) const { return cp_[k]; }
    double c_minus_imag_at(std::size_t k) const { return cm_[k]; }

    void write_csv(std::ostream& out) const;

private:
    double hermite(std::span<const double> f, std::span<const double> df, double tau) const;

    double step_ = 0.0;
    std::vector<double> cp_, dcp_, cm_, dcm_;
};

class AnalyticCorrelation final : public CorrelationFunction {
public:
    AnalyticCorrelation(std::function<double(double)> plus, std::function<double(double)> minus_imag,
                         double resolution)
        : plus_(std::move(plus)), minus_(std::move(minus_imag)), resolution_(resolution) {}

    double plus(double tau) const override { return plus_(tau); }
    double minus_imag(double tau) const override { return minus_(tau); }
    double resolution() const override { return resolution_; }

private:
    std::function<double(double)> plus_, minus_;
    double resolution_;
};

struct PhysicalityReport {
    bool pass = true;
    double margin = 0.0;  // min over grid of S+ - |S-|
    double margin_at = 0.0;
    std::vector<double> violations;
};

PhysicalityReport check_physicality(const SpectrumPair& pair, std::span<const double> grid, double tol = 0.0);

// Dense grid on [0, cutoff] that includes every feature frequency.
std::vector<double> physicality_grid(const SpectrumPair& pair, std::size_t points = 200000);

struct CorollaryReport {
    double lhs = 0.0;  // 2 |int_{T1}^{T1+T2} dt int_0^{T1} dt' C-|
    double rhs = 0.0;  // squares of C+ over [0,T1]^2 and [0,T2]^2
    double c_plus0 = 0.0;
    double max_abs_c_minus = 0.0;  // over the supplied table, if any
    bool pointwise_ok = true;
    bool integral_ok = true;
};

CorollaryReport corollary_bounds(const SpectrumPair& pair, double T1, double T2,
                                 const CorrelationTable* table = nullptr);

// One draw of the constructive bath with modes p_k on [-w_co, w_co].
class BathRealization {
public:
    std::span<const double> modes() const { return p_; }
    double x(double t) const;
    double y(double t) const;

    // Single-trajectory estimators whose ensemble means are the discretized C+ and Im C-.
    void correlation_estimate(std::span<const double> taus, std::span<double> c_plus,
                              std::span<double> c_minus_imag) const;

    friend BathRealization synthesize_bath(const SpectrumPair&, std::size_t, std::uint64_t);
    friend class BathSynthesizer;

private:
    std::vector<double> p_, amp_minus_, amp_rest_;
    std::vector<double> a_, b_, c_, d_;
};

// Precomputed mode amplitudes, reused across seeds.
class BathSynthesizer {
public:
    BathSynthesizer(const SpectrumPair& pair, std::size_t n_modes);
    BathRealization draw(std::uint64_t seed) const;
    // Exact mode-sum correlations that the ensemble converges to.
    CorrelationValue mode_sum(double tau) const;

private:
    std::vector<double> p_, amp_minus_, amp_rest_;
    std::vector<double> bin_plus_, bin_minus_;
};

BathRealization synthesize_bath(const SpectrumPair& pair, std::size_t n_modes, std::uint64_t seed);

}  // namespace qnoise::spectra
