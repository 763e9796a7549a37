#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnoise/control.hpp"
#include "qnoise/dynamics.hpp"
#include "qnoise/spectra.hpp"

namespace qnoise::inference {

using control::PulseSchedule;
using control::SwitchingFunction;
using dynamics::Kind;

struct Measurement {
    double value = 0.0;
    double variance = 0.0;
};

// Evaluates configured experiments against a noise model, with optional shot sampling.
// Interval blocks are cached by geometry and every configuration is measured once, so
// configurations repeated through stationarity reuse the same sample.
class ExperimentRunner {
public:
    ExperimentRunner(spectra::SpectrumPair truth, control::Constraints c, std::optional<std::uint64_t> shots,
                     std::uint64_t seed);
    ExperimentRunner(std::shared_ptr<const dynamics::BlockBackend> backend, control::Constraints c,
                     std::optional<std::uint64_t> shots, std::uint64_t seed);

    // The schedule must start at 0; times are snapped to the delta grid. Rule violations are
    // counted, not raised.
    Measurement measure(const PulseSchedule& s, dynamics::State rho, dynamics::Observable o);
    dynamics::Blocks blocks(const PulseSchedule& s);

    const control::Constraints& constraints() const { return constraints_; }
    std::optional<std::uint64_t> shots() const { return shots_; }

    std::size_t experiments() const;
    std::size_t violations() const;
    std::vector<std::string> violation_log() const;

    void record(bool on) { record_ = on; }
    // Recorded rows sorted by configuration id.
    std::vector<dynamics::ExpectationRow> rows() const;

private:
    const dynamics::BlockBackend& backend_for(double span);
    std::string geometry_key(const PulseSchedule& s) const;

    std::optional<spectra::SpectrumPair> truth_;
    std::shared_ptr<const dynamics::BlockBackend> fixed_;
    std::map<int, std::shared_ptr<const dynamics::BlockBackend>> backends_;
    control::Constraints constraints_;
    std::optional<std::uint64_t> shots_;
    std::uint64_t seed_;
    bool record_ = false;

    mutable std::mutex mu_;
    mutable std::mutex backend_mu_;
    std::map<std::string, dynamics::Blocks> block_cache_;
    std::map<std::string, Measurement> measured_;
    std::map<std::string, dynamics::ExpectationRow> rows_;
    std::vector<std::string> violation_log_;
};

// Angle of a minus block as measured: sin and cos of multiplier * value.
struct Phase {
    double s = 0.0;
    double c = 1.0;
    int multiplier = 4;
};

struct IntegralEstimate {
    std::string label;
    Kind kind = Kind::plus;
    double value = 0.0;  // plus: the integral; minus: its imaginary part
    int branch_k = 0;
    double variance = 0.0;
    bool ill_conditioned = false;
    std::optional<Phase> phase;  // minus estimates from sin/cos pairs
};

void write_integral_estimates_csv(std::ostream& out, std::span<const IntegralEstimate> rows);

// Variance of f(x) from independent input variances, by central differences.
double propagate_variance(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                          std::span<const double> var);

// ---- direct measurement equations -------------------------------------------------

struct BlockOptions {
    double divisor_floor = 1e-6;
    double pretest_threshold = 0.05;         // on 4B^2 - A^2 (16 when noiseless)
    int max_middle_pulses = 6;               // DD candidates for the middle interval
    std::optional<std::uint64_t> pretest_shots;  // default: runner's budget
};

struct PretestResult {
    bool ok = false;
    double value = 0.0;  // estimated 4B^2 - A^2
};

// Pi times (relative to the window start) of the interior flips of a window.
std::vector<double> flip_times(const SwitchingFunction& w);

// Conditioning check for separated windows [0, t1] and [t2, t2 + t1'] with the given middle
// pulses: 16 cos^2(2 m) A^2 A'^2 from one N = 1 and one N = 2 experiment.
PretestResult magnitude_pretest(ExperimentRunner& run, const SwitchingFunction& earlier,
                                const SwitchingFunction& later, std::span<const double> middle_pulses,
                                const BlockOptions& opt = {});

// int_{t in later} int_{t' in earlier} g(t) f(t') C(t - t'), pieces in absolute time with
// earlier ending no later than later begins. Minus values come with their measured phase.
IntegralEstimate measure_block(ExperimentRunner& run, const SwitchingFunction& earlier,
                               const SwitchingFunction& later, Kind kind, const BlockOptions& opt = {});

// int int f f C+ over the piece's own square.
IntegralEstimate measure_square(ExperimentRunner& run, const SwitchingFunction& piece);

// Same-support rectangle int_{t in J} int_{t' in J} g(t) f(t') C(t - t') via constant cells.
IntegralEstimate measure_same_support(ExperimentRunner& run, const SwitchingFunction& f,
                                      const SwitchingFunction& g, Kind kind, const BlockOptions& opt = {});

// ---- stationarity schemes -----------------------------------------------------------

struct DeadtimePieces {
    IntegralEstimate green;   // later window tail against the whole earlier window
    IntegralEstimate orange;  // overlap part of the later window against the head of the earlier one
    IntegralEstimate red;     // overlap square
};

// Pieces for windows w on [0, t1] and w(. - t2) on [t2, t2 + t1] with 0 <= t2 < t1.
DeadtimePieces deadtime_pieces(ExperimentRunner& run, const SwitchingFunction& window, double t2, Kind kind,
                               const BlockOptions& opt = {});
IntegralEstimate deadtime_compose(const DeadtimePieces& p);

// Rectangle integral of C (y = y' = 1) with t' in [a, b] and t in [c, d].
using RectSource = std::function<Measurement(double a, double b, double c, double d)>;

struct CellEstimate {
    double value = 0.0;
    double variance = 0.0;
    bool noisy = false;  // differencing amplified noise beyond the warning ratio
};

// delta x delta cell t' in [u, u + delta], t in [v, v + delta] by double differencing of
// rectangles anchored q1 cells to the left and q3 cells to the right.
CellEstimate strip_refine(const RectSource& rect, double u, double v, double delta, int q1, int q3,
                          double noise_ratio = 1.0);

// Sum_q f_q cell_q / delta^2 for cells I0(0, delta, q delta, (q + 1) delta).
cplx full_access_Mf(std::span<const double> cells, std::span<const cplx> f, double delta);

// ---- branch tracking -------------------------------------------------------------------

struct SafeZoneState {
    double frontier = 0.0;  // last t2 processed
    int k = 0;
    double last_s = 0.0;
    double last_c = 1.0;
    double eps = 0.0;
    bool started = false;
};

struct BranchResult {
    std::vector<double> phi;  // unwrapped angle per sample
    std::vector<int> k;
    std::vector<std::size_t> gaps;     // ambiguous crossings
    std::vector<std::size_t> touches;  // |s| reached 1 without a branch change
};

// Unwraps phi from (s, c) samples in t2 order, continuing from zone.
BranchResult resolve_branch(std::span<const double> s, std::span<const double> c, SafeZoneState& zone,
                            double noise = 0.0);

struct SafeZoneBound {
    double bound = 0.0;       // upper bound on |Im I-| for any t2
    double derivative = 0.0;  // upper bound on |d Im I- / d t2|
};

SafeZoneBound safe_zone_bound(const std::function<double(double)>& s_plus, const SwitchingFunction& f,
                              const SwitchingFunction& fp, double w_max);

// t2 step keeping multiplier * Im I- changes below pi/4 per step, on the delta grid, at most cap.
double tracking_step(const SafeZoneBound& b, int multiplier, double cap, double delta);

// ---- Q-quantity path ---------------------------------------------------------------------

struct QConfig {
    dynamics::State rho;
    dynamics::Observable o = dynamics::Observable::x;
    std::array<int, 4> theta{};  // multiples of pi/2 at the four boundaries

    std::string label() const;
    std::array<double, 4> angles() const;
};

// All (rho in {+-x, +-y}, O in {x, y}, theta in {0, pi/2, pi}^4) configurations for N = 3.
const std::vector<QConfig>& q_configs();

struct QQuantity {
    std::string id;
    cplx value = 0.0;
    std::vector<std::string> constituents;
};

using ExpectationSet = std::map<std::string, double>;

std::vector<std::string> q_ids();

// Throws EstimationError naming the absent configurations when the set cannot reach a quantity.
std::vector<QQuantity> extract_q_quantities(const ExpectationSet& e, std::span<const std::string> ids = {});

// Forward helper: every configuration evaluated on the given blocks.
ExpectationSet q_expectations(const dynamics::Blocks& b);

// Labels P11..P33 (plus) from Q1, Q5 and the pi set.
std::vector<IntegralEstimate> infer_plus_integrals(std::span<const QQuantity> qs);
// Labels M12, M13, M23 (principal values of 4 m / 4) from Q2, Q3, Q5, Q6.
std::vector<IntegralEstimate> infer_minus_integrals(std::span<const QQuantity> qs,
                                                    std::span<const IntegralEstimate> plus,
                                                    double divisor_floor = 1e-6);
// |Q4+ - 2 e^{-P22} cos(2 M12)|
double q4_residual(std::span<const QQuantity> qs, std::span<const IntegralEstimate> plus,
                   std::span<const IntegralEstimate> minus);

}  // namespace qnoise::inference
