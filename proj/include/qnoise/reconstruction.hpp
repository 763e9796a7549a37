#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnoise/control.hpp"
#include "qnoise/inference.hpp"

namespace qnoise::reconstruction {

using control::Band;
using dynamics::Kind;

enum class SequenceKind { free, hahn, cpmg };

// A window of length t1 modulated by free evolution, a Hahn echo or an n-CPMG train.
// Pulses coinciding with the window end are dropped, so the window keeps its leading sign.
struct WindowSpec {
    SequenceKind kind = SequenceKind::free;
    int n = 0;  // CPMG order
    double t1 = 0.0;

    std::vector<double> pulses(const control::Constraints& c) const;
    control::SwitchingFunction switching(const control::Constraints& c) const;
    std::string name() const;
};

struct SamplingPlan {
    std::string id;
    WindowSpec window;
    double Ts = 0.0;
    int K = 0;
    std::optional<std::uint64_t> shots;
    Band target;            // MFS [wa, wb]
    double omega_c = 0.0;   // effective cutoff of |F|^2 S
    double gamma = 5.0;     // margin on the resolution rule
    bool dc_plan = false;   // target reaches w = 0
    control::Constraints constraints;
};

struct PlanOptions {
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 5.0;
    double omega_c_multiple = 4.0;
    double spectral_cutoff = 0.0;  // caps omega_c when positive
    std::optional<double> Ts;  // fixed period (validated, snapped)
    std::optional<int> K;      // fixed count
    std::optional<std::uint64_t> shots;
    std::string id;
};

// Picks or validates (Ts, K) for the window. Throws InfeasibleError when no legal plan exists.
SamplingPlan plan_sampling(const WindowSpec& window, std::optional<Band> target, const control::Constraints& c,
                           const PlanOptions& opt = {});

// Broken sampling rules of a plan (empty when legal).
std::vector<std::string> plan_violations(const SamplingPlan& p);

// MFS of the window's |F|^2.
std::optional<Band> window_mfs(const WindowSpec& w, const control::Constraints& c, double alpha = 0.5,
                               double beta = 0.5);

struct TimeTraceSet {
    std::string plan_id;
    Kind kind = Kind::plus;
    double Ts = 0.0;
    std::vector<double> t2;
    std::vector<double> value;
    std::vector<double> variance;
    std::vector<int> branch;
    std::vector<bool> missing;  // interpolated entries
    bool degraded = false;             // runs of missing entries
    bool tracking_unverified = false;  // step cap bound the branch tracking
    std::size_t tracked_samples = 0;
};

// Direct measurement equations, or the Q-quantity algebra over all 648 configurations
// (separated samples only; overlapping and adjacent samples use the direct equations).
enum class Pipeline { direct, q_algebra };

struct PipelineOptions {
    Pipeline pipeline = Pipeline::direct;
    inference::BlockOptions block;
    std::size_t max_tracking_samples = 20000;
    // Estimated S+ (required for the minus kind): feeds the safe-zone bound.
    std::function<double(double)> s_plus_estimate;
    double w_max = 0.0;  // integration range for bounds (spectral cutoff)
};

TimeTraceSet collect_traces(const SamplingPlan& plan, inference::ExperimentRunner& run, Kind kind,
                            const PipelineOptions& opt);

struct SpectrumEstimate {
    Kind kind = Kind::plus;
    std::vector<double> omega;
    std::vector<double> value;
    std::vector<double> variance;
    std::vector<double> error_bound;
    std::vector<bool> valid;  // divisor above the floor
    std::vector<bool> mfs;
    std::vector<std::string> plan_id;
};

// DTFT inversion on an arbitrary grid; points with |F|^2 below floor * max are masked.
SpectrumEstimate dtft_reconstruct(const TimeTraceSet& traces, const SamplingPlan& plan,
                                  std::span<const double> omega, double floor = 1e-3);

struct StitchResult {
    SpectrumEstimate estimate;
    std::vector<Band> gaps;  // target frequencies no region covers
};

// Inverse-variance average over MFS points of estimates sharing one grid.
StitchResult stitch_regions(std::span<const SpectrumEstimate> parts, std::optional<Band> target = {});

struct ErrorTerms {
    std::vector<double> finite_k;
    std::vector<double> aliasing;
    std::vector<double> trace;
    std::vector<double> total;
};

// Three-term bound; s_hat is the current estimate (signed for minus spectra).
ErrorTerms error_bounds(const SamplingPlan& plan, const TimeTraceSet& traces, const SpectrumEstimate& est,
                        const std::function<double(double)>& s_hat, double w_max);
void apply_error_bounds(SpectrumEstimate& est, const ErrorTerms& terms);

// Subtracts the aliasing images predicted from s_hat.
SpectrumEstimate mitigate_aliasing(const SpectrumEstimate& est, const SamplingPlan& plan,
                                   const std::function<double(double)>& s_hat, double w_max);

// Piecewise-linear interpolant over valid points, held constant beyond the ends,
// odd-extended for minus spectra.
std::function<double(double)> interpolant(const SpectrumEstimate& est);

void write_spectrum_csv(std::ostream& out, const SpectrumEstimate& est);

}  // namespace qnoise::reconstruction
