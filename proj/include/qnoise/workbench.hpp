#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qnoise/reconstruction.hpp"

namespace qnoise::workbench {

enum class Mode { exact, sampled };
enum class Target { c, q, both };

// One frequency region: a window, its sampling settings and a shot budget for sampled mode.
struct RegionSpec {
    std::string id;
    reconstruction::WindowSpec window;
    double Ts = 0.0;
    int K = 0;
    std::optional<std::uint64_t> shots;
};

struct ExpectationJob {
    std::string id;
    control::PulseSchedule schedule;
    dynamics::State rho;
    dynamics::Observable o = dynamics::Observable::x;
    std::optional<std::uint64_t> shots;
};

struct WorkbenchConfig {
    std::string name = "workbench";
    spectra::SpectrumPair pair;
    control::Constraints constraints;
    std::vector<RegionSpec> c_regions;
    std::vector<RegionSpec> q_regions;
    Mode mode = Mode::exact;
    reconstruction::Pipeline pipeline = reconstruction::Pipeline::direct;
    std::uint64_t seed = 1;
    double gamma = 5.0;
    double alpha = 0.5;
    double beta = 0.5;
    double mask_floor = 1e-3;
    std::size_t max_tracking_samples = 20000;
    bool mitigate_aliasing = false;
    std::vector<ExpectationJob> jobs;
    double correlation_tau_max = 0.0;  // 0: the longest simulated experiment
    std::filesystem::path out_dir = "out";
};

// Spectra and regions of the published simulation study.
spectra::SpectrumPair paper_sec5_pair();
WorkbenchConfig paper_sec5_preset();
WorkbenchConfig preset(std::string_view name);

// JSON with human units ("400 Hz", "0.12 ms", "19 us", "0.002 s^2"); throws ConfigError.
WorkbenchConfig parse_config(std::string_view json_text);
WorkbenchConfig load_config(const std::filesystem::path& path);

// Log-spaced above 100 Hz (512 points per decade), linear below, up to the cutoff.
std::vector<double> reporting_grid(double cutoff);

reconstruction::SamplingPlan plan_region(const WorkbenchConfig& cfg, const RegionSpec& r);

struct RegionResult {
    reconstruction::SamplingPlan plan;
    reconstruction::TimeTraceSet traces;
    reconstruction::SpectrumEstimate estimate;
    reconstruction::ErrorTerms errors;
    double seconds = 0.0;
    std::size_t experiments = 0;
    std::size_t violations = 0;
};

struct ReconstructionRun {
    std::vector<double> omega;
    std::vector<RegionResult> c;
    std::vector<RegionResult> q;
    std::optional<reconstruction::StitchResult> c_stitched;
    std::optional<reconstruction::StitchResult> q_stitched;
    std::vector<std::string> warnings;
};

using Progress = std::function<void(const std::string&)>;

// Regions in order; q regions consume the stitched c estimate. Target q alone needs c_prior.
ReconstructionRun reconstruct(const WorkbenchConfig& cfg, Target target, const Progress& progress = {},
                              const reconstruction::SpectrumEstimate* c_prior = nullptr);

// Reads a file written by write_spectrum_csv; every row is valid.
reconstruction::SpectrumEstimate read_spectrum_csv(std::istream& in, reconstruction::Kind kind);

// Median relative error over the central fraction of a band, skipping masked points and
// frequencies the predicate rejects.
double median_relative_error(const reconstruction::SpectrumEstimate& est, const spectra::SpectrumModel& truth,
                             reconstruction::Band band, double central = 0.8,
                             const std::function<bool(double)>& keep = {});

struct CheckItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Physicality, the C- corollary, the Q4 consistency residual and a backend spot check.
std::vector<CheckItem> run_checks(const WorkbenchConfig& cfg);

// Writers for the CLI; each returns the files written.
// Expectations for the configured jobs plus every configuration the selected regions run.
std::vector<std::filesystem::path> write_simulation(const WorkbenchConfig& cfg, Target target);
std::vector<std::filesystem::path> write_reconstruction(const WorkbenchConfig& cfg, const ReconstructionRun& run);
std::vector<std::filesystem::path> write_plans(const WorkbenchConfig& cfg, Target target);
std::vector<std::filesystem::path> write_filters(const WorkbenchConfig& cfg, Target target);

}  // namespace qnoise::workbench
