#include "qnoise/workbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "qnoise/svg.hpp"

namespace qnoise::workbench {

using nlohmann::json;
using dynamics::Kind;
using reconstruction::Band;
using reconstruction::SequenceKind;
using reconstruction::WindowSpec;

namespace fs = std::filesystem;

namespace {

// ---- units ---------------------------------------------------------------------------------

enum class Dim {
    time,       // s
    time2,      // s^2
    frequency,  // angular, rad/s
    rate,       // spectral magnitudes, 1/s without a 2 pi
    plain,
};

std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double quantity(const json& v, Dim d, const std::string& field) {
    if (v.is_number()) return v.get<double>();
    if (!v.is_string()) throw ConfigError(field + ": expected a number or a quantity string");
    const std::string text = v.get<std::string>();
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ConfigError(field + ": cannot read a number from '" + text + "'");
    }
    const std::string unit = trim(text.substr(used));
    static const std::map<std::string, double> time{{"s", 1.0},     {"ms", 1e-3}, {"us", 1e-6},
                                                    {"\xce\xbcs", 1e-6}, {"\xc2\xb5s", 1e-6}, {"ns", 1e-9}};
    static const std::map<std::string, double> time2{{"s^2", 1.0},   {"s2", 1.0},    {"ms^2", 1e-6},
                                                     {"ms2", 1e-6},  {"us^2", 1e-12}, {"\xce\xbcs^2", 1e-12}};
    static const std::map<std::string, double> hz{{"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}};
    auto look = [&](const std::map<std::string, double>& table) -> std::optional<double> {
        const auto it = table.find(unit);
        if (it == table.end()) return std::nullopt;
        return it->second;
    };
    std::optional<double> f;
    switch (d) {
        case Dim::time:
            f = unit.empty() ? 1.0 : look(time).value_or(std::nan(""));
            break;
        case Dim::time2:
            f = unit.empty() ? 1.0 : look(time2).value_or(std::nan(""));
            break;
        case Dim::frequency:
            if (unit.empty() || unit == "rad/s") f = 1.0;
            else if (unit == "krad/s") f = 1e3;
            else if (auto h = look(hz)) f = two_pi * *h;
            break;
        case Dim::rate:
            if (unit.empty() || unit == "1/s") f = 1.0;
            else if (auto h = look(hz)) f = *h;
            break;
        case Dim::plain:
            if (unit.empty()) f = 1.0;
            break;
    }
    if (!f || std::isnan(*f)) throw ConfigError(field + ": unit '" + unit + "' not understood");
    return x * *f;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::optional<std::uint64_t> shots_of(const json& j, const std::string& field) {
    if (!j.contains("shots") || j.at("shots").is_null()) return std::nullopt;
    const auto& v = j.at("shots");
    if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinite")) return std::nullopt;
    const double s = quantity(v, Dim::plain, field + ".shots");
    if (!(s >= 1.0)) throw ConfigError(field + ".shots must be at least 1");
    return static_cast<std::uint64_t>(std::llround(s));
}

// ---- spectra -----------------------------------------------------------------------------

spectra::SpectrumModel parse_model(const json& j, spectra::Parity parity, const std::string& field) {
    spectra::SpectrumModel m;
    m.parity = parity;
    if (j.contains("dc")) {
        const auto& d = j.at("dc");
        // a2 and c multiply the frequency in Hz, as in the published parameterization.
        m.dc = spectra::DcTerm{quantity(d.at("a1"), Dim::rate, field + ".dc.a1"),
                               quantity(d.at("a2"), Dim::time, field + ".dc.a2") / two_pi};
    }
    if (j.contains("bumps"))
        for (const auto& b : j.at("bumps"))
            m.bumps.push_back({quantity(b.at("b"), Dim::rate, field + ".bumps.b"),
                               quantity(b.at("c"), Dim::time2, field + ".bumps.c") / (two_pi * two_pi),
                               quantity(b.at("f"), Dim::frequency, field + ".bumps.f")});
    if (j.contains("white")) {
        const auto& w = j.at("white");
        spectra::WhiteFloor f;
        f.threshold = quantity(w.at("from"), Dim::frequency, field + ".white.from");
        const auto formula = get_or<std::string>(w, "formula", "constant");
        if (formula == "constant") f.formula = spectra::FloorFormula::constant;
        else if (formula == "root_offset") f.formula = spectra::FloorFormula::root_offset;
        else throw ConfigError(field + ".white.formula must be constant or root_offset");
        f.value = quantity(w.at("value"), Dim::plain, field + ".white.value");
        m.white = f;
    }
    if (j.contains("modulation")) {
        const auto& w = j.at("modulation");
        m.modulation = spectra::Modulation{quantity(w.at("from"), Dim::frequency, field + ".modulation.from"),
                                           quantity(w.at("phase"), Dim::plain, field + ".modulation.phase"),
                                           quantity(w.at("slope"), Dim::time, field + ".modulation.slope")};
    }
    m.cutoff = quantity(j.at("cutoff"), Dim::frequency, field + ".cutoff");
    m.scale = get_or<double>(j, "scale", 1.0);
    if (!(m.cutoff > 0.0)) throw ConfigError(field + ".cutoff must be positive");
    return m;
}

// ---- regions -------------------------------------------------------------------------------

RegionSpec parse_region(const json& j, const std::string& field) {
    RegionSpec r;
    const auto kind = get_or<std::string>(j, "window", "free");
    if (kind == "free") r.window.kind = SequenceKind::free;
    else if (kind == "hahn") r.window.kind = SequenceKind::hahn;
    else if (kind == "cpmg") r.window.kind = SequenceKind::cpmg;
    else throw ConfigError(field + ".window must be free, hahn or cpmg");
    r.window.n = get_or<int>(j, "n", 0);
    r.window.t1 = quantity(j.at("t1"), Dim::time, field + ".t1");
    if (j.contains("Ts")) r.Ts = quantity(j.at("Ts"), Dim::time, field + ".Ts");
    else if (j.contains("Ts_over_t1")) r.Ts = j.at("Ts_over_t1").get<double>() * r.window.t1;
    r.K = get_or<int>(j, "K", 0);
    r.shots = shots_of(j, field);
    r.id = get_or<std::string>(j, "id", r.window.name());
    if (!(r.window.t1 > 0.0)) throw ConfigError(field + ".t1 must be positive");
    return r;
}

dynamics::State parse_state(const std::string& s, const std::string& field) {
    if (s.size() != 2 || (s[0] != '+' && s[0] != '-')) throw ConfigError(field + ": state must look like +x");
    dynamics::State st;
    st.sign = s[0] == '+' ? 1 : -1;
    switch (s[1]) {
        case 'x': st.axis = dynamics::Axis::x; break;
        case 'y': st.axis = dynamics::Axis::y; break;
        case 'z': st.axis = dynamics::Axis::z; break;
        default: throw ConfigError(field + ": unknown axis");
    }
    return st;
}

ExpectationJob parse_job(const json& j, const control::Constraints& c, const std::string& field) {
    ExpectationJob job;
    job.id = j.at("id").get<std::string>();
    std::vector<double> bounds;
    for (const auto& b : j.at("boundaries")) bounds.push_back(quantity(b, Dim::time, field + ".boundaries"));
    job.schedule = control::PulseSchedule::free(bounds, c);
    if (j.contains("angles")) {
        job.schedule.angles.clear();
        for (const auto& a : j.at("angles")) job.schedule.angles.push_back(quantity(a, Dim::plain, field + ".angles"));
    }
    if (j.contains("pi_trains")) {
        const auto& t = j.at("pi_trains");
        if (t.size() != job.schedule.intervals()) throw ConfigError(field + ".pi_trains: one list per interval");
        for (std::size_t i = 0; i < t.size(); ++i)
            for (const auto& x : t[i]) job.schedule.pi_trains[i].push_back(quantity(x, Dim::time, field + ".pi_trains"));
    }
    job.rho = parse_state(get_or<std::string>(j, "rho", "+x"), field + ".rho");
    const auto o = get_or<std::string>(j, "observable", "x");
    if (o != "x" && o != "y") throw ConfigError(field + ".observable must be x or y");
    job.o = o == "x" ? dynamics::Observable::x : dynamics::Observable::y;
    job.shots = shots_of(j, field);
    if (job.schedule.angles.size() != bounds.size()) throw ConfigError(field + ".angles: one per boundary");
    return job;
}

// ---- helpers ---------------------------------------------------------------------------------

std::uint64_t hash_id(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
    return h;
}

std::ofstream open_out(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw ConfigError("cannot write " + p.string());
    return f;
}

std::vector<const RegionSpec*> regions_for(const WorkbenchConfig& cfg, Target t) {
    std::vector<const RegionSpec*> out;
    if (t != Target::q)
        for (const auto& r : cfg.c_regions) out.push_back(&r);
    if (t != Target::c)
        for (const auto& r : cfg.q_regions) out.push_back(&r);
    return out;
}

json plan_json(const reconstruction::SamplingPlan& p) {
    json j;
    j["id"] = p.id;
    j["window"] = p.window.kind == SequenceKind::free ? "free" : p.window.kind == SequenceKind::hahn ? "hahn" : "cpmg";
    j["n"] = p.window.n;
    j["t1_s"] = p.window.t1;
    j["Ts_s"] = p.Ts;
    j["K"] = p.K;
    j["shots"] = p.shots ? json(*p.shots) : json("inf");
    j["target_rad_s"] = {p.target.lo, p.target.hi};
    j["omega_c_rad_s"] = p.omega_c;
    j["gamma"] = p.gamma;
    j["dc_plan"] = p.dc_plan;
    j["Delta_s"] = p.constraints.Delta;
    j["delta_s"] = p.constraints.delta;
    j["violations"] = plan_violations(p);
    return j;
}

}  // namespace

// ---------------------------------------------------------------------------------------
// presets

spectra::SpectrumPair paper_sec5_pair() {
    spectra::SpectrumPair p;
    const double per_hz = 1.0 / two_pi, per_hz2 = 1.0 / (two_pi * two_pi);
    const double cutoff = two_pi * 60e3;

    auto& c = p.c;
    c.parity = spectra::Parity::symmetric;
    c.dc = spectra::DcTerm{240e3, 0.02 * per_hz};
    c.bumps = {{7e3, 0.002 * per_hz2, two_pi * 400.0},
               {8e3, 200e-6 * per_hz2, two_pi * 1e3},
               {3e3, 33.33e-6 * per_hz2, two_pi * 3.5e3}};
    c.white = spectra::WhiteFloor{two_pi * 20e3, spectra::FloorFormula::root_offset,
                                  70.0 * std::sqrt(2.0) * std::pow(pi, 0.25)};
    c.cutoff = cutoff;

    auto& q = p.q;
    q.parity = spectra::Parity::antisymmetric;
    q.dc = spectra::DcTerm{125e3, 0.0125 * per_hz};
    q.bumps = {{8e3, 0.04 * per_hz2, two_pi * 390.0},
               {650.0, 156.25e-6 * per_hz2, two_pi * 1.6e3},
               {600.0, 123.46e-6 * per_hz2, two_pi * 3e3}};
    q.modulation = spectra::Modulation{two_pi * 50e3, pi, 3.95e-4};
    q.cutoff = cutoff;
    return p;
}

WorkbenchConfig paper_sec5_preset() {
    WorkbenchConfig cfg;
    cfg.name = "paper-sec5";
    cfg.pair = paper_sec5_pair();
    cfg.constraints = {1e-6, 1e-7};
    auto region = [](std::string id, SequenceKind k, double t1, double ts, int K, std::uint64_t shots) {
        RegionSpec r;
        r.id = std::move(id);
        r.window = WindowSpec{k, 0, t1};
        r.Ts = ts;
        r.K = K;
        r.shots = shots;
        return r;
    };
    const auto F = SequenceKind::free, H = SequenceKind::hahn;
    cfg.c_regions = {
        region("c-free-120us", F, 120e-6, 120e-6 * 2 / 3, 250, 1000000),
        region("c-hahn-350us", H, 350e-6, 350e-6 * 4 / 15, 80, 100000),
        region("c-hahn-130us", H, 130e-6, 130e-6 * 4 / 15, 120, 1000000),
        region("c-hahn-50us", H, 50e-6, 50e-6 / 5, 50, 10000000),
        region("c-hahn-19us", H, 19e-6, 19e-6 / 5, 30, 10000000),
    };
    // Two published q settings sit just outside the sampling rules; the nearest legal values are used.
    cfg.q_regions = {
        region("q-free-180us", F, 180e-6, 140e-6, 240, 1000000),
        region("q-hahn-405us", H, 405e-6, 405e-6 / 5, 140, 1000000),
        region("q-hahn-145us", H, 145e-6, 145e-6 / 5, 200, 10000000),
        region("q-hahn-50us", H, 50e-6, 50e-6 / 5, 26, 10000000),
        region("q-hahn-18us", H, 18e-6, 18e-6 / 5, 30, 100000000),
    };
    // A Hahn echo and a Ramsey-type pair for the simulate command.
    const auto& c = cfg.constraints;
    ExpectationJob hahn;
    hahn.id = "hahn-50us";
    hahn.schedule = control::PulseSchedule::free({0.0, 50e-6}, c);
    hahn.schedule.angles = {pi / 2, pi / 2};
    hahn.schedule.pi_trains[0] = {25e-6};
    hahn.rho = {dynamics::Axis::z, 1};
    hahn.o = dynamics::Observable::x;
    cfg.jobs.push_back(hahn);
    ExpectationJob ramsey;
    ramsey.id = "separated-blocks";
    ramsey.schedule = control::PulseSchedule::free({0.0, 20e-6, 40e-6, 60e-6}, c);
    ramsey.schedule.angles = {0.0, pi / 2, pi / 2, 0.0};
    ramsey.rho = {dynamics::Axis::y, 1};
    ramsey.o = dynamics::Observable::y;
    cfg.jobs.push_back(ramsey);
    return cfg;
}

WorkbenchConfig preset(std::string_view name) {
    if (name == "paper-sec5") return paper_sec5_preset();
    throw ConfigError("unknown preset '" + std::string(name) + "'");
}

WorkbenchConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        WorkbenchConfig cfg = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : WorkbenchConfig{};
        cfg.name = get_or<std::string>(j, "name", cfg.name);
        if (j.contains("spectra")) {
            const auto& s = j.at("spectra");
            cfg.pair.c = parse_model(s.at("c"), spectra::Parity::symmetric, "spectra.c");
            cfg.pair.q = parse_model(s.at("q"), spectra::Parity::antisymmetric, "spectra.q");
        }
        if (j.contains("q_scale")) cfg.pair.q.scale = j.at("q_scale").get<double>();
        if (j.contains("constraints")) {
            const auto& c = j.at("constraints");
            cfg.constraints.Delta = quantity(c.at("Delta"), Dim::time, "constraints.Delta");
            cfg.constraints.delta = quantity(c.at("delta"), Dim::time, "constraints.delta");
            if (!(cfg.constraints.delta > 0.0 && cfg.constraints.Delta >= cfg.constraints.delta))
                throw ConfigError("constraints: need 0 < delta <= Delta");
            if (!control::on_grid(cfg.constraints.Delta, cfg.constraints.delta))
                throw ConfigError("constraints.Delta must be a multiple of constraints.delta");
        }
        if (j.contains("regions")) {
            const auto& r = j.at("regions");
            if (r.contains("c")) {
                cfg.c_regions.clear();
                for (std::size_t i = 0; i < r.at("c").size(); ++i)
                    cfg.c_regions.push_back(parse_region(r.at("c")[i], "regions.c[" + std::to_string(i) + "]"));
            }
            if (r.contains("q")) {
                cfg.q_regions.clear();
                for (std::size_t i = 0; i < r.at("q").size(); ++i)
                    cfg.q_regions.push_back(parse_region(r.at("q")[i], "regions.q[" + std::to_string(i) + "]"));
            }
        }
        if (j.contains("mode")) {
            const auto m = j.at("mode").get<std::string>();
            if (m == "exact") cfg.mode = Mode::exact;
            else if (m == "sampled") cfg.mode = Mode::sampled;
            else throw ConfigError("mode must be exact or sampled");
        }
        if (j.contains("pipeline")) {
            const auto p = j.at("pipeline").get<std::string>();
            if (p == "direct") cfg.pipeline = reconstruction::Pipeline::direct;
            else if (p == "q-algebra") cfg.pipeline = reconstruction::Pipeline::q_algebra;
            else throw ConfigError("pipeline must be direct or q-algebra");
        }
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        else if (cfg.mode == Mode::sampled && !j.contains("preset")) throw ConfigError("sampled mode needs a seed");
        cfg.gamma = get_or<double>(j, "gamma", cfg.gamma);
        cfg.alpha = get_or<double>(j, "alpha", cfg.alpha);
        cfg.beta = get_or<double>(j, "beta", cfg.beta);
        cfg.mask_floor = get_or<double>(j, "mask_floor", cfg.mask_floor);
        cfg.max_tracking_samples = get_or<std::size_t>(j, "max_tracking_samples", cfg.max_tracking_samples);
        cfg.mitigate_aliasing = get_or<bool>(j, "mitigate_aliasing", cfg.mitigate_aliasing);
        if (j.contains("jobs")) {
            cfg.jobs.clear();
            for (std::size_t i = 0; i < j.at("jobs").size(); ++i)
                cfg.jobs.push_back(parse_job(j.at("jobs")[i], cfg.constraints, "jobs[" + std::to_string(i) + "]"));
        }
        if (j.contains("correlation"))
            cfg.correlation_tau_max = quantity(j.at("correlation").at("tau_max"), Dim::time, "correlation.tau_max");
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
        if (!(cfg.gamma > 0.0)) throw ConfigError("gamma must be positive");
        if (!(cfg.pair.cutoff() > 0.0)) throw ConfigError("config defines no spectra");
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

WorkbenchConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::vector<double> reporting_grid(double cutoff) {
    std::vector<double> w;
    const double knee = two_pi * 100.0;
    const int linear = 64;
    for (int i = 0; i < linear; ++i) w.push_back(knee * i / linear);
    const double decades = std::log10(cutoff / knee);
    const int n = std::max(2, static_cast<int>(std::ceil(512 * decades)));
    for (int i = 0; i <= n; ++i) w.push_back(knee * std::pow(10.0, decades * i / n));
    return w;
}

reconstruction::SamplingPlan plan_region(const WorkbenchConfig& cfg, const RegionSpec& r) {
    reconstruction::PlanOptions o;
    o.alpha = cfg.alpha;
    o.beta = cfg.beta;
    o.gamma = cfg.gamma;
    o.spectral_cutoff = cfg.pair.cutoff();
    if (r.Ts > 0.0) o.Ts = r.Ts;
    if (r.K > 0) o.K = r.K;
    if (cfg.mode == Mode::sampled) o.shots = r.shots;
    o.id = r.id;
    return reconstruction::plan_sampling(r.window, std::nullopt, cfg.constraints, o);
}

// ---------------------------------------------------------------------------------------
// reconstruction

namespace {

RegionResult run_region(const WorkbenchConfig& cfg, const RegionSpec& r, Kind kind, std::span<const double> omega,
                        const std::function<double(double)>& s_plus) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    RegionResult out;
    out.plan = plan_region(cfg, r);
    inference::ExperimentRunner run(cfg.pair, cfg.constraints, out.plan.shots, cfg.seed ^ hash_id(r.id));
    reconstruction::PipelineOptions opt;
    opt.pipeline = cfg.pipeline;
    opt.max_tracking_samples = cfg.max_tracking_samples;
    opt.s_plus_estimate = s_plus;
    opt.w_max = cfg.pair.cutoff();
    if (kind == Kind::minus) opt.block.divisor_floor = 1e-12;
    out.traces = reconstruction::collect_traces(out.plan, run, kind, opt);
    out.estimate = reconstruction::dtft_reconstruct(out.traces, out.plan, omega, cfg.mask_floor);
    out.experiments = run.experiments();
    out.violations = run.violations();
    out.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return out;
}

// Bounds from the stitched estimate, optional mitigation, then the final stitch.
reconstruction::StitchResult finish(const WorkbenchConfig& cfg, std::vector<RegionResult>& regions,
                                    std::vector<std::string>& warnings, const char* what) {
    std::vector<reconstruction::SpectrumEstimate> parts;
    for (const auto& r : regions) parts.push_back(r.estimate);
    const auto first = reconstruction::stitch_regions(parts);
    const auto s_hat = reconstruction::interpolant(first.estimate);
    parts.clear();
    for (auto& r : regions) {
        if (cfg.mitigate_aliasing)
            r.estimate = reconstruction::mitigate_aliasing(r.estimate, r.plan, s_hat, cfg.pair.cutoff());
        r.errors = reconstruction::error_bounds(r.plan, r.traces, r.estimate, s_hat, cfg.pair.cutoff());
        reconstruction::apply_error_bounds(r.estimate, r.errors);
        parts.push_back(r.estimate);
        if (r.traces.degraded) warnings.push_back(r.plan.id + ": consecutive ill-conditioned samples interpolated");
        if (r.traces.tracking_unverified) warnings.push_back(r.plan.id + ": branch tracking hit the step cap");
        if (r.violations) warnings.push_back(r.plan.id + ": " + std::to_string(r.violations) + " schedule violations");
    }
    auto result = reconstruction::stitch_regions(parts);
    for (const auto& g : result.gaps) {
        std::ostringstream os;
        os << what << " coverage gap " << rad_to_hz(g.lo) << " - " << rad_to_hz(g.hi) << " Hz";
        warnings.push_back(os.str());
    }
    return result;
}

}  // namespace

ReconstructionRun reconstruct(const WorkbenchConfig& cfg, Target target, const Progress& progress,
                              const reconstruction::SpectrumEstimate* c_prior) {
    ReconstructionRun out;
    out.omega = reporting_grid(cfg.pair.cutoff());
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    std::function<double(double)> s_plus;
    if (target == Target::q) {
        if (!c_prior) throw ConfigError("target q needs a c estimate; run target c first or use target both");
        s_plus = reconstruction::interpolant(*c_prior);
    } else {
        if (cfg.c_regions.empty()) throw ConfigError("no c regions configured");
        for (const auto& r : cfg.c_regions) {
            say("c region " + r.id);
            out.c.push_back(run_region(cfg, r, Kind::plus, out.omega, {}));
        }
        out.c_stitched = finish(cfg, out.c, out.warnings, "c");
        if (target == Target::c) return out;
        s_plus = reconstruction::interpolant(out.c_stitched->estimate);
    }

    if (cfg.q_regions.empty()) throw ConfigError("no q regions configured");
    for (const auto& r : cfg.q_regions) {
        say("q region " + r.id);
        out.q.push_back(run_region(cfg, r, Kind::minus, out.omega, s_plus));
    }
    out.q_stitched = finish(cfg, out.q, out.warnings, "q");
    return out;
}

reconstruction::SpectrumEstimate read_spectrum_csv(std::istream& in, Kind kind) {
    reconstruction::SpectrumEstimate e;
    e.kind = kind;
    std::string line;
    if (!std::getline(in, line) || line.rfind("omega_rad_s,s_hat", 0) != 0)
        throw ConfigError("spectrum CSV: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string w, v, eb, flag, id;
        if (!std::getline(ss, w, ',') || !std::getline(ss, v, ',') || !std::getline(ss, eb, ',') ||
            !std::getline(ss, flag, ','))
            throw ConfigError("spectrum CSV: malformed row '" + line + "'");
        std::getline(ss, id);
        if (id.size() >= 2 && id.front() == '"' && id.back() == '"') id = id.substr(1, id.size() - 2);
        try {
            e.omega.push_back(std::stod(w));
            e.value.push_back(std::stod(v));
            e.error_bound.push_back(std::stod(eb));
        } catch (const std::exception&) {
            throw ConfigError("spectrum CSV: malformed row '" + line + "'");
        }
        e.variance.push_back(0.0);
        e.valid.push_back(true);
        e.mfs.push_back(flag == "1" || flag == "true");
        e.plan_id.push_back(id);
    }
    if (e.omega.empty()) throw ConfigError("spectrum CSV has no rows");
    return e;
}

double median_relative_error(const reconstruction::SpectrumEstimate& est, const spectra::SpectrumModel& truth,
                             Band band, double central, const std::function<bool(double)>& keep) {
    const double margin = 0.5 * (1.0 - central) * (band.hi - band.lo);
    const double lo = band.lo + margin, hi = band.hi - margin;
    std::vector<double> rel;
    for (std::size_t i = 0; i < est.omega.size(); ++i) {
        const double w = est.omega[i];
        if (!est.valid[i] || w < lo || w > hi || (keep && !keep(w))) continue;
        const double s = spectra::eval_spectrum(truth, w);
        if (s == 0.0) continue;
        rel.push_back(std::abs(est.value[i] - s) / std::abs(s));
    }
    if (rel.empty()) return std::nan("");
    const auto mid = rel.begin() + static_cast<std::ptrdiff_t>(rel.size() / 2);
    std::nth_element(rel.begin(), mid, rel.end());
    return *mid;
}

// ---------------------------------------------------------------------------------------
// checks

std::vector<CheckItem> run_checks(const WorkbenchConfig& cfg) {
    std::vector<CheckItem> out;
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(4);
        os << x;
        return os.str();
    };

    const auto grid = spectra::physicality_grid(cfg.pair);
    const auto phys = spectra::check_physicality(cfg.pair, grid);
    std::string where;
    for (std::size_t i = 0; i < std::min<std::size_t>(phys.violations.size(), 5); ++i)
        where += (i ? ", " : " (first at ") + num(rad_to_hz(phys.violations[i]));
    if (!where.empty()) where += phys.violations.size() > 5 ? ", ... Hz)" : " Hz)";
    out.push_back({"physicality", phys.pass,
                   "min(S+ - |S-|) = " + num(phys.margin) + " at " + num(rad_to_hz(phys.margin_at)) + " Hz, " +
                       std::to_string(phys.violations.size()) + " violating points" + where});

    double t1 = 100e-6;
    for (const auto& r : cfg.c_regions) t1 = std::max(t1, r.window.t1);
    const auto table = spectra::CorrelationTable::build(cfg.pair, 2.0 * t1,
                                                        spectra::CorrelationTable::default_step(cfg.pair, cfg.constraints.delta));
    const auto cor = spectra::corollary_bounds(cfg.pair, t1, t1, &table);
    out.push_back({"corollary", cor.pointwise_ok && cor.integral_ok,
                   "2|int int C-| = " + num(cor.lhs) + " <= " + num(cor.rhs) + ", max|C-| = " +
                       num(cor.max_abs_c_minus) + " <= C+(0) = " + num(cor.c_plus0)});

    // Q-algebra consistency on a three-interval schedule.
    {
        inference::ExperimentRunner run(cfg.pair, cfg.constraints, std::nullopt, cfg.seed);
        const double L = std::max(20.0 * cfg.constraints.Delta, 20e-6);
        auto s = control::PulseSchedule::free({0.0, L, 1.5 * L, 2.5 * L}, cfg.constraints);
        const auto blocks = run.blocks(s);
        const auto qs = inference::extract_q_quantities(inference::q_expectations(blocks));
        const auto plus = inference::infer_plus_integrals(qs);
        const auto minus = inference::infer_minus_integrals(qs, plus, 1e-12);
        const double res = inference::q4_residual(qs, plus, minus);
        double worst = 0.0;
        const char* labels[] = {"P11", "P12", "P13", "P22", "P23", "P33"};
        const int idx[][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
        for (int k = 0; k < 6; ++k)
            for (const auto& p : plus)
                if (p.label == labels[k]) worst = std::max(worst, std::abs(p.value - blocks.plus(idx[k][0], idx[k][1])));
        out.push_back({"q-algebra", std::isfinite(res) && res < 1e-6 && worst < 1e-6,
                       "Q4 residual " + num(res) + ", plus round trip " + num(worst)});
    }

    // Frequency and time backends on one separated configuration.
    {
        const double L = std::max(20.0 * cfg.constraints.Delta, 30e-6);
        auto s = control::PulseSchedule::free({0.0, L, 1.7 * L, 2.7 * L}, cfg.constraints);
        s.pi_trains[0] = {control::snap(0.5 * L, cfg.constraints.delta)};
        const auto pieces = dynamics::interval_pieces(s);
        const auto fb = dynamics::FrequencyBackend(cfg.pair, s.duration()).blocks(pieces);
        const auto corr = spectra::CorrelationTable::build(
            cfg.pair, 1.1 * s.duration(), spectra::CorrelationTable::default_step(cfg.pair, cfg.constraints.delta));
        const auto tb = dynamics::TimeBackend(corr).blocks(pieces);
        const double scale = std::max(fb.plus.cwiseAbs().maxCoeff(), 1e-300);
        const double diff = std::max((fb.plus - tb.plus).cwiseAbs().maxCoeff(), (fb.minus - tb.minus).cwiseAbs().maxCoeff());
        out.push_back({"backends", diff <= 1e-4 * scale, "max block difference " + num(diff / scale) + " relative"});
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// writers

std::vector<fs::path> write_simulation(const WorkbenchConfig& cfg, Target target) {
    std::vector<fs::path> files;
    const auto dir = cfg.out_dir;

    std::vector<dynamics::ExpectationRow> rows;
    double longest = 0.0;
    for (const auto& job : cfg.jobs) {
        const auto shots = cfg.mode == Mode::sampled ? job.shots : std::nullopt;
        inference::ExperimentRunner run(cfg.pair, cfg.constraints, shots, cfg.seed ^ hash_id(job.id));
        run.record(true);
        run.measure(job.schedule, job.rho, job.o);
        if (run.violations()) throw ConfigError("job " + job.id + ": " + run.violation_log().front());
        for (auto row : run.rows()) {
            row.config_id = job.id;
            rows.push_back(row);
        }
        longest = std::max(longest, job.schedule.duration());
    }
    // Every configuration a region's reconstruction would run, with the true S+ steering branch tracking.
    const auto truth_plus = [&](double w) { return spectra::eval_spectrum(cfg.pair.c, w); };
    for (const auto* r : regions_for(cfg, target)) {
        const bool is_c = std::find_if(cfg.c_regions.begin(), cfg.c_regions.end(),
                                       [&](const RegionSpec& x) { return &x == r; }) != cfg.c_regions.end();
        const auto plan = plan_region(cfg, *r);
        inference::ExperimentRunner run(cfg.pair, cfg.constraints, plan.shots, cfg.seed ^ hash_id(r->id));
        run.record(true);
        reconstruction::PipelineOptions opt;
        opt.pipeline = cfg.pipeline;
        opt.max_tracking_samples = cfg.max_tracking_samples;
        opt.w_max = cfg.pair.cutoff();
        if (!is_c) {
            opt.s_plus_estimate = truth_plus;
            opt.block.divisor_floor = 1e-12;
        }
        reconstruction::collect_traces(plan, run, is_c ? Kind::plus : Kind::minus, opt);
        for (auto row : run.rows()) {
            row.config_id = r->id + "/" + row.config_id;
            rows.push_back(row);
        }
        longest = std::max(longest, plan.Ts * plan.K + plan.window.t1);
    }
    {
        const auto p = dir / "expectations.csv";
        auto f = open_out(p);
        dynamics::write_expectations_csv(f, rows);
        files.push_back(p);
    }

    double tau_max = cfg.correlation_tau_max;
    if (!(tau_max > 0.0)) tau_max = std::max(longest, 1e-4);
    {
        const double step = std::max(spectra::CorrelationTable::default_step(cfg.pair, cfg.constraints.delta),
                                     tau_max / 20000.0);
        const auto table = spectra::CorrelationTable::build(cfg.pair, tau_max, step);
        const auto p = dir / "correlation.csv";
        auto f = open_out(p);
        table.write_csv(f);
        files.push_back(p);

        svg::Plot plot;
        plot.title = "Correlation functions";
        plot.xlabel = "tau (us)";
        plot.ylabel = "C (1/s^2)";
        svg::Series cp{"C+", {}, {}, "#1f77b4"}, cm{"Im C-", {}, {}, "#d62728"};
        for (std::size_t k = 0; k < table.size(); k += std::max<std::size_t>(1, table.size() / 2000)) {
            cp.x.push_back(k * table.step() * 1e6);
            cp.y.push_back(table.c_plus_at(k));
            cm.x.push_back(k * table.step() * 1e6);
            cm.y.push_back(table.c_minus_imag_at(k));
        }
        plot.series = {cp, cm};
        const auto ps = dir / "correlation.svg";
        auto g = open_out(ps);
        svg::write_svg(g, plot);
        files.push_back(ps);
    }
    {
        const auto omega = reporting_grid(cfg.pair.cutoff());
        const auto p = dir / "spectra.csv";
        auto f = open_out(p);
        f << "omega_rad_s,s_plus,s_minus\n";
        f.precision(12);
        svg::Plot plot;
        plot.title = "Noise spectra";
        plot.xlabel = "f (Hz)";
        plot.ylabel = "S (1/s)";
        plot.logx = true;
        svg::Series sp{"S+", {}, {}, "#1f77b4"}, sm{"S-", {}, {}, "#d62728"};
        for (double w : omega) {
            const double a = spectra::eval_spectrum(cfg.pair.c, w), b = spectra::eval_spectrum(cfg.pair.q, w);
            f << w << ',' << a << ',' << b << '\n';
            if (w > 0.0) {
                sp.x.push_back(rad_to_hz(w));
                sp.y.push_back(a);
                sm.x.push_back(rad_to_hz(w));
                sm.y.push_back(b);
            }
        }
        files.push_back(p);
        plot.series = {sp, sm};
        const auto ps = dir / "spectra.svg";
        auto g = open_out(ps);
        svg::write_svg(g, plot);
        files.push_back(ps);
    }
    return files;
}

namespace {

void write_region_traces(const fs::path& p, const RegionResult& r) {
    std::vector<inference::IntegralEstimate> rows;
    for (std::size_t k = 0; k < r.traces.value.size(); ++k) {
        inference::IntegralEstimate e;
        e.label = r.plan.id + ":k=" + std::to_string(k);
        e.kind = r.traces.kind;
        e.value = r.traces.value[k];
        e.branch_k = r.traces.branch[k];
        e.variance = r.traces.variance[k];
        rows.push_back(e);
    }
    auto f = open_out(p);
    inference::write_integral_estimates_csv(f, rows);
}

fs::path plot_spectrum(const fs::path& p, const std::string& title, const spectra::SpectrumModel& truth,
                       const std::vector<RegionResult>& regions, const reconstruction::StitchResult& stitched) {
    svg::Plot plot;
    plot.title = title;
    plot.xlabel = "f (Hz)";
    plot.ylabel = "S (1/s)";
    plot.logx = true;
    svg::Series t{"truth", {}, {}, "#1f77b4"}, e{"estimate", {}, {}, "#2ca02c", true, true};
    const auto& est = stitched.estimate;
    for (std::size_t i = 0; i < est.omega.size(); ++i) {
        const double w = est.omega[i];
        if (w <= 0.0) continue;
        t.x.push_back(rad_to_hz(w));
        t.y.push_back(spectra::eval_spectrum(truth, w));
        e.x.push_back(rad_to_hz(w));
        e.y.push_back(est.valid[i] ? est.value[i] : std::nan(""));
    }
    plot.series = {t, e};
    for (const auto& r : regions) plot.bands.emplace_back(rad_to_hz(r.plan.target.lo), rad_to_hz(r.plan.target.hi));
    auto f = open_out(p);
    svg::write_svg(f, plot);
    return p;
}

}  // namespace

std::vector<fs::path> write_reconstruction(const WorkbenchConfig& cfg, const ReconstructionRun& run) {
    std::vector<fs::path> files;
    const auto dir = cfg.out_dir;
    json summary;
    summary["name"] = cfg.name;
    summary["mode"] = cfg.mode == Mode::exact ? "exact" : "sampled";
    summary["seed"] = cfg.seed;
    summary["warnings"] = run.warnings;

    auto emit = [&](const char* tag, const std::vector<RegionResult>& regions,
                    const std::optional<reconstruction::StitchResult>& stitched, const spectra::SpectrumModel& truth) {
        if (!stitched) return;
        for (const auto& r : regions) {
            const auto p = dir / ("traces_" + r.plan.id + ".csv");
            write_region_traces(p, r);
            files.push_back(p);
            const auto q = dir / ("spectrum_" + r.plan.id + ".csv");
            auto f = open_out(q);
            reconstruction::write_spectrum_csv(f, r.estimate);
            files.push_back(q);
            json j = plan_json(r.plan);
            j["seconds"] = r.seconds;
            j["experiments"] = r.experiments;
            j["median_relative_error"] = median_relative_error(r.estimate, truth, r.plan.target);
            j["tracked_samples"] = r.traces.tracked_samples;
            summary[tag].push_back(j);
        }
        const auto p = dir / (std::string("spectrum_") + tag + ".csv");
        auto f = open_out(p);
        reconstruction::write_spectrum_csv(f, stitched->estimate);
        files.push_back(p);
        files.push_back(plot_spectrum(dir / (std::string("spectrum_") + tag + ".svg"),
                                      std::string(tag) + " spectrum", truth, regions, *stitched));
    };
    emit("c", run.c, run.c_stitched, cfg.pair.c);
    emit("q", run.q, run.q_stitched, cfg.pair.q);
    const auto p = dir / "summary.json";
    auto f = open_out(p);
    f << summary.dump(2) << '\n';
    files.push_back(p);
    return files;
}

std::vector<fs::path> write_plans(const WorkbenchConfig& cfg, Target target) {
    json j = json::array();
    for (const auto* r : regions_for(cfg, target)) j.push_back(plan_json(plan_region(cfg, *r)));
    const auto p = cfg.out_dir / "plans.json";
    auto f = open_out(p);
    f << j.dump(2) << '\n';
    return {p};
}

std::vector<fs::path> write_filters(const WorkbenchConfig& cfg, Target target) {
    std::vector<fs::path> files;
    const auto omega = reporting_grid(cfg.pair.cutoff());
    svg::Plot plot;
    plot.title = "Filter functions |F|^2 (normalized)";
    plot.xlabel = "f (Hz)";
    plot.ylabel = "|F|^2 / max";
    plot.logx = true;
    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::size_t ci = 0;
    for (const auto* r : regions_for(cfg, target)) {
        const auto sw = r->window.switching(cfg.constraints);
        const auto p = cfg.out_dir / ("filter_" + r->id + ".csv");
        auto f = open_out(p);
        control::write_filter_csv(f, sw, omega);
        files.push_back(p);
        svg::Series s{r->id, {}, {}, colors[ci++ % 8]};
        double top = 0.0;
        for (double w : omega) top = std::max(top, std::norm(control::filter(sw, w)));
        for (double w : omega)
            if (w > 0.0) {
                s.x.push_back(rad_to_hz(w));
                s.y.push_back(std::norm(control::filter(sw, w)) / top);
            }
        plot.series.push_back(s);
    }
    const auto p = cfg.out_dir / "filters.svg";
    auto f = open_out(p);
    svg::write_svg(f, plot);
    files.push_back(p);
    return files;
}

}  // namespace qnoise::workbench
