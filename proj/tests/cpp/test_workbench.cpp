#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "qnoise/workbench.hpp"

using namespace qnoise;
using namespace qnoise::workbench;
namespace fs = std::filesystem;

namespace {

const fs::path source_root = fs::path(__FILE__).parent_path().parent_path().parent_path();

// Two short Hahn regions per spectrum; runs in well under a second.
WorkbenchConfig quick() {
    auto cfg = load_config(source_root / "configs" / "quick.json");
    cfg.mode = Mode::exact;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("qnoise_wb_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("human units are converted at ingestion") {
    const auto cfg = parse_config(R"({
        "spectra": {
            "c": {"bumps": [{"b": "2 kHz", "c": "1e-6 s^2", "f": "1.5 kHz"}], "cutoff": "10 kHz"},
            "q": {"bumps": [{"b": "1 kHz", "c": "1e-6 s^2", "f": "1.5 kHz"}], "cutoff": "10 kHz"}
        },
        "constraints": {"Delta": "2 μs", "delta": "0.5 us"},
        "regions": {"c": [{"window": "hahn", "t1": "0.2 ms", "Ts": "40 us", "K": 10}]}
    })");
    CHECK(cfg.pair.c.cutoff == doctest::Approx(two_pi * 1e4));
    REQUIRE(cfg.pair.c.bumps.size() == 1);
    CHECK(cfg.pair.c.bumps[0].omega0 == doctest::Approx(two_pi * 1.5e3));
    CHECK(cfg.pair.c.bumps[0].b == doctest::Approx(2e3));
    // c multiplies the frequency in Hz squared.
    CHECK(cfg.pair.c.bumps[0].c == doctest::Approx(1e-6 / (two_pi * two_pi)));
    CHECK(cfg.constraints.Delta == doctest::Approx(2e-6));
    CHECK(cfg.constraints.delta == doctest::Approx(0.5e-6));
    REQUIRE(cfg.c_regions.size() == 1);
    CHECK(cfg.c_regions[0].window.t1 == doctest::Approx(2e-4));
    CHECK(cfg.c_regions[0].Ts == doctest::Approx(4e-5));
    CHECK(cfg.c_regions[0].id == cfg.c_regions[0].window.name());
}

TEST_CASE("config errors name the field") {
    auto message = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(R"({"preset": "paper-sec5", "regions": {"c": [{"t1": "3 furlongs"}]}})").find("regions.c[0].t1") !=
          std::string::npos);
    CHECK(message(R"({"preset": "paper-sec5", "constraints": {"Delta": "1.05 us", "delta": "0.1 us"}})")
              .find("multiple") != std::string::npos);
    CHECK(message(R"({"preset": "paper-sec5", "regions": {"q": [{"window": "udd", "t1": "1 us"}]}})")
              .find("regions.q[0].window") != std::string::npos);
    CHECK_FALSE(message(R"({"preset": "elsewhere"})").empty());
    CHECK_FALSE(message("{not json").empty());
    CHECK_FALSE(message(R"({"spectra": {"c": {"cutoff": "1 kHz"}, "q": {"cutoff": "1 kHz"}}, "mode": "sampled"})")
                    .empty());
}

TEST_CASE("the shipped configuration reproduces the preset") {
    const auto file = load_config(source_root / "configs" / "paper_sec5.json");
    const auto ref = paper_sec5_preset();
    for (double f = 0.0; f <= 60e3; f += 37.3) {
        const double w = two_pi * f;
        CHECK(spectra::eval_spectrum(file.pair.c, w) ==
              doctest::Approx(spectra::eval_spectrum(ref.pair.c, w)).epsilon(1e-9));
        CHECK(spectra::eval_spectrum(file.pair.q, w) ==
              doctest::Approx(spectra::eval_spectrum(ref.pair.q, w)).epsilon(1e-9));
    }
    REQUIRE(file.c_regions.size() == ref.c_regions.size());
    REQUIRE(file.q_regions.size() == ref.q_regions.size());
    for (std::size_t i = 0; i < ref.c_regions.size(); ++i) {
        CHECK(file.c_regions[i].Ts == doctest::Approx(ref.c_regions[i].Ts));
        CHECK(file.c_regions[i].K == ref.c_regions[i].K);
        CHECK(file.c_regions[i].shots == ref.c_regions[i].shots);
    }
    for (std::size_t i = 0; i < ref.q_regions.size(); ++i) {
        CHECK(file.q_regions[i].Ts == doctest::Approx(ref.q_regions[i].Ts));
        CHECK(file.q_regions[i].K == ref.q_regions[i].K);
    }
}

TEST_CASE("preset plans obey the sampling rules") {
    const auto cfg = paper_sec5_preset();
    CHECK(cfg.c_regions.size() == 5);
    CHECK(cfg.q_regions.size() == 5);
    for (const auto* list : {&cfg.c_regions, &cfg.q_regions})
        for (const auto& r : *list) {
            const auto p = plan_region(cfg, r);
            INFO(r.id);
            CHECK(reconstruction::plan_violations(p).empty());
            CHECK(p.target.hi > p.target.lo);
        }
}

TEST_CASE("reporting grid") {
    const auto g = reporting_grid(two_pi * 60e3);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == doctest::Approx(two_pi * 60e3));
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
}

TEST_CASE("checks pass on the preset and catch an unphysical q") {
    auto cfg = paper_sec5_preset();
    for (const auto& item : run_checks(cfg)) {
        INFO(item.name << ": " << item.detail);
        CHECK(item.pass);
    }
    cfg.pair.q.scale = 1.2;
    const auto items = run_checks(cfg);
    CHECK_FALSE(items.front().pass);
    CHECK(items.front().detail.find("first at") != std::string::npos);
}

TEST_CASE("quick reconstruction of both spectra") {
    const auto cfg = quick();
    const auto run = reconstruct(cfg, Target::both);
    REQUIRE(run.c_stitched);
    REQUIRE(run.q_stitched);
    for (const auto& r : run.c) CHECK(median_relative_error(r.estimate, cfg.pair.c, r.plan.target) < 0.05);
    for (const auto& r : run.q) CHECK(median_relative_error(r.estimate, cfg.pair.q, r.plan.target) < 0.05);
    for (const auto* list : {&run.c, &run.q})
        for (const auto& r : *list) CHECK(r.violations == 0);

    // Target q alone needs a prior c estimate, and then agrees with the combined run.
    CHECK_THROWS_AS(reconstruct(cfg, Target::q), ConfigError);
    std::stringstream csv;
    reconstruction::write_spectrum_csv(csv, run.c_stitched->estimate);
    const auto prior = read_spectrum_csv(csv, reconstruction::Kind::plus);
    const auto only_q = reconstruct(cfg, Target::q, {}, &prior);
    CHECK(only_q.c.empty());
    REQUIRE(only_q.q_stitched);
    const auto& a = run.q_stitched->estimate;
    const auto& b = only_q.q_stitched->estimate;
    REQUIRE(a.value.size() == b.value.size());
    for (std::size_t i = 0; i < a.value.size(); ++i)
        if (a.valid[i]) CHECK(b.value[i] == doctest::Approx(a.value[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("spectrum CSV round trip") {
    reconstruction::SpectrumEstimate e;
    e.omega = {1.0, 2.0, 3.0};
    e.value = {4.0, -5.5, 6.25};
    e.variance = {0, 0, 0};
    e.error_bound = {0.1, 0.2, 0.3};
    e.valid = {true, false, true};
    e.mfs = {true, true, false};
    e.plan_id = {"a", "b", "c,d"};
    std::stringstream ss;
    reconstruction::write_spectrum_csv(ss, e);
    const auto r = read_spectrum_csv(ss, reconstruction::Kind::plus);
    REQUIRE(r.omega.size() == 2);
    CHECK(r.value[1] == 6.25);
    CHECK(r.error_bound[0] == 0.1);
    CHECK(r.mfs[0]);
    CHECK_FALSE(r.mfs[1]);
    CHECK(r.plan_id[1] == "c,d");
    std::stringstream bad("tau_s,c_plus\n1,2\n");
    CHECK_THROWS_AS(read_spectrum_csv(bad, reconstruction::Kind::plus), ConfigError);
}

TEST_CASE("simulation output is deterministic and empty plans give an empty table") {
    auto cfg = quick();
    cfg.mode = Mode::sampled;
    cfg.seed = 11;
    cfg.out_dir = scratch("sim_a");
    write_simulation(cfg, Target::c);
    const auto first = slurp(cfg.out_dir / "expectations.csv");
    cfg.out_dir = scratch("sim_b");
    write_simulation(cfg, Target::c);
    CHECK(first == slurp(cfg.out_dir / "expectations.csv"));
    CHECK(first.find("c-hahn-19us/") != std::string::npos);

    cfg.c_regions.clear();
    cfg.q_regions.clear();
    cfg.jobs.clear();
    cfg.out_dir = scratch("sim_empty");
    write_simulation(cfg, Target::both);
    CHECK(slurp(cfg.out_dir / "expectations.csv") == "config_id,expectation,shots,estimate,seed\n");
}

TEST_CASE("reconstruction writers") {
    auto cfg = quick();
    cfg.out_dir = scratch("rec");
    const auto run = reconstruct(cfg, Target::both);
    const auto files = write_reconstruction(cfg, run);
    for (const char* name : {"spectrum_c.csv", "spectrum_q.csv", "spectrum_c.svg", "summary.json",
                             "traces_c-hahn-50us.csv", "spectrum_q-hahn-18us.csv"})
        CHECK(fs::exists(cfg.out_dir / name));
    CHECK(slurp(cfg.out_dir / "spectrum_c.csv").rfind("omega_rad_s,s_hat,error_bound,mfs_flag,plan_id\n", 0) == 0);
    CHECK(slurp(cfg.out_dir / "traces_q-hahn-50us.csv").rfind("label,kind,value,branch_k,variance\n", 0) == 0);
    CHECK(slurp(cfg.out_dir / "spectrum_q.svg").find("<svg") == 0);

    write_plans(cfg, Target::both);
    CHECK(slurp(cfg.out_dir / "plans.json").find("\"violations\": []") != std::string::npos);
    write_filters(cfg, Target::c);
    CHECK(slurp(cfg.out_dir / "filter_c-hahn-19us.csv").rfind("omega_rad_s,re_F,im_F,abs2_F\n", 0) == 0);
}
