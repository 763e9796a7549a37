#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qnoise/workbench.hpp"

namespace wb = qnoise::workbench;
namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_check = 3;

struct Flags {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode;
    std::string target = "both";
};

wb::WorkbenchConfig resolve(const Flags& f) {
    if (!f.config.empty() && !f.preset.empty()) throw qnoise::ConfigError("give either --config or --preset");
    if (f.config.empty() && f.preset.empty()) throw qnoise::ConfigError("one of --config or --preset is required");
    auto cfg = f.config.empty() ? wb::preset(f.preset) : wb::load_config(f.config);
    if (!f.mode.empty()) cfg.mode = f.mode == "sampled" ? wb::Mode::sampled : wb::Mode::exact;
    if (f.seed) cfg.seed = *f.seed;
    if (!f.out.empty()) cfg.out_dir = f.out;
    return cfg;
}

wb::Target target_of(const std::string& s) {
    if (s == "c") return wb::Target::c;
    if (s == "q") return wb::Target::q;
    return wb::Target::both;
}

void list(const std::vector<fs::path>& files) {
    for (const auto& p : files) std::cout << "wrote " << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Qubit noise spectroscopy workbench: simulate experiments and reconstruct c/q spectra"};
    app.require_subcommand(1);
    Flags flags;

    auto common = [&](CLI::App* sub, bool with_target) {
        sub->add_option("--config", flags.config, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--preset", flags.preset, "built-in scenario")->check(CLI::IsMember({"paper-sec5"}));
        sub->add_option("--seed", flags.seed, "random seed for sampled mode");
        sub->add_option("--out", flags.out, "output directory");
        sub->add_option("--mode", flags.mode, "exact (infinite shots) or sampled")
            ->check(CLI::IsMember({"exact", "sampled"}));
        if (with_target)
            sub->add_option("--target", flags.target, "spectrum to work on")->check(CLI::IsMember({"c", "q", "both"}));
    };
    auto* simulate = app.add_subcommand("simulate", "write expectation values, correlation functions and spectra");
    auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct the c and/or q spectrum");
    auto* check = app.add_subcommand("check", "physicality and consistency checks");
    auto* plan = app.add_subcommand("plan", "write the sampling plans with their rule checks");
    auto* filters = app.add_subcommand("filters", "write filter functions of the region windows");
    common(simulate, true);
    common(reconstruct, true);
    common(check, false);
    common(plan, true);
    common(filters, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        const auto cfg = resolve(flags);
        const auto target = target_of(flags.target);

        if (simulate->parsed()) {
            list(wb::write_simulation(cfg, target));
            return exit_ok;
        }
        if (plan->parsed()) {
            list(wb::write_plans(cfg, target));
            return exit_ok;
        }
        if (filters->parsed()) {
            list(wb::write_filters(cfg, target));
            return exit_ok;
        }
        if (check->parsed()) {
            bool ok = true;
            for (const auto& item : wb::run_checks(cfg)) {
                std::cout << (item.pass ? "PASS " : "FAIL ") << item.name << ": " << item.detail << '\n';
                ok = ok && item.pass;
            }
            return ok ? exit_ok : exit_check;
        }
        if (reconstruct->parsed()) {
            std::optional<qnoise::reconstruction::SpectrumEstimate> prior;
            if (target == wb::Target::q) {
                const auto path = cfg.out_dir / "spectrum_c.csv";
                std::ifstream in(path);
                if (!in)
                    throw qnoise::ConfigError("target q needs " + path.string() +
                                              " from an earlier c run; use --target both instead");
                prior = wb::read_spectrum_csv(in, qnoise::reconstruction::Kind::plus);
            }
            const auto run = wb::reconstruct(cfg, target, [](const std::string& s) { std::cerr << s << '\n'; },
                                             prior ? &*prior : nullptr);
            for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
            list(wb::write_reconstruction(cfg, run));
            return exit_ok;
        }
    } catch (const qnoise::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return exit_ok;
}
