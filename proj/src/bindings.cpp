#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qnoise/workbench.hpp"

namespace py = pybind11;
using namespace qnoise;
namespace wb = qnoise::workbench;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array to_array(const std::vector<double>& v) {
    Array a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

py::array_t<bool> to_bool_array(const std::vector<bool>& v) {
    py::array_t<bool> a(static_cast<py::ssize_t>(v.size()));
    auto m = a.mutable_unchecked<1>();
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<py::ssize_t>(i)) = v[i];
    return a;
}

wb::Target target_of(const std::string& s) {
    if (s == "c") return wb::Target::c;
    if (s == "q") return wb::Target::q;
    if (s == "both") return wb::Target::both;
    throw ConfigError("target must be c, q or both");
}

reconstruction::WindowSpec window_of(const std::string& kind, double t1, int n) {
    reconstruction::WindowSpec w;
    if (kind == "free") w.kind = reconstruction::SequenceKind::free;
    else if (kind == "hahn") w.kind = reconstruction::SequenceKind::hahn;
    else if (kind == "cpmg") w.kind = reconstruction::SequenceKind::cpmg;
    else throw ConfigError("window must be free, hahn or cpmg");
    w.t1 = t1;
    w.n = n;
    return w;
}

const spectra::SpectrumModel& model_of(const wb::WorkbenchConfig& cfg, const std::string& which) {
    if (which == "c") return cfg.pair.c;
    if (which == "q") return cfg.pair.q;
    throw ConfigError("spectrum must be c or q");
}

py::dict estimate_dict(const reconstruction::SpectrumEstimate& e) {
    py::dict d;
    d["omega"] = to_array(e.omega);
    d["value"] = to_array(e.value);
    d["error_bound"] = to_array(e.error_bound);
    d["valid"] = to_bool_array(e.valid);
    d["mfs"] = to_bool_array(e.mfs);
    d["plan_id"] = e.plan_id;
    return d;
}

py::dict plan_dict(const reconstruction::SamplingPlan& p) {
    py::dict d;
    d["id"] = p.id;
    d["window"] = p.window.name();
    d["t1"] = p.window.t1;
    d["Ts"] = p.Ts;
    d["K"] = p.K;
    d["shots"] = p.shots ? py::cast(*p.shots) : py::none();
    d["target"] = py::make_tuple(p.target.lo, p.target.hi);
    d["omega_c"] = p.omega_c;
    d["violations"] = reconstruction::plan_violations(p);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Qubit noise spectroscopy: spectra, filters, dephasing integrals and spectrum reconstruction";

    // Translators run newest first, so the base class goes in before its subclass.
    py::register_exception<Error>(m, "QnoiseError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<wb::WorkbenchConfig>(m, "Config")
        .def_static("preset", &wb::preset, py::arg("name") = "paper-sec5")
        .def_static("from_json", [](const std::string& text) { return wb::parse_config(text); })
        .def_static("load", [](const std::filesystem::path& p) { return wb::load_config(p); })
        .def_readwrite("name", &wb::WorkbenchConfig::name)
        .def_readwrite("seed", &wb::WorkbenchConfig::seed)
        .def_readwrite("out_dir", &wb::WorkbenchConfig::out_dir)
        .def_property(
            "mode", [](const wb::WorkbenchConfig& c) { return c.mode == wb::Mode::exact ? "exact" : "sampled"; },
            [](wb::WorkbenchConfig& c, const std::string& s) {
                if (s != "exact" && s != "sampled") throw ConfigError("mode must be exact or sampled");
                c.mode = s == "exact" ? wb::Mode::exact : wb::Mode::sampled;
            })
        .def_property(
            "q_scale", [](const wb::WorkbenchConfig& c) { return c.pair.q.scale; },
            [](wb::WorkbenchConfig& c, double s) { c.pair.q.scale = s; })
        .def_property_readonly("cutoff", [](const wb::WorkbenchConfig& c) { return c.pair.cutoff(); })
        .def_property_readonly("Delta", [](const wb::WorkbenchConfig& c) { return c.constraints.Delta; })
        .def_property_readonly("delta", [](const wb::WorkbenchConfig& c) { return c.constraints.delta; })
        .def_property_readonly("c_regions",
                               [](const wb::WorkbenchConfig& c) {
                                   std::vector<std::string> ids;
                                   for (const auto& r : c.c_regions) ids.push_back(r.id);
                                   return ids;
                               })
        .def_property_readonly("q_regions", [](const wb::WorkbenchConfig& c) {
            std::vector<std::string> ids;
            for (const auto& r : c.q_regions) ids.push_back(r.id);
            return ids;
        });

    m.def(
        "spectrum",
        [](const wb::WorkbenchConfig& cfg, const std::string& which, const Array& omega) {
            const auto& model = model_of(cfg, which);
            auto w = to_vector(omega);
            for (auto& x : w) x = spectra::eval_spectrum(model, x);
            return to_array(w);
        },
        py::arg("config"), py::arg("which"), py::arg("omega"), "S+ ('c') or S- ('q') at angular frequencies");

    m.def(
        "correlation",
        [](const wb::WorkbenchConfig& cfg, const Array& tau) {
            const auto t = to_vector(tau);
            std::vector<double> cp(t.size()), cm(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) {
                const auto v = spectra::correlation(cfg.pair, t[i]);
                cp[i] = v.c_plus;
                cm[i] = v.c_minus_imag;
            }
            return py::make_tuple(to_array(cp), to_array(cm));
        },
        py::arg("config"), py::arg("tau"), "C+(tau) and Im C-(tau)");

    m.def(
        "filter_abs2",
        [](const std::string& window, double t1, const Array& omega, int n, double Delta, double delta) {
            const auto sw = window_of(window, t1, n).switching({Delta, delta});
            auto w = to_vector(omega);
            for (auto& x : w) x = std::norm(control::filter(sw, x));
            return to_array(w);
        },
        py::arg("window"), py::arg("t1"), py::arg("omega"), py::arg("n") = 0, py::arg("Delta") = 1e-6,
        py::arg("delta") = 1e-7, "|F(omega, t1)|^2 of a free, Hahn or CPMG window");

    m.def(
        "window_mfs",
        [](const std::string& window, double t1, int n, double Delta, double delta) -> py::object {
            const auto b = reconstruction::window_mfs(window_of(window, t1, n), {Delta, delta});
            if (!b) return py::none();
            return py::make_tuple(b->lo, b->hi);
        },
        py::arg("window"), py::arg("t1"), py::arg("n") = 0, py::arg("Delta") = 1e-6, py::arg("delta") = 1e-7,
        "Main frequency support (rad/s) of a window's filter");

    m.def(
        "window_integral",
        [](const wb::WorkbenchConfig& cfg, const std::string& window, double t1, double t2, const std::string& kind,
           int n) {
            const auto sw = window_of(window, t1, n).switching(cfg.constraints);
            const auto grid = spectra::make_spectral_grid(cfg.pair, t2 + t1);
            const auto k = kind == "plus" ? dynamics::Kind::plus : dynamics::Kind::minus;
            if (kind != "plus" && kind != "minus") throw ConfigError("kind must be plus or minus");
            return dynamics::integral_freq_domain(sw, sw, t2, grid, k).value;
        },
        py::arg("config"), py::arg("window"), py::arg("t1"), py::arg("t2"), py::arg("kind") = "plus",
        py::arg("n") = 0, "Dephasing integral of a window against its copy delayed by t2");

    m.def(
        "check",
        [](const wb::WorkbenchConfig& cfg) {
            py::list out;
            for (const auto& item : wb::run_checks(cfg)) {
                py::dict d;
                d["name"] = item.name;
                d["pass"] = item.pass;
                d["detail"] = item.detail;
                out.append(d);
            }
            return out;
        },
        py::arg("config"));

    m.def(
        "plans",
        [](const wb::WorkbenchConfig& cfg) {
            py::list out;
            for (const auto* list : {&cfg.c_regions, &cfg.q_regions})
                for (const auto& r : *list) out.append(plan_dict(wb::plan_region(cfg, r)));
            return out;
        },
        py::arg("config"));

    m.def(
        "reconstruct",
        [](const wb::WorkbenchConfig& cfg, const std::string& target) {
            wb::ReconstructionRun run;
            {
                py::gil_scoped_release release;
                run = wb::reconstruct(cfg, target_of(target));
            }
            py::dict out;
            out["omega"] = to_array(run.omega);
            if (run.c_stitched) out["c"] = estimate_dict(run.c_stitched->estimate);
            if (run.q_stitched) out["q"] = estimate_dict(run.q_stitched->estimate);
            py::list regions;
            for (const auto* list : {&run.c, &run.q})
                for (const auto& r : *list) {
                    auto d = plan_dict(r.plan);
                    const auto& truth = list == &run.c ? cfg.pair.c : cfg.pair.q;
                    d["median_relative_error"] = wb::median_relative_error(r.estimate, truth, r.plan.target);
                    d["seconds"] = r.seconds;
                    d["experiments"] = r.experiments;
                    d["estimate"] = estimate_dict(r.estimate);
                    regions.append(d);
                }
            out["regions"] = regions;
            out["warnings"] = run.warnings;
            return out;
        },
        py::arg("config"), py::arg("target") = "both");

    m.def(
        "simulate",
        [](const wb::WorkbenchConfig& cfg, const std::string& target) {
            return wb::write_simulation(cfg, target_of(target));
        },
        py::arg("config"), py::arg("target") = "c", "Write expectation, correlation and spectrum files");
}
