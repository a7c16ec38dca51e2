// Python surface of the library. Structured results cross as JSON text; the package wrapper decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "exgrpo/config.hpp"
#include "exgrpo/curation.hpp"
#include "exgrpo/error.hpp"
#include "exgrpo/metrics.hpp"
#include "exgrpo/pipeline.hpp"
#include "exgrpo/rewards.hpp"
#include "exgrpo/synth.hpp"
#include "exgrpo/update.hpp"

namespace py = pybind11;
using namespace exgrpo;

namespace {

RunConfig config_from(const std::string& text, const std::string& out_dir) {
    RunConfig c = parse_run_config(text);
    if (!out_dir.empty()) c.out_dir = out_dir;
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "ExGRPO reinforcement-distillation core";

    auto base = py::register_exception<Error>(m, "ExgrpoError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
    py::register_exception<OracleError>(m, "OracleError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<InvariantError>(m, "InvariantError", base.ptr());

    m.def("parse_config", [](const std::string& text) {
        auto c = parse_run_config(text);
        c.validate();
        return c.to_json().dump();
    }, py::arg("text") = "");

    m.def("generate_tasks", [](std::size_t n_tasks, std::uint64_t seed, bool include_inverse) {
        SyntheticTaskSpec spec;
        spec.n_tasks = n_tasks;
        spec.seed = seed;
        spec.include_inverse = include_inverse;
        nlohmann::json out = nlohmann::json::array();
        for (const auto& t : generate_tasks(spec)) out.push_back(task_to_json(t));
        return out.dump();
    }, py::arg("n_tasks") = 100, py::arg("seed") = 0, py::arg("include_inverse") = false);

    m.def("rejective_keep", &rejective_keep, py::arg("n_prime"), py::arg("lam"), py::arg("tau_hard"));

    m.def("dsu_bonus", [](double p_full, double p_partial, double delta, double nu) {
        RewardConfig c;
        c.delta = delta;
        c.nu = nu;
        c.validate();
        return dsu_bonus(p_full, p_partial, c);
    }, py::arg("p_full"), py::arg("p_partial"), py::arg("delta") = 0.1, py::arg("nu") = 1.05);

    m.def("normalize_advantages", [](const std::vector<double>& r, double floor, bool mean_only) {
        return normalize_advantages(r, floor, mean_only);
    }, py::arg("rewards"), py::arg("norm_floor") = 1e-8, py::arg("mean_only") = false);
    m.def("clipped_term", &clipped_term, py::arg("ratio"), py::arg("advantage"), py::arg("epsilon") = 0.2);
    m.def("clip_active", &clip_active, py::arg("ratio"), py::arg("advantage"), py::arg("epsilon") = 0.2);

    m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });
    m.def("moving_average", [](const std::vector<double>& s, std::size_t w) { return moving_average(s, w); });

    m.def("run_pipeline", [](const std::string& text, const std::string& out_dir) {
        const RunConfig c = config_from(text, out_dir);
        RunSummary s;
        {
            py::gil_scoped_release release;
            s = run_pipeline(c);
        }
        return s.to_json().dump();
    }, py::arg("config_text") = "", py::arg("out_dir") = "");

    m.def("run_theorem_check", [](const std::string& text, std::size_t n_seeds, const std::vector<double>& deltas) {
        const RunConfig c = config_from(text, "");
        TheoremReport r;
        {
            py::gil_scoped_release release;
            r = run_theorem_check(c, n_seeds, deltas);
        }
        return r.to_json().dump();
    }, py::arg("config_text") = "", py::arg("n_seeds") = 20, py::arg("deltas") = std::vector<double>{0.0, 0.1});
}
