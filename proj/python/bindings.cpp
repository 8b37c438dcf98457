#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iccl/actr.hpp"
#include "iccl/error.hpp"
#include "iccl/metric.hpp"
#include "iccl/runner.hpp"
#include "iccl/schedule.hpp"
#include "iccl/task_gen.hpp"

namespace py = pybind11;
using namespace iccl;

// Structured values cross the boundary as JSON text; the Python package wraps
// these calls with json.loads / json.dumps.
namespace {

ScheduleSpec spec_from(const std::string& kind, int phi, int k, int phi_i, bool with_identifiers, bool trailing) {
  ScheduleSpec s;
  s.kind = schedule_kind_from_string(kind);
  s.phi = phi;
  s.k = k;
  s.phi_i = phi_i;
  s.with_identifiers = with_identifiers;
  s.trailing_interference = trailing;
  return s;
}

actr::ActrParams params_from(const nlohmann::json& j) {
  return {j.at("d").get<double>(), j.at("s").get<double>(), j.value("kappa", 1.0), j.at("gamma").get<double>()};
}

actr::HumanReference reference_from(const std::string& text) {
  return text.empty() ? actr::default_human_reference() : actr::human_reference_from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.attr("__version__") = kToolVersion;

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<SchemaError> schema_error(m, "SchemaError", PyExc_ValueError);
  static py::exception<TransportError> transport_error(m, "TransportError", PyExc_RuntimeError);
  static py::exception<DegenerateReference> degenerate(m, "DegenerateReference", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const SchemaError& e) {
      schema_error(e.what());
    } catch (const TransportError& e) {
      transport_error(e.what());
    } catch (const DegenerateReference& e) {
      degenerate(e.what());
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const std::domain_error& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "generate_task",
      [](int n_states, int task_id, const std::string& label, std::uint64_t seed) {
        return nlohmann::json(generate_task(n_states, task_id, label, seed)).dump();
      },
      py::arg("n_states"), py::arg("task_id"), py::arg("label"), py::arg("seed"));

  m.def(
      "build_sequence",
      [](const std::string& kind, int phi, int k, int phi_i, bool with_identifiers, bool trailing,
         const std::string& target, const std::string& interference, int phi_d, std::uint64_t seed) {
        std::vector<TaskSpec> inter;
        for (const auto& t : nlohmann::json::parse(interference)) inter.push_back(task_from_json(t));
        const auto seq = build_sequence(spec_from(kind, phi, k, phi_i, with_identifiers, trailing),
                                        task_from_json(nlohmann::json::parse(target)), inter, phi_d, seed);
        return nlohmann::json(seq).dump();
      },
      py::arg("kind"), py::arg("phi"), py::arg("k"), py::arg("phi_i"), py::arg("with_identifiers"),
      py::arg("trailing_interference"), py::arg("target"), py::arg("interference"), py::arg("phi_d"),
      py::arg("seed"));

  m.def(
      "render_prompt",
      [](const std::string& sequence, int query, const std::string& label) {
        return render_prompt(sequence_from_json(nlohmann::json::parse(sequence)), query, label);
      },
      py::arg("sequence"), py::arg("query_state"), py::arg("target_label") = std::string(kTargetLabel));

  m.def(
      "practice_times",
      [](const std::string& kind, int phi, int k, int phi_i, bool trailing, const std::string& convention) {
        const auto c = convention == "literal" ? PracticeTimeConvention::Literal : PracticeTimeConvention::BlockCorrected;
        if (convention != "literal" && convention != "block-corrected")
          throw ConfigError("unknown practice-time convention: " + convention);
        return practice_times(spec_from(kind, phi, k, phi_i, true, trailing), c).times;
      },
      py::arg("kind"), py::arg("phi"), py::arg("k"), py::arg("phi_i") = 0, py::arg("trailing_interference") = false,
      py::arg("convention") = "block-corrected");

  m.def(
      "bhattacharyya",
      [](const std::vector<double>& p, const std::vector<double>& q) {
        return bhattacharyya(Distribution(p), Distribution(q));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "normalized_performance",
      [](const std::vector<double>& p_hat, const std::vector<double>& p_star) {
        return normalized_performance(Distribution(p_hat), Distribution(p_star));
      },
      py::arg("p_hat"), py::arg("p_star"));
  m.def(
      "aggregate",
      [](const std::vector<double>& values) {
        const auto s = aggregate(values);
        return py::make_tuple(s.mean, s.ci95, s.n);
      },
      py::arg("values"));
  m.def("sign_test_p", &sign_test_p, py::arg("wins"), py::arg("n"));

  m.def(
      "activation",
      [](const std::string& params, const std::vector<long>& times, double t) {
        return actr::activation(params_from(nlohmann::json::parse(params)), PracticeSchedule{times}, t);
      },
      py::arg("params"), py::arg("times"), py::arg("t"));
  m.def(
      "retention_hat",
      [](const std::string& params, const std::vector<long>& times, double t) {
        return actr::retention_hat(params_from(nlohmann::json::parse(params)), PracticeSchedule{times}, t);
      },
      py::arg("params"), py::arg("times"), py::arg("t"));
  m.def(
      "hrs_md",
      [](double d, double s, double gamma, const std::string& reference) {
        const std::array<double, 3> theta{d, s, gamma};
        return actr::hrs_md(std::span<const double, 3>(theta), reference_from(reference));
      },
      py::arg("d"), py::arg("s"), py::arg("gamma"), py::arg("reference") = "");
  m.def("hrs_score", &actr::hrs_score, py::arg("d_squared"));

  m.def(
      "fit_curves",
      [](const std::string& curves, int starts, std::uint64_t seed) {
        std::vector<actr::CurveData> data;
        for (const auto& c : nlohmann::json::parse(curves)) {
          actr::CurveData cd;
          cd.practice.times = c.at("times").get<std::vector<long>>();
          for (const auto& pt : c.at("points")) cd.points.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
          data.push_back(std::move(cd));
        }
        actr::FitOptions o;
        o.starts = starts;
        o.seed = seed;
        py::gil_scoped_release release;
        return actr::to_json(actr::fit(data, o), "").dump();
      },
      py::arg("curves"), py::arg("starts") = 32, py::arg("seed") = actr::FitOptions{}.seed);

  m.def(
      "run_experiment",
      [](const std::string& config, int jobs, bool write_files) {
        const auto c = nlohmann::json::parse(config).get<ExperimentConfig>();
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c, {jobs, false, write_files});
        }
        return nlohmann::json{{"results_csv", measurements_csv(r.rows)}, {"manifest", r.manifest}}.dump();
      },
      py::arg("config"), py::arg("jobs") = 1, py::arg("write_files") = false);

  m.def(
      "fit_actr",
      [](const std::vector<std::filesystem::path>& results, const std::string& method, const std::string& reference) {
        ActrFitOptions o;
        o.reference = reference_from(reference);
        py::gil_scoped_release release;
        return fit_actr(results, method, o).dump();
      },
      py::arg("results"), py::arg("method") = "", py::arg("reference") = "");

  m.def(
      "report",
      [](const std::vector<std::filesystem::path>& results, const std::vector<std::filesystem::path>& fits,
         const std::filesystem::path& out, bool clamp) {
        py::gil_scoped_release release;
        report(results, fits, out, {clamp});
      },
      py::arg("results"), py::arg("fits"), py::arg("out"), py::arg("clamp") = false);
}
