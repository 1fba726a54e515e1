/*
 * Copyright 2026 The TPFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Python bindings: opinion algebra, special functions, models and the
// experiment runner.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tpfl/errors.h"
#include "tpfl/experiment.h"
#include "tpfl/special_fns.h"

namespace py = pybind11;

namespace tpfl {
namespace {

py::dict Metrics(const MetricList& metrics) {
  py::dict d;
  for (const auto& [k, v] : metrics) d[py::str(k)] = v;
  return d;
}

}  // namespace
}  // namespace tpfl

PYBIND11_MODULE(_core, m) {
  using namespace tpfl;
  m.doc() = "Trustworthy personalized federated learning core";
  m.attr("__version__") = ArtifactVersion();
  m.attr("SCHEMA_VERSION") = kSchemaVersion;

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<ValidationError> validation(m, "ValidationError", error.ptr());
  static py::exception<ParseError> parse(m, "ParseError", error.ptr());
  static py::exception<DomainError> domain(m, "DomainError", error.ptr());
  static py::exception<DegenerateError> degenerate(m, "DegenerateError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(validation.ptr())(e.what());
      exc.attr("problems") = e.problems();
      PyErr_SetObject(validation.ptr(), exc.ptr());
    } catch (const ParseError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(parse.ptr())(e.what());
      exc.attr("line") = e.line();
      exc.attr("column") = e.column();
      PyErr_SetObject(parse.ptr(), exc.ptr());
    } catch (const DomainError& e) {
      domain(e.what());
    } catch (const DegenerateError& e) {
      degenerate(e.what());
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("ln_gamma", &LnGamma, py::arg("x"));
  m.def("digamma", &Digamma, py::arg("x"));
  m.def("trigamma", &Trigamma, py::arg("x"));

  py::class_<Opinion>(m, "Opinion")
      .def(py::init([](std::vector<double> belief, double uncertainty, std::vector<double> prior,
                       double prior_weight) {
             Opinion op{std::move(belief), uncertainty, std::move(prior), prior_weight};
             op.Validate();
             return op;
           }),
           py::arg("belief"), py::arg("uncertainty"), py::arg("prior"), py::arg("prior_weight"))
      .def_readonly("belief", &Opinion::belief)
      .def_readonly("uncertainty", &Opinion::uncertainty)
      .def_readonly("prior", &Opinion::prior)
      .def_readonly("prior_weight", &Opinion::prior_weight)
      .def("evidence", &Opinion::Evidence)
      .def("__repr__", [](const Opinion& op) {
        return "Opinion(belief=" + py::repr(py::cast(op.belief)).cast<std::string>() +
               ", uncertainty=" + std::to_string(op.uncertainty) + ")";
      });

  m.def(
      "opinion_from_evidence",
      [](const std::vector<double>& e, const std::vector<double>& prior, double w) {
        return OpinionFromEvidence(e, prior, w);
      },
      py::arg("evidence"), py::arg("prior"), py::arg("prior_weight"));
  m.def(
      "dirichlet_from_opinion",
      [](const Opinion& op) { return DirichletFromOpinion(op).alpha(); }, py::arg("opinion"));
  m.def(
      "opinion_from_dirichlet",
      [](std::vector<double> alpha, const std::vector<double>& prior, double w) {
        return OpinionFromDirichlet(DirichletParams(std::move(alpha)), prior, w);
      },
      py::arg("alpha"), py::arg("prior"), py::arg("prior_weight"));
  m.def("expect_prob", &ExpectProb, py::arg("opinion"));
  m.def("fuse", &Fuse, py::arg("a"), py::arg("b"));
  m.def(
      "fuse_many", [](const std::vector<Opinion>& ops) { return FuseMany(ops); },
      py::arg("opinions"));
  m.def(
      "kl_dirichlet",
      [](std::vector<double> p, std::vector<double> q) {
        return KlDirichlet(DirichletParams(std::move(p)), DirichletParams(std::move(q)));
      },
      py::arg("p"), py::arg("q"));

  py::class_<EvidentialModel>(m, "EvidentialModel")
      .def_static("load", &EvidentialModel::LoadFile, py::arg("path"))
      .def("save", &EvidentialModel::SaveFile, py::arg("path"))
      .def_property_readonly("input_dim", &EvidentialModel::input_dim)
      .def_property_readonly("num_classes", &EvidentialModel::num_classes)
      .def_property_readonly("prior", &EvidentialModel::prior)
      .def_property_readonly("prior_weight", &EvidentialModel::prior_weight)
      .def(
          "evidence", [](const EvidentialModel& md, const std::vector<double>& x) {
            return md.Forward(x);
          },
          py::arg("x"))
      .def(
          "opinion", [](const EvidentialModel& md, const std::vector<double>& x) {
            return md.OpinionFor(x);
          },
          py::arg("x"))
      .def("parameters", &EvidentialModel::AllParams)
      .def("__eq__", &EvidentialModel::operator==);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def("to_json", &ConfigToJson)
      .def_property_readonly("seed", [](const ExperimentConfig& c) { return c.scenario.seed; })
      .def_property_readonly("rounds", [](const ExperimentConfig& c) { return c.scenario.rounds; });

  m.def("parse_config", &ParseConfigText, py::arg("text"),
        py::arg("overrides") = std::vector<std::string>{},
        "Parse config text; raises ValidationError listing every problem.");
  m.def("load_config", &ParseConfigFile, py::arg("path"),
        py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg, const std::filesystem::path& out) {
        RunOutcome r;
        {
          py::gil_scoped_release release;
          r = RunExperiment(cfg, out);
        }
        return Metrics(r.metrics);
      },
      py::arg("config"), py::arg("out_dir"),
      "Run one experiment into out_dir and return the summary metrics.");
  m.def("compare_runs", &CompareRuns, py::arg("summaries"));
  m.def(
      "expand_grid",
      [](const std::string& spec) { return ExpandGrid(ParseGrid(spec)); }, py::arg("spec"));
}
