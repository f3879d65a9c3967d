#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ossd/cli.hpp"
#include "ossd/errors.hpp"
#include "ossd/io.hpp"

namespace py = pybind11;
using namespace ossd;

namespace {

Eigen::MatrixXd stack(const std::vector<Instance>& instances, Eigen::Index d) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(instances.size()), d);
  for (std::size_t i = 0; i < instances.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = instances[i].features.transpose();
  return m;
}

// -1 marks OOD, -2 background.
std::vector<int> origin_codes(const std::vector<Instance>& instances) {
  std::vector<int> out;
  for (const auto& inst : instances) {
    out.push_back(inst.origin.is_id() ? inst.origin.index : (inst.origin.is_ood() ? -1 : -2));
  }
  return out;
}

std::vector<Eigen::VectorXd> rows_of(const Eigen::MatrixXd& m) {
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

RunSpec spec_from(const std::map<std::string, std::string>& settings) {
  RunSpec spec;
  for (const auto& [k, v] : settings) apply_setting(spec, k, v);
  spec.scenario.validate();
  spec.train.validate();
  return spec;
}

py::dict checkpoint_dict(const Checkpoint& c) {
  py::dict d;
  d["iter"] = c.iteration;
  d["n_pseudo_id"] = c.n_pseudo_id;
  d["n_pseudo_ood"] = c.n_pseudo_ood;
  d["fp_rate"] = c.fp_rate;
  d["test_acc"] = c.test_acc;
  d["ood_auroc"] = c.ood_auroc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Open-set self-training simulator and OOD scoring toolkit";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<ClassifierParams>(m, "ClassifierParams")
      .def(py::init([](std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed, double scale) {
             return init_params(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h),
                                static_cast<Eigen::Index>(c), seed, scale);
           }),
           py::arg("d"), py::arg("hidden"), py::arg("outputs"), py::arg("seed") = 0, py::arg("scale") = 0.5)
      .def_readwrite("w1", &ClassifierParams::w1)
      .def_readwrite("b1", &ClassifierParams::b1)
      .def_readwrite("w2", &ClassifierParams::w2)
      .def_readwrite("b2", &ClassifierParams::b2)
      .def_property_readonly("num_outputs", &ClassifierParams::num_outputs)
      .def("logits", [](const ClassifierParams& p, const Eigen::VectorXd& x) { return forward(p, x).logits; })
      .def("hidden", [](const ClassifierParams& p, const Eigen::VectorXd& x) { return forward(p, x).hidden; })
      .def("save", [](const ClassifierParams& p, const std::filesystem::path& path) { save_model(path, p); })
      .def_static("load", &load_model)
      .def("__eq__", [](const ClassifierParams& a, const ClassifierParams& b) { return a == b; });

  py::class_<ClassStats>(m, "ClassStats")
      .def_readonly("means", &ClassStats::means)
      .def_readonly("pooled_cov", &ClassStats::pooled_cov)
      .def_readonly("precision", &ClassStats::precision);

  m.def(
      "fit_class_stats",
      [](const Eigen::MatrixXd& features, const std::vector<int>& labels, int num_classes, double epsilon) {
        return fit_class_stats(rows_of(features), labels, num_classes, epsilon);
      },
      py::arg("features"), py::arg("labels"), py::arg("num_classes"), py::arg("epsilon") = 0.05);

  m.def("softmax", &softmax, py::arg("logits"), py::arg("temperature") = 1.0);
  m.def(
      "msp_score", [](const std::vector<double>& p, std::size_t k) { return msp_score(p, k); }, py::arg("probs"),
      py::arg("num_foreground") = 0);
  m.def("iac_score", [](const std::vector<double>& p, std::size_t K) { return iac_score(p, K); });
  m.def(
      "energy_score", [](const std::vector<double>& l, double t) { return energy_score(l, t); }, py::arg("logits"),
      py::arg("temperature") = 1.0);
  m.def("entropy_score", [](const std::vector<double>& p) { return entropy_score(p); });
  m.def("mahalanobis_score", &mahalanobis_score);
  m.def("euclidean_score", &euclidean_score);

  m.def(
      "score_batch",
      [](const std::string& kind, const Eigen::MatrixXd& inputs, const ClassifierParams& net, int K,
         const ClassStats* stats, double temperature, bool raw_features, bool entropy_foreground_only) {
        const ScoreOptions opts{raw_features ? FeatureSource::Raw : FeatureSource::Hidden, entropy_foreground_only};
        return score_batch(parse_score_kind(kind, temperature), rows_of(inputs), net, K, stats, opts);
      },
      py::arg("kind"), py::arg("inputs"), py::arg("net"), py::arg("K"), py::arg("stats") = nullptr,
      py::arg("temperature") = 1.0, py::arg("raw_features") = false, py::arg("entropy_foreground_only") = false);

  m.def(
      "calibrate_threshold", [](const std::vector<double>& s, double tnr) { return calibrate_threshold(s, tnr); },
      py::arg("id_scores"), py::arg("target_tnr") = 0.95);
  m.def("auroc", [](const std::vector<double>& id, const std::vector<double>& ood) { return auroc(id, ood); });
  m.def("fpr_at_tnr",
        [](const std::vector<double>& id, const std::vector<double>& ood, double x) { return fpr_at_tnr(id, ood, x); });
  m.def("evaluate_scores", [](const std::vector<double>& id, const std::vector<double>& ood) {
    const MetricReport r = evaluate_scores(id, ood);
    return py::dict(py::arg("auroc") = r.auroc, py::arg("fpr50") = r.fpr50, py::arg("fpr75") = r.fpr75,
                    py::arg("fpr95") = r.fpr95);
  });

  m.def(
      "generate_scenario",
      [](const std::map<std::string, std::string>& settings, std::uint64_t seed) {
        const RunSpec spec = spec_from(settings);
        const Scenario s = generate_scenario(spec.scenario, seed);
        const Eigen::Index d = spec.scenario.d;
        const auto labeled = flatten(s.labeled);
        const auto unlabeled = flatten(s.unlabeled);
        py::dict out;
        out["labeled_x"] = stack(labeled, d);
        out["labeled_y"] = origin_codes(labeled);
        out["unlabeled_x"] = stack(unlabeled, d);
        out["unlabeled_origin"] = origin_codes(unlabeled);
        out["test_x"] = stack(s.test, d);
        out["test_y"] = origin_codes(s.test);
        out["probe_x"] = stack(s.probe, d);
        out["probe_origin"] = origin_codes(s.probe);
        return out;
      },
      py::arg("settings") = std::map<std::string, std::string>{}, py::arg("seed") = 0,
      "Scenario as arrays. Origin codes: class index for ID, -1 OOD, -2 background.");

  m.def(
      "simulate",
      [](const std::string& mode, std::uint64_t seed, const std::map<std::string, std::string>& settings) {
        RunSpec spec = spec_from(settings);
        spec.train.seed = seed;
        const Scenario s = generate_scenario(spec.scenario, seed);
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(parse_mode(mode), spec.train, s);
        }
        py::list rows;
        for (const auto& c : r.telemetry.rows) rows.append(checkpoint_dict(c));
        py::dict out;
        out["telemetry"] = rows;
        out["teacher"] = r.ts.teacher;
        out["student"] = r.ts.student;
        out["burn_in"] = r.burn_in;
        out["offline_net"] = r.offline_net ? py::cast(*r.offline_net) : py::none();
        out["delta_ood"] = r.delta_ood;
        out["telemetry_csv"] = telemetry_csv(r.telemetry);
        return out;
      },
      py::arg("mode"), py::arg("seed") = 0, py::arg("settings") = std::map<std::string, std::string>{});

  m.def("config_keys", &config_keys);
  m.def("read_embeddings", [](const std::filesystem::path& path) {
    const EmbeddingMatrix e = read_embeddings(path);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols));
    for (std::size_t i = 0; i < e.rows; ++i) x.row(static_cast<Eigen::Index>(i)) = e.row(i).transpose();
    return py::make_tuple(x, e.labels ? py::cast(*e.labels) : py::none());
  });
  m.def("format_real", &format_real);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the ossd tool in-process; returns (exit_code, stdout, stderr).");
}
