// Python bindings. Structured values cross the boundary as JSON text; the
// sitfuse package decodes them into plain dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "sitfuse/error.hpp"
#include "sitfuse/experiment.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/losses.hpp"
#include "sitfuse/numcore.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using namespace sitfuse;

Action action_from_name(const std::string& name) {
  for (int a = 0; a < kActionCount; ++a)
    if (to_string(static_cast<Action>(a)) == name) return static_cast<Action>(a);
  throw ConfigError("unknown action '" + name + "'");
}

ExperimentConfig config_of(const std::string& path, const std::vector<std::string>& overrides) {
  return load_experiment(path, overrides);
}

/// Environment handle for interactive use.
class PyEnvironment {
 public:
  explicit PyEnvironment(Environment env) : env_(std::move(env)) {}

  static PyEnvironment generate(std::uint64_t seed, const std::string& params_json) {
    GenerationParams params;
    if (!params_json.empty()) params = json::parse(params_json).get<GenerationParams>();
    return PyEnvironment(make_environment(0, generate_environment(seed, params)));
  }

  static PyEnvironment from_json_text(const std::string& text) {
    return PyEnvironment(make_environment(0, grid_map_from_json(json::parse(text))));
  }

  int width() const { return env_.map.width(); }
  int height() const { return env_.map.height(); }
  int node_count() const { return env_.graph.node_count(); }
  std::vector<std::string> rows() const { return env_.map.rows(); }
  std::string to_json_text() const { return to_json(env_.map).dump(); }

  int node_at(int x, int y) const { return env_.graph.node_at({x, y}); }
  std::pair<int, int> cell(int node) const {
    check_node(node);
    const Cell c = env_.graph.cell(node);
    return {c.x, c.y};
  }

  /// Unreachable nodes report -1.
  std::vector<int> distances(const std::string& cls, int radius) const {
    DistanceMap d = shortest_distances(env_.graph, object_class_from_string(cls), radius);
    for (int& v : d)
      if (v == kUnreachable) v = -1;
    return d;
  }

  std::string optimal_action(int node, const std::string& cls, int radius) const {
    check_node(node);
    AgentState s;
    s.position = node;
    s.target = object_class_from_string(cls);
    return std::string(to_string(sitfuse::optimal_action(env_.graph, s, radius)));
  }

  int step(int node, const std::string& action) const {
    check_node(node);
    AgentState s;
    s.position = node;
    return sitfuse::step(env_.graph, s, action_from_name(action)).position;
  }

 private:
  void check_node(int node) const {
    if (node < 0 || node >= env_.graph.node_count()) throw ConfigError("node out of range");
  }

  Environment env_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "situational fusion core";

  py::register_exception<sitfuse::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<sitfuse::DataError>(m, "DataError", PyExc_RuntimeError);

  py::class_<PyEnvironment>(m, "Environment")
      .def_static("generate", &PyEnvironment::generate, py::arg("seed"), py::arg("params_json") = "")
      .def_static("from_json", &PyEnvironment::from_json_text, py::arg("text"))
      .def_property_readonly("width", &PyEnvironment::width)
      .def_property_readonly("height", &PyEnvironment::height)
      .def_property_readonly("node_count", &PyEnvironment::node_count)
      .def("rows", &PyEnvironment::rows)
      .def("to_json", &PyEnvironment::to_json_text)
      .def("node_at", &PyEnvironment::node_at, py::arg("x"), py::arg("y"))
      .def("cell", &PyEnvironment::cell, py::arg("node"))
      .def("distances", &PyEnvironment::distances, py::arg("cls"), py::arg("radius") = sitfuse::kDefaultGoalRadius)
      .def("optimal_action", &PyEnvironment::optimal_action, py::arg("node"), py::arg("cls"),
           py::arg("radius") = sitfuse::kDefaultGoalRadius)
      .def("step", &PyEnvironment::step, py::arg("node"), py::arg("action"));

  m.def("softmax", [](const std::vector<double>& logits) { return sitfuse::softmax(logits); });
  m.def("cross_entropy", [](const std::vector<double>& probs, int label) {
    return sitfuse::cross_entropy(probs, label).loss;
  });
  m.def("affinity_loss", [](const std::vector<double>& gate, const std::vector<double>& values) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < gate.size(); ++i) names.push_back("r" + std::to_string(i));
    return sitfuse::affinity_loss(gate, sitfuse::AffinityMatrix(names, values)).value;
  });
  m.def("coefficient_of_variation", [](const std::vector<double>& values) {
    return sitfuse::coefficient_of_variation(values).value;
  });
  m.def(
      "load_balance_loss",
      [](const std::vector<std::vector<double>>& gates, bool per_example) {
        return sitfuse::load_balance_loss(
                   gates, per_example ? sitfuse::LblVariant::per_example : sitfuse::LblVariant::batch_mean)
            .value;
      },
      py::arg("gates"), py::arg("per_example") = false);

  m.def("default_config", [] { return to_json(sitfuse::default_experiment()).dump(); });
  m.def("config_digest", [](const std::string& path, const std::vector<std::string>& overrides) {
    return sitfuse::config_digest(config_of(path, overrides));
  });
  m.def("gen", [](const std::string& path, const std::vector<std::string>& overrides) {
    return sitfuse::cmd_gen(config_of(path, overrides)).dump();
  });
  m.def("affinity", [](const std::string& path, const std::vector<std::string>& overrides) {
    return sitfuse::cmd_affinity(config_of(path, overrides)).dump();
  });
  m.def("train", [](const std::string& path, const std::vector<std::string>& overrides, const std::string& model) {
    return sitfuse::cmd_train(config_of(path, overrides), model).dump();
  });
  m.def("evaluate", [](const std::string& path, const std::vector<std::string>& overrides, const std::string& rule,
                       const std::string& model, int k) {
    sitfuse::EvalRequest request;
    request.rule = rule;
    request.model = model;
    request.k = k;
    return sitfuse::cmd_eval(config_of(path, overrides), request).dump();
  });
  m.def("robust", [](const std::string& path, const std::vector<std::string>& overrides, const std::string& model,
                     const std::string& mode) {
    return sitfuse::cmd_robust(config_of(path, overrides), model, sitfuse::drop_mode_from_string(mode)).dump();
  });
  m.def("analyze", [](const std::string& path, const std::vector<std::string>& overrides, const std::string& model) {
    return sitfuse::cmd_analyze(config_of(path, overrides), model).dump();
  });
  m.def("table", [](const std::vector<std::string>& reports, const std::string& out_prefix) {
    return sitfuse::cmd_table(reports, out_prefix).dump();
  });
  m.def("gradcheck", [](std::uint64_t seed, int configurations) {
    return sitfuse::cmd_gradcheck(seed, configurations).dump();
  });
}
