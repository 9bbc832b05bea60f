#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <numeric>

#include "lrpgraph/config.hpp"
#include "lrpgraph/errors.hpp"
#include "lrpgraph/graph.hpp"
#include "lrpgraph/image.hpp"
#include "lrpgraph/lrp.hpp"
#include "lrpgraph/metrics.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/weights.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

lrp::Tensor to_tensor(const FloatArray& a) {
  lrp::Shape shape(a.shape(), a.shape() + a.ndim());
  return lrp::Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const lrp::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict params_to_dict(const lrp::ParameterStore& params) {
  py::dict d;
  for (const auto& [name, t] : params) d[py::str(name)] = to_array(*t);
  return d;
}

lrp::ParameterStore dict_to_params(const py::dict& d) {
  lrp::ParameterStore params;
  for (const auto& [k, v] : d) {
    params[k.cast<std::string>()] =
        std::make_shared<const lrp::Tensor>(to_tensor(v.cast<FloatArray>()));
  }
  return params;
}

// Network plus its config, rules and z^B bounds.
class Model {
 public:
  Model(lrp::ModelConfig config, const lrp::ParameterStore& params)
      : config_(std::move(config)), net_(lrp::build_network(config_.architecture, params)) {
    if (config_.labels_path && fs::exists(*config_.labels_path)) {
      net_.set_class_labels(lrp::load_labels(*config_.labels_path));
    }
    rules_ = lrp::rules_for(config_, net_);
    options_.bounds = lrp::pixel_bounds_for(config_);
  }

  static Model load(const fs::path& arch, const fs::path& weights) {
    return Model(lrp::load_model_config(arch), lrp::load_weights(weights));
  }

  static Model from_arrays(const std::string& arch_json, const py::dict& params) {
    return Model(lrp::parse_model_config(arch_json), dict_to_params(params));
  }

  py::array_t<float> forward(const FloatArray& x) const {
    return to_array(lrp::forward_trace(net_, to_tensor(x)).scores());
  }

  std::vector<py::array_t<float>> trace(const FloatArray& x) const {
    std::vector<py::array_t<float>> out;
    for (const auto& t : lrp::forward_trace(net_, to_tensor(x)).boundaries) out.push_back(to_array(t));
    return out;
  }

  py::list classify(const FloatArray& x, std::size_t top) const {
    const auto s = lrp::forward_trace(net_, to_tensor(x)).scores();
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    top = std::min(top, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(top), order.end(),
                      [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    py::list out;
    for (std::size_t r = 0; r < top; ++r) {
      out.append(py::make_tuple(order[r], net_.class_label(order[r]), s[order[r]]));
    }
    return out;
  }

  py::dict explain(const FloatArray& x, std::optional<std::size_t> c,
                   const std::vector<std::string>& overrides) const {
    const auto trace = lrp::forward_trace(net_, to_tensor(x));
    const auto rmap = lrp::lrp_explain(net_, trace, resolve(trace, c), rules_with(overrides), options_);
    py::dict d;
    d["class_index"] = rmap.class_index;
    d["pixels"] = to_array(rmap.pixels());
    std::vector<py::array_t<float>> b;
    for (const auto& t : rmap.boundaries) b.push_back(to_array(t));
    d["boundaries"] = b;
    d["dropped"] = rmap.dropped;
    return d;
  }

  py::list top_k_paths(const FloatArray& x, std::size_t k, std::optional<std::size_t> c,
                       const std::string& getopt) const {
    const auto trace = lrp::forward_trace(net_, to_tensor(x));
    const auto g = graph(trace, c, getopt);
    py::list out;
    for (const auto& p : lrp::top_k_paths(g, k).paths) out.append(py::make_tuple(p.nodes, p.weight));
    return out;
  }

  py::list k_sweep(const FloatArray& x, std::size_t k_max, std::optional<std::size_t> c,
                   const std::string& getopt, const std::string& rule) const {
    const auto image = to_tensor(x);
    const auto trace = lrp::forward_trace(net_, image);
    const auto cls = resolve(trace, c);
    const auto g = graph(trace, cls, getopt);
    lrp::SweepOptions opts;
    opts.rule = lrp::parse_k_rule(rule);
    const auto report = lrp::k_sweep(net_, image, g, cls, k_max, opts);
    py::list rows;
    for (const auto& r : report.rows) {
      py::dict d;
      d["k"] = r.k;
      d["mse"] = r.mse;
      d["smape"] = r.smape;
      d["prediction"] = to_array(r.prediction);
      d["chosen"] = r.k == report.chosen_k;
      rows.append(d);
    }
    return rows;
  }

  std::size_t parameter_count() const { return net_.parameter_count(); }
  std::size_t layer_count() const { return net_.layer_count(); }
  lrp::Shape input_shape() const { return net_.input_shape(); }
  std::vector<float> mean() const { return config_.normalization.mean; }
  std::vector<float> stddev() const { return config_.normalization.stddev; }

 private:
  std::size_t resolve(const lrp::ForwardTrace& trace, std::optional<std::size_t> c) const {
    if (c) return *c;
    const auto& s = trace.scores().data();
    return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  }

  lrp::RuleAssignment rules_with(const std::vector<std::string>& overrides) const {
    auto rules = rules_;
    for (const auto& text : overrides) {
      const auto eq = text.find('=');
      const auto dash = text.find('-');
      if (eq == std::string::npos) throw lrp::ConfigError("rule override needs FROM-TO=RULE");
      lrp::RuleRange r;
      r.first = std::stoul(text.substr(0, std::min(dash, eq)));
      r.last = dash < eq ? std::stoul(text.substr(dash + 1, eq - dash - 1)) : r.first;
      r.rule = lrp::parse_rule(text.substr(eq + 1));
      rules.override_range(r);
    }
    rules.validate(net_);
    return rules;
  }

  lrp::RelevanceGraph graph(const lrp::ForwardTrace& trace, std::optional<std::size_t> c,
                            const std::string& getopt) const {
    const auto rmap = lrp::lrp_explain(net_, trace, resolve(trace, c), rules_, options_);
    auto g = lrp::build_relevance_graph(net_, trace, rmap, options_);
    if (getopt == "prose") {
      lrp::apply_get_optimizer(g, trace, rmap, lrp::GetOptimizerMode::Prose);
    } else if (getopt == "literal") {
      lrp::apply_get_optimizer(g, trace, rmap, lrp::GetOptimizerMode::Literal);
    } else if (getopt != "none") {
      throw lrp::ConfigError("getopt must be prose, literal or none");
    }
    return g;
  }

  lrp::ModelConfig config_;
  lrp::Network net_;
  lrp::RuleAssignment rules_;
  lrp::LrpOptions options_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LRP relevance graphs and k-path analysis for CNNs";

  auto base = py::register_exception<lrp::Error>(m, "LrpError", PyExc_RuntimeError);
  py::register_exception<lrp::LoaderError>(m, "LoaderError", base.ptr());
  py::register_exception<lrp::ConfigError>(m, "ConfigError", base.ptr());

  m.def("load_weights", [](const fs::path& p) { return params_to_dict(lrp::load_weights(p)); },
        py::arg("path"));
  m.def("save_weights",
        [](const fs::path& p, const py::dict& d) { lrp::save_weights(p, dict_to_params(d)); },
        py::arg("path"), py::arg("params"));
  m.def("load_image",
        [](const fs::path& p, const lrp::Shape& shape, std::vector<float> mean,
           std::vector<float> stddev) {
          return to_array(lrp::load_image(p, shape, {std::move(mean), std::move(stddev)}));
        },
        py::arg("path"), py::arg("input_shape"), py::arg("mean") = std::vector<float>{0.0f},
        py::arg("std") = std::vector<float>{1.0f});
  m.def("mse", [](const FloatArray& a, const FloatArray& b) { return lrp::mse(to_tensor(a), to_tensor(b)); });
  m.def("smape", [](const FloatArray& a, const FloatArray& b) { return lrp::smape(to_tensor(a), to_tensor(b)); });

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("arch"), py::arg("weights"))
      .def_static("from_arrays", &Model::from_arrays, py::arg("arch_json"), py::arg("params"))
      .def("forward", &Model::forward, py::arg("x"))
      .def("trace", &Model::trace, py::arg("x"))
      .def("classify", &Model::classify, py::arg("x"), py::arg("top") = 5)
      .def("explain", &Model::explain, py::arg("x"), py::arg("class_index") = py::none(),
           py::arg("rules") = std::vector<std::string>{})
      .def("top_k_paths", &Model::top_k_paths, py::arg("x"), py::arg("k"),
           py::arg("class_index") = py::none(), py::arg("getopt") = "prose")
      .def("k_sweep", &Model::k_sweep, py::arg("x"), py::arg("k_max"),
           py::arg("class_index") = py::none(), py::arg("getopt") = "prose",
           py::arg("k_rule") = "mean")
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("layer_count", &Model::layer_count)
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("mean", &Model::mean)
      .def_property_readonly("std", &Model::stddev);
}
