// Copyright 2026 The ResT Kit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <string>

#include "rest/analysis.hpp"
#include "rest/audit.hpp"
#include "rest/model.hpp"

namespace py = pybind11;
using namespace rest;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ModelConfig config_from(const std::string& variant, const std::string& config_text) {
  if (!config_text.empty()) return parse_model_config(config_text);
  return variant_config(variant);
}

Parameter& find_param(Model& m, const std::string& name) {
  const auto ref = m.params.find(name);
  if (!ref) throw py::key_error("no parameter named '" + name + "'");
  return m.params[*ref];
}

}  // namespace

PYBIND11_MODULE(_restkit, m) {
  m.doc() = "Bindings for the rest_core library";

  // Translators run newest first: register the base before its subclasses.
  const auto shape_error = py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DivisibilityError>(m, "DivisibilityError", shape_error);
  py::register_exception<FixedLengthError>(m, "FixedLengthError", shape_error);
  py::register_exception<WeightFormatError>(m, "WeightFormatError", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_property_readonly("config", [](const Model& self) { return format_model_config(self.config); })
      .def_property_readonly("variant", [](const Model& self) { return self.config.variant; })
      .def("parameter_names",
           [](const Model& self) {
             std::vector<std::string> names;
             for (const auto& p : self.params) names.push_back(p.name);
             return names;
           })
      .def("get", [](Model& self, const std::string& name) { return to_array(find_param(self, name).value); })
      .def("set",
           [](Model& self, const std::string& name, const Array& value) {
             Parameter& p = find_param(self, name);
             Tensor t = to_tensor(value);
             if (t.shape() != p.value.shape()) {
               throw ShapeError("parameter '" + name + "' has shape " + to_string(p.value.shape()) +
                                ", got " + to_string(t.shape()));
             }
             p.value = std::move(t);
           })
      .def("checksum", [](const Model& self) { return self.params.checksum(); });

  m.def("build_model", [](const std::string& variant, std::uint64_t seed, const std::string& config) {
    return build_model(config_from(variant, config), seed);
  }, py::arg("variant") = "lite", py::arg("seed") = 42, py::arg("config") = "");

  m.def("forward", [](const Model& model, const Array& image) {
    Tensor x = to_tensor(image);
    Tensor y;
    {
      py::gil_scoped_release release;
      y = model_forward(model, x);
    }
    return to_array(y);
  }, py::arg("model"), py::arg("image"));

  m.def("count_params", [](const Model& model) {
    const ParamCount c = count_params(model.params);
    return py::dict(py::arg("learnable") = c.learnable, py::arg("buffers") = c.buffers);
  });
  m.def("count_macs", [](const Model& model, std::size_t h, std::size_t w) {
    const FlopCount c = count_flops(model, h, w);
    return py::dict(py::arg("macs") = c.macs, py::arg("other") = c.other);
  }, py::arg("model"), py::arg("h") = 224, py::arg("w") = 224);
  m.def("audit", [](const Model& model, std::size_t h, std::size_t w) {
    const AuditReport r = audit_model(model, h, w);
    py::list stages;
    for (const auto& f : r.formulas) {
      stages.append(py::dict(py::arg("n") = f.n, py::arg("n_kv") = f.n_kv,
                             py::arg("msa_cost") = f.msa_cost, py::arg("emsa_cost") = f.emsa_cost,
                             py::arg("counted") = f.counted.total(),
                             py::arg("reconciled") = f.reconciled));
    }
    return py::dict(py::arg("params") = r.total_params, py::arg("macs") = r.total_macs,
                    py::arg("other") = r.other_ops, py::arg("stages") = stages,
                    py::arg("table") = r.text_table(), py::arg("csv") = r.csv());
  }, py::arg("model"), py::arg("h") = 224, py::arg("w") = 224);
  m.def("reference_figures", [](const std::string& variant) -> py::object {
    const auto ref = reference_figures(variant);
    if (!ref) return py::none();
    return py::make_tuple(ref->params_millions, ref->gmacs_224);
  });

  m.def("msa_cost", &msa_cost, py::arg("n"), py::arg("d_model"));
  m.def("emsa_cost", &emsa_cost, py::arg("n"), py::arg("d_model"), py::arg("s"), py::arg("heads"));

  m.def("attention", [](const Array& x, std::size_t h, std::size_t w, std::size_t heads,
                        std::size_t reduction, const std::string& reduction_kind, bool head_conv,
                        bool instance_norm, bool efficient, std::uint64_t seed) {
    const Tensor t = to_tensor(x);
    if (t.rank() != 3) throw ShapeError("attention input must be [B,n,d], got " + to_string(t.shape()));
    AttentionConfig cfg;
    cfg.d_model = t.shape()[2];
    cfg.heads = heads;
    cfg.reduction = reduction;
    cfg.reduction_kind = parse_reduction_kind(reduction_kind);
    cfg.use_head_conv = head_conv;
    cfg.use_instance_norm = instance_norm;
    cfg.validate();
    ParameterSet ps;
    Rng rng(seed);
    const AttentionParams p = init_attention_params(ps, "attn", cfg, rng);
    const auto values = ps.values_as<double>();
    const std::span<const Tensor> view(values);
    return to_array(efficient ? emsa_forward(t, h, w, cfg, p, view) : msa_forward(t, cfg, p, view));
  }, py::arg("x"), py::arg("h"), py::arg("w"), py::arg("heads") = 1, py::arg("reduction") = 1,
     py::arg("reduction_kind") = "dwconv", py::arg("head_conv") = true,
     py::arg("instance_norm") = true, py::arg("efficient") = true, py::arg("seed") = 0);

  m.def("head_similarity", [](const Array& maps) { return to_array(head_similarity(to_tensor(maps))); });
  m.def("diversity", [](const Model& model, const Array& image, std::size_t stage, std::size_t block) {
    const DiversityReport r = diversity(model, to_tensor(image), stage, block);
    py::dict out;
    for (std::size_t i = 0; i < 3; ++i) {
      out[py::str(std::string(DiversityReport::kProbeNames[i]))] = to_array(r.matrices[i]);
    }
    return out;
  }, py::arg("model"), py::arg("image"), py::arg("stage"), py::arg("block") = 0);

  m.def("gradcheck", [](const std::string& scope, std::uint64_t seed, double tol, std::size_t coords) {
    GradcheckReport r;
    {
      py::gil_scoped_release release;
      r = gradcheck_campaign(parse_gradcheck_scope(scope), seed, tol, coords);
    }
    return py::dict(py::arg("passed") = r.passed(), py::arg("worst") = r.worst(),
                    py::arg("report") = r.text());
  }, py::arg("scope"), py::arg("seed") = 42, py::arg("tol") = 1e-4, py::arg("max_coords") = 0);

  m.def("bench", [](bool efficient, std::size_t n, std::size_t d_model, std::size_t heads,
                    std::size_t reduction, std::size_t iters, const std::string& precision,
                    std::uint64_t seed) {
    BenchGeometry g;
    g.n = n;
    g.d_model = d_model;
    g.heads = heads;
    g.reduction = reduction;
    BenchResult r;
    {
      py::gil_scoped_release release;
      r = bench_attention(efficient ? AttentionKind::kEmsa : AttentionKind::kMsa, g, iters,
                          parse_precision(precision), seed);
    }
    return py::dict(py::arg("median_seconds") = r.median_seconds, py::arg("seconds") = r.seconds,
                    py::arg("macs") = r.macs);
  }, py::arg("efficient") = true, py::arg("n") = 3136, py::arg("d_model") = 64,
     py::arg("heads") = 1, py::arg("reduction") = 8, py::arg("iters") = 5,
     py::arg("precision") = "f64", py::arg("seed") = 42);

  m.def("train_toy", [](std::size_t classes, std::size_t size, std::size_t per_class,
                        std::size_t steps, double lr, const std::string& pe, std::uint64_t seed) {
    TrainResult r;
    {
      py::gil_scoped_release release;
      ModelConfig cfg = toy_model_config(classes, parse_pe_kind(pe));
      cfg.image_size = size;
      r = toy_train(cfg, make_toy_task(classes, size, per_class, seed), steps, lr, seed);
    }
    return py::dict(py::arg("losses") = r.losses, py::arg("final_loss") = r.final_loss,
                    py::arg("final_accuracy") = r.final_accuracy,
                    py::arg("diverged") = r.diverged_at.has_value());
  }, py::arg("classes") = 10, py::arg("size") = 64, py::arg("per_class") = 1,
     py::arg("steps") = 300, py::arg("lr") = 0.005, py::arg("pe") = "pa", py::arg("seed") = 1);

  m.def("encode_weights", [](const Model& model) { return py::bytes(encode_weights(model.params)); });
  m.def("decode_weights", [](Model& model, const py::bytes& data) {
    decode_weights(model.params, std::string(data));
  });
}
