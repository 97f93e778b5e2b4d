#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ssgrn/cli.hpp"
#include "ssgrn/data.hpp"
#include "ssgrn/graphspec.hpp"
#include "ssgrn/metrics.hpp"
#include "ssgrn/network.hpp"
#include "ssgrn/trainer.hpp"

namespace py = pybind11;
using namespace ssgrn;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U16Array = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

data::HsiCube to_cube(const F32Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("cube array must be (bands, height, width)");
  data::HsiCube c;
  c.bands = a.shape(0);
  c.height = a.shape(1);
  c.width = a.shape(2);
  c.values.assign(a.data(), a.data() + a.size());
  c.validate();
  return c;
}

F32Array from_cube(const data::HsiCube& c) {
  F32Array a({c.bands, c.height, c.width});
  std::copy(c.values.begin(), c.values.end(), a.mutable_data());
  return a;
}

data::LabelMap to_labels(const U16Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("label array must be (height, width)");
  data::LabelMap l;
  l.height = a.shape(0);
  l.width = a.shape(1);
  l.labels.assign(a.data(), a.data() + a.size());
  return l;
}

U16Array from_labels(std::size_t h, std::size_t w, const std::vector<std::uint16_t>& v) {
  U16Array a({h, w});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

data::SplitSpec to_split(const U8Array& a, const data::LabelMap& labels) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != labels.height ||
      static_cast<std::size_t>(a.shape(1)) != labels.width) {
    throw std::invalid_argument("split array must match the label map's (height, width)");
  }
  data::SplitSpec s;
  s.height = labels.height;
  s.width = labels.width;
  s.assignment.reserve(a.size());
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    const auto v = a.data()[i];
    if (v > 3) throw std::invalid_argument("split values must be 0 (none), 1 (train), 2 (val) or 3 (test)");
    s.assignment.push_back(static_cast<data::Subset>(v));
  }
  return s;
}

Tensor<double> to_matrix(const F64Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  return Tensor<double>::from_data({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                                   std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

metrics::ConfusionMatrix to_confusion(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw std::invalid_argument("confusion matrix must be square");
  const std::size_t n = a.shape(0);
  metrics::ConfusionMatrix cm(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t p = 0; p < n; ++p) cm.add(t, p, a.data()[t * n + p]);
  }
  return cm;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spectral-spatial graph reasoning network core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  // data
  m.def("synth_scene",
        [](std::size_t h, std::size_t w, std::size_t bands, std::size_t classes, double noise, std::uint64_t seed) {
          const auto [cube, labels] = data::synth_scene(h, w, bands, classes, noise, seed);
          return py::make_tuple(from_cube(cube), from_labels(labels.height, labels.width, labels.labels));
        },
        py::arg("height"), py::arg("width"), py::arg("bands"), py::arg("classes"), py::arg("noise") = 0.1,
        py::arg("seed") = 0);
  m.def("standardize", [](const F32Array& a) { return from_cube(data::standardize(to_cube(a))); });
  m.def("save_cube", [](const F32Array& a, const std::filesystem::path& p) { data::save_cube(to_cube(a), p); });
  m.def("load_cube", [](const std::filesystem::path& p) { return from_cube(data::load_cube(p)); });
  m.def("save_labels", [](const U16Array& a, const std::filesystem::path& p) { data::save_labels(to_labels(a), p); });
  m.def("load_labels", [](const std::filesystem::path& p) {
    const auto l = data::load_labels(p);
    return from_labels(l.height, l.width, l.labels);
  });
  m.def("make_split",
        [](const U16Array& a, const std::optional<std::map<std::uint16_t, std::pair<std::size_t, std::size_t>>>& counts,
           std::uint64_t seed) {
          const auto labels = to_labels(a);
          std::vector<data::ClassCount> cc;
          if (counts) {
            for (const auto& [cls, tv] : *counts) cc.push_back({cls, tv.first, tv.second});
          } else {
            cc = data::default_counts(labels);
          }
          const auto s = data::make_split(labels, cc, seed);
          U8Array out({labels.height, labels.width});
          for (std::size_t i = 0; i < s.assignment.size(); ++i) {
            out.mutable_data()[i] = static_cast<std::uint8_t>(s.assignment[i]);
          }
          return out;
        },
        py::arg("labels"), py::arg("counts") = py::none(), py::arg("seed") = 0,
        "Per-pixel subset codes: 0 none, 1 train, 2 val, 3 test.");

  // graph spectra
  m.def("normalized_laplacian", [](const F64Array& a) { return to_array(graph::normalized_laplacian(to_matrix(a))); });
  m.def("renormalized_propagation",
        [](const F64Array& a) { return to_array(graph::renormalized_propagation(to_matrix(a))); });
  m.def("chebyshev_eval", &graph::chebyshev_eval, py::arg("n"), py::arg("x"));
  m.def("spectral_radius", [](const F64Array& a) { return graph::spectral_radius(to_matrix(a)); });

  // metrics
  m.def("confusion_matrix",
        [](const U16Array& pred, const U16Array& truth, std::size_t classes) {
          const auto cm = metrics::accumulate(to_labels(pred), to_labels(truth), classes);
          py::array_t<std::uint64_t> out({classes, classes});
          for (std::size_t t = 0; t < classes; ++t) {
            for (std::size_t p = 0; p < classes; ++p) out.mutable_data()[t * classes + p] = cm.at(t, p);
          }
          return out;
        },
        py::arg("pred"), py::arg("truth"), py::arg("classes"));
  m.def("oa", [](const py::array_t<std::uint64_t>& a) { return metrics::oa(to_confusion(a)); });
  m.def("aa", [](const py::array_t<std::uint64_t>& a) { return metrics::aa(to_confusion(a)); });
  m.def("kappa", [](const py::array_t<std::uint64_t>& a) { return metrics::kappa(to_confusion(a)); });

  // training
  m.def("poly_lr", &train::poly_lr, py::arg("base"), py::arg("iter"), py::arg("max_iter"), py::arg("power") = 0.9);
  m.def("count_attention_ops", &count_attention_ops, py::arg("k"), py::arg("n"));

  py::class_<ModelState>(m, "Model")
      .def(py::init([](std::size_t in_bands, std::size_t height, std::size_t width, std::size_t classes,
                       const std::string& variant, std::array<std::size_t, 3> widths, std::size_t descriptors,
                       std::size_t spectral_descriptors, std::size_t head_hidden, std::size_t spectral_stride,
                       std::uint64_t seed) {
             ModelConfig c;
             c.in_bands = in_bands;
             c.height = height;
             c.width = width;
             c.classes = classes;
             c.variant = parse_variant(variant);
             c.widths = widths;
             c.descriptors = descriptors;
             c.spectral_descriptors = spectral_descriptors;
             c.head_hidden = head_hidden;
             c.spectral_stride = spectral_stride;
             return ModelState(c, seed);
           }),
           py::arg("in_bands"), py::arg("height"), py::arg("width"), py::arg("classes"),
           py::arg("variant") = "ssgrn", py::arg("widths") = std::array<std::size_t, 3>{64, 128, 256},
           py::arg("descriptors") = 256, py::arg("spectral_descriptors") = 256, py::arg("head_hidden") = 128,
           py::arg("spectral_stride") = 4, py::arg("seed") = 0)
      .def_static("load", &load_checkpoint)
      .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_checkpoint(s, p); })
      .def_property_readonly("variant", [](const ModelState& s) { return variant_name(s.config.variant); })
      .def_property_readonly("iteration", [](const ModelState& s) { return s.iteration; })
      .def_property_readonly("config", [](const ModelState& s) { return s.config.serialize(); })
      .def_property_readonly("num_params", [](const ModelState& s) { return count_params(s); })
      .def("param_names",
           [](const ModelState& s) {
             std::vector<std::string> names;
             for (const auto& [n, t] : s.params.items()) names.push_back(n);
             return names;
           })
      .def("param", [](const ModelState& s, const std::string& name) { return to_array(s.params.get(name)); })
      .def("logits",
           [](const ModelState& s, const F32Array& cube, const std::string& pool) {
             const auto c = to_cube(cube);
             NoGradGuard no_grad;
             const auto r = s.forward(prepare_input<float>(c),
                                      ForwardOptions{.pool = pool == "hard" ? sagrn::PoolMode::hard
                                                                            : sagrn::PoolMode::soft});
             py::dict out;
             for (const auto& [name, t] : r.logits) out[py::str(name)] = to_array(t);
             return out;
           },
           py::arg("cube"), py::arg("pool") = "soft",
           "Head logits at the even-padded input extent, keyed by head name.")
      .def("predict",
           [](const ModelState& s, const F32Array& cube) {
             const auto c = to_cube(cube);
             std::vector<std::uint16_t> pred;
             {
               py::gil_scoped_release release;
               pred = predict_labels(s, c, ForwardOptions{.pool = s.config.eval_pool});
             }
             return from_labels(c.height, c.width, pred);
           });

  m.def("train",
        [](ModelState& model, const F32Array& cube, const U16Array& labels, const U8Array& split, std::size_t iters,
           double lr, double momentum, double weight_decay, double power, std::size_t eval_every) {
          const auto c = to_cube(cube);
          const auto l = to_labels(labels);
          const auto s = to_split(split, l);
          train::TrainConfig tc;
          tc.base_lr = lr;
          tc.momentum = momentum;
          tc.weight_decay = weight_decay;
          tc.max_iter = iters;
          tc.power = power;
          tc.eval_every = eval_every;
          std::vector<train::HistoryRow> history;
          {
            py::gil_scoped_release release;
            history = train::train(model, c, l, s, tc);
          }
          py::list rows;
          for (const auto& r : history) {
            py::dict d;
            d["iter"] = r.iter;
            d["lr"] = r.lr;
            d["loss"] = r.loss;
            d["val_oa"] = r.val_oa ? py::object(py::float_(*r.val_oa)) : py::object(py::none());
            rows.append(d);
          }
          return rows;
        },
        py::arg("model"), py::arg("cube"), py::arg("labels"), py::arg("split"), py::arg("iters") = 1000,
        py::arg("lr") = 1e-3, py::arg("momentum") = 0.9, py::arg("weight_decay") = 1e-4, py::arg("power") = 0.9,
        py::arg("eval_every") = 100);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"ssgrn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = 0;
    {
      py::gil_scoped_release release;
      code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
