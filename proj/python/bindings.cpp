// Python bindings. Configs and reports cross the boundary as JSON text; the
// package wrapper in lwanet/__init__.py turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lwanet/analysis.hpp"
#include "lwanet/data.hpp"
#include "lwanet/grad_suite.hpp"
#include "lwanet/loss_metrics.hpp"
#include "lwanet/weights_io.hpp"

namespace py = pybind11;
using namespace lwanet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-d NCHW array");
  const Shape s{a.shape(0), a.shape(1), a.shape(2), a.shape(3)};
  return Tensor<T>(s, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  const Shape s = t.shape();
  Array<T> out({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const Array<int32_t>& a) {
  if (a.ndim() != 3) throw py::value_error("expected an [n, h, w] label array");
  LabelMap m(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

Array<int32_t> to_array(const LabelMap& m) {
  Array<int32_t> out({m.n, m.h, m.w});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

NetworkConfig parse_config(const std::string& text) {
  NetworkConfig c = NetworkConfig::from_json(nlohmann::json::parse(text));
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_lwanet, m) {
  m.doc() = "Lightweight attention-guided segmentation network";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<WeightFileError>(m, "WeightFileError", PyExc_RuntimeError);

  m.def("default_config", [] { return NetworkConfig{}.to_json().dump(); });

  m.def(
      "analyze",
      [](const std::string& config, int64_t height, int64_t width, int flops_per_mac, bool per_layer) {
        return count_model(parse_config(config), Shape{1, 3, height, width})
            .to_json(flops_per_mac, per_layer)
            .dump();
      },
      py::arg("config"), py::arg("height"), py::arg("width"), py::arg("flops_per_mac") = 1,
      py::arg("per_layer") = true);

  m.def("ds_cost_ratio", &ds_cost_ratio, py::arg("k"), py::arg("d1"), py::arg("d2"));
  m.def("ds_cost_identity_exact", &ds_cost_identity_exact, py::arg("k"), py::arg("d1"), py::arg("d2"), py::arg("m"),
        py::arg("n"));

  m.def("focal_term", &focal_term, py::arg("p_t"), py::arg("gamma"));
  m.def(
      "focal_loss",
      [](const Array<double>& logits, const Array<int32_t>& target, double gamma) {
        FocalConfig cfg;
        cfg.gamma = gamma;
        return focal_loss(Var<double>::constant(to_tensor(logits)), to_labels(target), cfg).value()[0];
      },
      py::arg("logits"), py::arg("target"), py::arg("gamma") = 6.0);

  m.def(
      "synth_shapes",
      [](int64_t count, int64_t height, int64_t width, int64_t num_classes, uint64_t seed) {
        py::list out;
        for (const auto& s : synth_shapes(count, height, width, num_classes, seed)) {
          out.append(py::make_tuple(s.name, to_array(s.image), to_array(s.mask)));
        }
        return out;
      },
      py::arg("count"), py::arg("height"), py::arg("width"), py::arg("num_classes"), py::arg("seed") = 0);

  m.def(
      "grad_suite",
      [](int cases, uint64_t seed, const std::string& only, double threshold) {
        py::gil_scoped_release release;
        return grad_suite_json(run_grad_suite(cases, seed, only), threshold).dump();
      },
      py::arg("cases") = 5, py::arg("seed") = 1, py::arg("only") = "", py::arg("threshold") = 1e-4);

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const std::string& config, uint64_t seed) { return Model<float>(parse_config(config), seed); }),
           py::arg("config") = "{}", py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::string& path) {
            Model<float> model(NetworkConfig::from_json(read_archive(path).config));
            load_weights(path, model, true);
            return model;
          },
          py::arg("path"))
      .def("config", [](const Model<float>& self) { return self.config().to_json().dump(); })
      .def("save", [](const Model<float>& self, const std::string& path) { save_weights(path, self); })
      .def("param_names", [](const Model<float>& self) { return self.params().names(); })
      .def("param", [](const Model<float>& self, const std::string& name) { return to_array(self.params().at(name)); })
      .def(
          "num_params",
          [](const Model<float>& self, bool trainable_only) { return self.params().element_count(trainable_only); },
          py::arg("trainable_only") = false)
      .def("logits",
           [](Model<float>& self, const Array<float>& x) {
             const Tensor<float> t = to_tensor(x);
             Tensor<float> out;
             {
               py::gil_scoped_release release;
               out = self.logits(t);
             }
             return to_array(out);
           })
      .def(
          "predict",
          [](Model<float>& self, const Array<float>& images) {
            // raw [0, 1] RGB in, class ids at input resolution out
            const Tensor<float> raw = to_tensor(images);
            const Shape s = raw.shape();
            if (s.c != 3) throw py::value_error("expected 3-channel images");
            Tensor<float> x(s);
            const int64_t per = 3 * s.h * s.w;
            for (int64_t n = 0; n < s.n; ++n) {
              Tensor<float> one(Shape{1, 3, s.h, s.w},
                                std::vector<float>(raw.data().begin() + n * per, raw.data().begin() + (n + 1) * per));
              const Tensor<float> z = normalize_image(one, self.config().norm_mean, self.config().norm_std);
              std::copy(z.data().begin(), z.data().end(), x.data().begin() + n * per);
            }
            const std::vector<int32_t> cls = predict_classes(self.logits(x), 4);
            LabelMap out(s.n, s.h, s.w);
            out.data = cls;
            return to_array(out);
          },
          py::arg("images"));
}
