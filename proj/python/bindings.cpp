// Thin numpy-facing wrappers around the C++ core. Arrays cross the boundary
// as float64 copies; nothing here holds references into Python memory.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "csenn/augment.hpp"
#include "csenn/cli.hpp"
#include "csenn/data.hpp"
#include "csenn/interpret.hpp"
#include "csenn/losses.hpp"
#include "csenn/metrics.hpp"

namespace py = pybind11;
using namespace csenn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
  std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone();
}

Array to_array(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * c.numel());
  return out;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["per_action_f1"] = r.per_action_f1;
  d["mF1"] = r.mf1;
  d["threshold"] = r.threshold;
  d["warnings"] = r.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "csenn core bindings";

  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DegenerateColumnError>(m, "DegenerateColumnError", PyExc_ValueError);

  m.def("discriminator_loss", py::overload_cast<double, double>(&discriminator_loss), py::arg("d_joint"),
        py::arg("d_mismatched"));
  m.def(
      "cross_correlation", [](const Array& c, const Array& mc) { return to_array(cross_correlation(to_tensor(c), to_tensor(mc))); },
      py::arg("concepts"), py::arg("masked_concepts"));
  m.def(
      "bt_loss", [](const Array& r, double lam) { return bt_loss(to_tensor(r), lam).item<double>(); }, py::arg("R"),
      py::arg("lambda_offdiag") = 0.1);
  m.def(
      "scl_loss",
      [](const Array& c, const Array& mc, const Array& labels, double tau) {
        return scl_loss(ContrastiveBatch{to_tensor(c), to_tensor(mc), to_tensor(labels)}, tau).item<double>();
      },
      py::arg("concepts"), py::arg("masked_concepts"), py::arg("labels"), py::arg("tau") = 0.1);
  m.def(
      "f1_scores",
      [](const Array& logits, const Array& labels, double threshold) {
        return eval_dict(f1_scores(to_tensor(logits), to_tensor(labels), threshold));
      },
      py::arg("logits"), py::arg("labels"), py::arg("threshold") = 0.5);
  m.def(
      "concept_correlation",
      [](const Array& activations) {
        auto r = concept_correlation(to_tensor(activations));
        return to_array(torch::tensor(r.values, torch::kDouble).view({r.rows, r.cols}));
      },
      py::arg("activations"));

  // image: H x W x 3 in [0, 1]; boxes: (x_min, y_min, x_max, y_max, class).
  m.def(
      "mask_image",
      [](const Array& image, const std::vector<std::tuple<int, int, int, int, std::string>>& boxes, int epsilon,
         std::uint64_t seed, const std::string& sample_id) {
        if (image.ndim() != 3 || image.shape(2) != 3) throw ShapeError("mask_image: image must be H x W x 3");
        ImageSample s;
        s.height = static_cast<int>(image.shape(0));
        s.width = static_cast<int>(image.shape(1));
        s.pixels.assign(image.data(), image.data() + image.size());
        s.action_labels = {0, 0, 0, 0};
        s.sample_id = sample_id;
        for (const auto& [x0, y0, x1, y1, name] : boxes) s.boxes.push_back({x0, y0, x1, y1, name});
        MaskConfig cfg;
        cfg.epsilon_px = epsilon;
        cfg.seed = seed;
        auto masked = mask_image(s, cfg);
        Array out({image.shape(0), image.shape(1), py::ssize_t{3}});
        std::copy(masked.pixels.begin(), masked.pixels.end(), out.mutable_data());
        return out;
      },
      py::arg("image"), py::arg("boxes"), py::arg("epsilon") = 10, py::arg("seed") = 0,
      py::arg("sample_id") = "image");

  m.def(
      "generate",
      [](const std::string& out, std::size_t n, std::uint64_t seed) {
        return write_manifest(generate_synthetic(n, seed), out);
      },
      py::arg("out"), py::arg("n"), py::arg("seed") = 0, "Write n synthetic scenes; returns the manifest path.");

  m.def("reference_report_csv", [] { return report({}, true).csv(); });
  m.def("format_metric", &format_metric);

  // Same entry point as the command-line tool; returns (exit code, stdout, stderr).
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
