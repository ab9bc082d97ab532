#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cdseg/commands.hpp"
#include "cdseg/error.hpp"
#include "cdseg/io_store.hpp"
#include "cdseg/losses.hpp"
#include "cdseg/lunargen.hpp"
#include "cdseg/metrics.hpp"
#include "cdseg/optim.hpp"
#include "cdseg/segnet.hpp"

namespace py = pybind11;
using namespace cdseg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ad::Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return ad::Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<std::uint8_t> to_labels(const Labels& a) { return {a.data(), a.data() + a.size()}; }

template <typename T>
py::array_t<T> image_array(const std::vector<T>& px, int h, int w, int c) {
  std::vector<py::ssize_t> shape{h, w};
  if (c > 1) shape.push_back(c);
  py::array_t<T> out(shape);
  std::copy(px.begin(), px.end(), out.mutable_data());
  return out;
}

py::dict report_dict(const MetricsReport& r) {
  auto cls = [](const ClassMetrics& m) {
    py::dict d;
    d["acc"] = m.acc;
    d["iou"] = m.iou;
    d["f1"] = m.f1;
    return d;
  };
  py::dict d;
  d["negative"] = cls(r.negative);
  d["positive"] = cls(r.positive);
  d["m_acc"] = r.m_acc;
  d["m_iou"] = r.m_iou;
  d["m_f1"] = r.m_f1;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage RGB-D obstacle segmentation engine (C++ core)";

  // cdseg::Error surfaces as cdseg.Error("<kind>: <detail>")
  static PyObject* error = PyErr_NewException("cdseg._core.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = py::handle(error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  // losses
  m.def("ntxent", [](const Array& f_depth, const Array& f_rgb, double tau) {
    return ntxent(to_tensor(f_depth), to_tensor(f_rgb), Temperature{tau}).item();
  }, py::arg("f_depth"), py::arg("f_rgb"), py::arg("tau") = 0.5);
  m.def("lovasz_grad", [](const std::vector<std::uint8_t>& gt_sorted) { return lovasz_grad(gt_sorted); });
  m.def("lovasz_softmax", [](const Array& probs, const Labels& labels) {
    const auto l = to_labels(labels);
    return lovasz_softmax(to_tensor(probs), l).item();
  }, py::arg("probs"), py::arg("labels"));

  // metrics
  m.def("evaluate_masks", [](const Labels& pred, const Labels& gt) {
    ConfusionMatrix cm;
    cdseg::accumulate(to_labels(pred), to_labels(gt), cm);
    return report_dict(make_report(cm));
  }, py::arg("pred"), py::arg("gt"), "Per-class and mean Acc/IoU/F1 over the obstacle classes.");

  // optimizer schedule
  m.def("lr_at", [](int epoch, double lr0, double decay) {
    TrainConfig cfg;
    cfg.lr0 = lr0;
    cfg.decay = decay;
    return lr_at(epoch, cfg);
  }, py::arg("epoch"), py::arg("lr0") = 0.01, py::arg("decay") = 0.95);

  // scene generator
  m.def("generate_sample", [](const std::string& preset, std::uint64_t seed, int width, int height) {
    auto spec = lunar::preset(preset, width, height);
    spec.seed = seed;
    const auto s = lunar::generate_sample(spec);
    py::dict d;
    d["rgb"] = image_array(s.rgb.pixels, s.rgb.height, s.rgb.width, 3);
    d["depth"] = image_array(s.depth.pixels, s.depth.height, s.depth.width, 1);
    d["labels"] = image_array(s.labels.pixels, s.labels.height, s.labels.width, 1);
    return d;
  }, py::arg("preset"), py::arg("seed") = 0, py::arg("width") = 96, py::arg("height") = 96);

  // checkpoints
  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    py::dict d;
    for (const auto& [name, t] : load_checkpoint(path).params) d[py::str(name)] = to_array(t);
    return d;
  }, py::arg("path"), "Parameters as an ordered name -> ndarray mapping.");
  m.def("save_checkpoint", [](const py::dict& params, const std::filesystem::path& path) {
    NetworkParams p;
    for (const auto& [k, v] : params) p.add(py::cast<std::string>(k), to_tensor(py::cast<Array>(v)));
    save_checkpoint(p, nullptr, path);
  }, py::arg("params"), py::arg("path"));

  // gradient suite
  m.def("gradcheck", [](const std::string& ops, int trials, std::uint64_t seed) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& r : run_gradcheck(gradcheck_ops(), ops, trials, seed)) out.emplace_back(r.name, r.max_error);
    return out;
  }, py::arg("ops") = "all", py::arg("trials") = 10, py::arg("seed") = 0);

  m.def("network_parameter_count", [](const std::vector<int>& stage_channels, int num_classes) {
    EncoderConfig cfg;
    if (stage_channels.size() != cfg.stage_channels.size()) fail(ErrorKind::kConfig, "need 5 stage widths");
    std::copy(stage_channels.begin(), stage_channels.end(), cfg.stage_channels.begin());
    return build_network(cfg, num_classes, 0).element_count();
  }, py::arg("stage_channels") = std::vector<int>{8, 16, 24, 32, 40}, py::arg("num_classes") = 3);
}
