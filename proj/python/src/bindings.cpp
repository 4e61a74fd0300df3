#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "ugdd/checkpoint.hpp"
#include "ugdd/loss.hpp"
#include "ugdd/metrics.hpp"
#include "ugdd/synth.hpp"
#include "ugdd/trainer.hpp"
#include "ugdd/uncertainty.hpp"
#include "ugdd/wavelet.hpp"

namespace py = pybind11;
using namespace ugdd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (h,w) -> (1,1,h,w), (c,h,w) -> (1,c,h,w), 4-D as is.
Tensor to_tensor(const Array& a) {
  const auto d = a.ndim();
  if (d < 2 || d > 4) throw py::value_error("expected a 2-, 3- or 4-D array");
  Shape s;
  s.w = a.shape(d - 1);
  s.h = a.shape(d - 2);
  if (d >= 3) s.c = a.shape(d - 3);
  if (d == 4) s.n = a.shape(0);
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

Array plane(const Tensor& t) { return to_array(t, {static_cast<py::ssize_t>(t.shape().h), static_cast<py::ssize_t>(t.shape().w)}); }

BinaryMask to_mask(const Array& a) { return BinaryMask::from_tensor(to_tensor(a)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Uncertainty-guided dual-domain segmentation core";

  m.def("dwt2", [](const Array& img) {
    const auto s = wavelet::dwt2(to_tensor(img));
    py::dict d;
    d["ll"] = plane(s.ll);
    d["lh"] = plane(s.lh);
    d["hl"] = plane(s.hl);
    d["hh"] = plane(s.hh);
    return d;
  }, py::arg("image"), "One-level Haar decomposition of a 2-D image.");
  m.def("idwt2", [](const Array& ll, const Array& lh, const Array& hl, const Array& hh) {
    wavelet::SubbandSet s{to_tensor(ll), to_tensor(lh), to_tensor(hl), to_tensor(hh)};
    s.height = 2 * s.ll.shape().h;
    s.width = 2 * s.ll.shape().w;
    return plane(wavelet::idwt2(s));
  });
  m.def("highfreq_reconstruct", [](const Array& img) { return plane(wavelet::highfreq_reconstruct(to_tensor(img))); });

  m.def("entropy_map", [](const Array& probs) { return plane(uncertainty::entropy_map(to_tensor(probs))); }, py::arg("probs"),
        "Normalized entropy of (K,H,W) class probabilities.");
  m.def("adaptive_margin", &loss::adaptive_margin, py::arg("u"), py::arg("m") = 0.5);

  m.def("iou_dice", [](const Array& pred, const Array& gt) {
    const auto o = metrics::iou_dice(to_mask(pred), to_mask(gt));
    return py::make_tuple(o.iou, o.dice);
  });
  m.def("surface_distances", [](const Array& pred, const Array& gt) {
    const auto s = metrics::surface_distances(to_mask(pred), to_mask(gt));
    return py::make_tuple(s.hd95, s.assd, s.sentinel);
  });
  m.def("ece", [](const Array& prob_fg, const Array& gt, std::size_t bins) {
    const Tensor p = to_tensor(prob_fg);
    return metrics::ece(p.storage(), to_mask(gt), bins).ece;
  }, py::arg("prob_fg"), py::arg("gt"), py::arg("bins") = 15);
  m.def("paired_t_test", [](std::vector<double> a, std::vector<double> b) {
    const auto t = metrics::paired_t_test(a, b);
    py::dict d;
    d["t"] = t.t;
    d["df"] = t.df;
    d["p_two_sided"] = t.p_two_sided;
    d["p_greater"] = t.p_greater;
    d["degenerate"] = t.degenerate;
    return d;
  });

  m.def("generate", [](std::size_t count, std::size_t size, std::uint64_t seed, std::size_t channels) {
    synth::SynthConfig cfg;
    cfg.count = count;
    cfg.size = size;
    cfg.seed = seed;
    cfg.channels = channels;
    cfg.validate();
    py::list out;
    for (const auto& s : synth::generate(cfg)) {
      const auto& sh = s.image.shape();
      py::dict d;
      d["id"] = s.meta.id;
      d["image"] = to_array(s.image, {static_cast<py::ssize_t>(sh.c), static_cast<py::ssize_t>(sh.h),
                                      static_cast<py::ssize_t>(sh.w)});
      d["mask"] = plane(s.mask.to_tensor());
      d["sigma"] = s.meta.sigma;
      d["radius"] = s.meta.radius;
      out.append(d);
    }
    return out;
  }, py::arg("count"), py::arg("size") = 64, py::arg("seed") = 0, py::arg("channels") = 3);

  py::class_<Model, std::shared_ptr<Model>>(m, "Model")
      .def_static("load", [](const std::string& path) { return std::make_shared<Model>(load_checkpoint(path)); })
      .def_property_readonly("size", [](const Model& md) { return md.config().backbone.height; })
      .def_property_readonly("channels", [](const Model& md) { return md.config().backbone.in_channels; })
      .def("infer", [](const Model& md, const Array& image) {
        Tensor x = to_tensor(image);
        const auto& bb = md.config().backbone;
        if (x.shape() != Shape{1, bb.in_channels, bb.height, bb.width})
          throw py::value_error("image must be (" + std::to_string(bb.in_channels) + "," + std::to_string(bb.height) +
                                "," + std::to_string(bb.width) + ")");
        const auto inf = train::infer(md, x);
        py::dict d;
        d["mask"] = plane(inf.r_final);
        d["uncertainty"] = plane(inf.u_final);
        d["prob"] = plane(inf.p_final.channels(1, 1));
        return d;
      }, py::arg("image"));
}
