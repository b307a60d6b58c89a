#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "pmtk/data.hpp"
#include "pmtk/gradcheck.hpp"
#include "pmtk/metrics.hpp"
#include "pmtk/model.hpp"
#include "pmtk/pmd.hpp"
#include "pmtk/ssm.hpp"
#include "pmtk/wavelet.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace pmtk;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// 2-D images travel as [1, H, W] and come back 2-D.
Tensor<double> planes(const Array& a) {
  Tensor<double> t = to_tensor(a);
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  if (t.rank() != 3 && t.rank() != 4) throw DimensionError("expected a [H,W], [C,H,W] or [N,C,H,W] array");
  return t;
}

Array like(const Tensor<double>& t, const Array& ref) {
  if (ref.ndim() == 2) return to_array(t.reshaped({t.dim(1), t.dim(2)}));
  return to_array(t);
}

pmd::DiffusionConfig diffusion(double k, int steps, double dt, const std::string& mode) {
  return pmd::DiffusionConfig{k, steps, dt, pmd::parse_dwt_mode(mode)};
}

Array scan(const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c, const Array& d,
           std::size_t batch, bool reverse, std::optional<std::size_t> chunk) {
  const auto tx = to_tensor(x), tdelta = to_tensor(delta), ta = to_tensor(a), tb = to_tensor(b), tc = to_tensor(c),
             td = to_tensor(d);
  const ssm::ScanInputs<double> in{tx, tdelta, ta, tb, tc, td, batch, reverse};
  return to_array(chunk ? ssm::selective_scan_chunked(in, *chunk) : ssm::selective_scan_reference(in));
}

class PyModel {
 public:
  explicit PyModel(model::Model<float> m) : m_(std::move(m)) {}

  std::size_t param_count() const { return m_.param_count(); }
  std::size_t image_size() const { return m_.config().image_size; }
  std::string variant() const { return model::to_string(m_.config().variant); }

  py::array_t<int> predict(const Array& images) const {
    Tensor<double> t = to_tensor(images);
    if (t.rank() == 3) t = t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
    if (t.rank() != 4) throw DimensionError("predict expects [N,H,W] or [N,1,H,W]");
    std::vector<int> labels;
    {
      py::gil_scoped_release release;
      labels = model::predict(m_, t.cast<float>());
    }
    py::array_t<int> out({static_cast<py::ssize_t>(t.dim(0)), static_cast<py::ssize_t>(t.dim(2)),
                          static_cast<py::ssize_t>(t.dim(3))});
    std::copy(labels.begin(), labels.end(), out.mutable_data());
    return out;
  }

  void save(const std::filesystem::path& dir) const { m_.save(dir); }

 private:
  model::Model<float> m_;
};

}  // namespace

PYBIND11_MODULE(_pmtk, m) {
  m.doc() = "P-Mamba toolkit core: Haar DWT, Perona-Malik diffusion, selective scan, segmentation model";

  auto base = py::register_exception<Error>(m, "PmtkError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def(
      "dwt2",
      [](const Array& u) {
        const auto s = wavelet::dwt2(planes(u));
        return py::make_tuple(like(s.ll, u), like(s.lh, u), like(s.hl, u), like(s.hh, u));
      },
      "u"_a, "Single-level orthonormal Haar transform; returns (ll, lh, hl, hh).");
  m.def(
      "idwt2",
      [](const Array& ll, const Array& lh, const Array& hl, const Array& hh) {
        const wavelet::SubbandSet<double> s{planes(ll), planes(lh), planes(hl), planes(hh)};
        return like(wavelet::idwt2(s), ll);
      },
      "ll"_a, "lh"_a, "hl"_a, "hh"_a);

  m.def(
      "diffusivity", [](double grad_mag, double k) { return pmd::diffusivity(grad_mag, k); }, "grad_mag"_a, "k"_a = 1.0);
  m.def(
      "pmd_step_fd",
      [](const Array& u, double k, double dt) {
        return like(pmd::pmd_step_fd(planes(u), diffusion(k, 1, dt, "attenuate")), u);
      },
      "u"_a, "k"_a = 1.0, "dt"_a = 0.2);
  m.def(
      "diffuse_fd",
      [](const Array& u, double k, int steps, double dt) {
        return like(pmd::diffuse_fd(planes(u), diffusion(k, steps, dt, "attenuate")), u);
      },
      "u"_a, "k"_a = 1.0, "steps"_a = 10, "dt"_a = 0.2);
  m.def(
      "diffuse_dwt",
      [](const Array& u, double k, int steps, const std::string& mode) {
        return like(pmd::diffuse_dwt(planes(u), diffusion(k, steps, 1.0, mode)), u);
      },
      "u"_a, "k"_a = 1.0, "steps"_a = 1, "mode"_a = "attenuate");
  m.def(
      "gaussian_blur", [](const Array& u, double sigma) { return like(pmd::gaussian_blur(planes(u), sigma), u); }, "u"_a,
      "sigma"_a);

  m.def(
      "selective_scan",
      [](const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c, const Array& d,
         std::size_t batch, bool reverse, std::size_t chunk) { return scan(x, delta, a, b, c, d, batch, reverse, chunk); },
      "x"_a, "delta"_a, "a"_a, "b"_a, "c"_a, "d"_a, "batch"_a = 1, "reverse"_a = false, "chunk"_a = 64,
      "Chunked selective scan. x, delta: [N*L, E]; a: [E, S]; b, c: [N*L, S]; d: [E].");
  m.def(
      "selective_scan_reference",
      [](const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c, const Array& d,
         std::size_t batch, bool reverse) { return scan(x, delta, a, b, c, d, batch, reverse, std::nullopt); },
      "x"_a, "delta"_a, "a"_a, "b"_a, "c"_a, "d"_a, "batch"_a = 1, "reverse"_a = false);

  m.def(
      "synth",
      [](std::size_t count, std::uint64_t seed, std::size_t size, double noise) {
        data::SynthConfig cfg;
        cfg.count = count;
        cfg.seed = seed;
        cfg.size = size;
        cfg.noise_sigma = noise;
        py::list out;
        for (const auto& s : data::synth_generate(cfg)) {
          py::array_t<int> mask({static_cast<py::ssize_t>(s.height()), static_cast<py::ssize_t>(s.width())});
          std::copy(s.mask.begin(), s.mask.end(), mask.mutable_data());
          out.append(py::dict("id"_a = s.id, "image"_a = to_array(s.image.reshaped({s.height(), s.width()})),
                              "mask"_a = mask));
        }
        return out;
      },
      "count"_a = 64, "seed"_a = 0, "size"_a = 64, "noise"_a = 0.3);
  m.def(
      "load_image",
      [](const std::filesystem::path& p) {
        const auto t = data::load_image(p);
        return to_array(t.reshaped({t.dim(1), t.dim(2)}));
      },
      "path"_a);
  m.def(
      "save_image", [](const std::filesystem::path& p, const Array& img) { data::save_image(p, to_tensor(img)); },
      "path"_a, "image"_a);

  m.def(
      "binary_metrics",
      [](const py::array_t<int, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<int, py::array::c_style | py::array::forcecast>& truth) {
        const auto r = binary_metrics(std::span<const int>(pred.data(), pred.size()),
                                      std::span<const int>(truth.data(), truth.size()));
        return py::dict("precision"_a = r.precision, "recall"_a = r.recall, "dice"_a = r.dice);
      },
      "pred"_a, "truth"_a);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, bool fast) {
        gradcheck::SuiteOptions opt;
        opt.seed = seed;
        opt.fast = fast;
        std::vector<gradcheck::FamilyResult> rows;
        {
          py::gil_scoped_release release;
          rows = gradcheck::run_suite<double>(opt);
        }
        py::list out;
        for (const auto& r : rows) {
          out.append(py::dict("family"_a = r.family, "max_rel_err"_a = r.max_rel_err, "checks"_a = r.checks,
                              "coords"_a = r.coords, "skipped"_a = r.skipped, "pass"_a = r.pass));
        }
        return out;
      },
      "seed"_a = 0, "fast"_a = true, "64-bit finite-difference gradient suite, one dict per op family.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](std::size_t image_size, std::uint64_t seed, const std::string& variant,
                       std::optional<std::array<std::size_t, 4>> widths) {
             model::ModelConfig cfg;
             cfg.image_size = image_size;
             cfg.variant = model::parse_variant(variant);
             if (widths) cfg.plan.widths = *widths;
             cfg.validate();
             return PyModel(model::Model<float>(cfg, seed));
           }),
           "image_size"_a = 64, "seed"_a = 0, "variant"_a = "full", "widths"_a = py::none())
      .def_static(
          "load", [](const std::filesystem::path& dir) { return PyModel(model::Model<float>::load(dir)); }, "dir"_a)
      .def_property_readonly("param_count", &PyModel::param_count)
      .def_property_readonly("image_size", &PyModel::image_size)
      .def_property_readonly("variant", &PyModel::variant)
      .def("predict", &PyModel::predict, "images"_a, "Per-pixel class ids, [N, H, W].")
      .def("save", &PyModel::save, "dir"_a);
}
