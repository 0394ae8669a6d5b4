// pybind11 bindings for the main operations. Arrays cross the boundary as
// numpy float64; the double-precision instantiation of the engine backs every
// call, except checkpoint-based inference which runs the float path the CLI
// uses.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fgmamba/checkpoint.hpp"
#include "fgmamba/gradcheck.hpp"
#include "fgmamba/training.hpp"

namespace py = pybind11;
using namespace fgmamba;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& arr) {
  Shape shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return Tensor<double>::from_data(std::move(shape), std::move(values));
}

Array to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array arr(shape);
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

ModelConfig config_from_kwargs(int64_t channels, int64_t blocks, int64_t gasm, int64_t scale,
                               int64_t state_dim, int64_t expansion, bool use_gau, bool use_pffm,
                               int64_t in_channels) {
  ModelConfig cfg;
  cfg.channels = channels;
  cfg.n_fgblocks = blocks;
  cfg.n_gasm_per_block = gasm;
  cfg.scale = scale;
  cfg.state_dim = state_dim;
  cfg.expansion = expansion;
  cfg.use_gau = use_gau;
  cfg.use_pffm = use_pffm;
  cfg.in_channels = in_channels;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FGMamba super-resolution core operations";

  m.def("sigmoid", [](const Array& x) { return to_array(sigmoid(to_tensor(x))); });

  m.def(
      "conv2d",
      [](const Array& x, const Array& w, const Array& b, int64_t stride, int64_t padding,
         int64_t groups) {
        ConvParams<double> p;
        p.weight = to_tensor(w);
        p.bias = to_tensor(b);
        p.stride = stride;
        p.padding = padding;
        p.groups = groups;
        return to_array(conv2d(to_tensor(x), p));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1,
      py::arg("padding") = 0, py::arg("groups") = 1);

  m.def(
      "layer_norm",
      [](const Array& x, const Array& gain, const Array& bias, double eps) {
        return to_array(layer_norm(to_tensor(x), to_tensor(gain), to_tensor(bias), eps));
      },
      py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-6);

  m.def("avg_pool2d",
        [](const Array& x, int64_t k) { return to_array(avg_pool2d(to_tensor(x), k)); });
  m.def("pixel_shuffle",
        [](const Array& x, int64_t r) { return to_array(pixel_shuffle(to_tensor(x), r)); });
  m.def("upsample_nearest",
        [](const Array& x, int64_t r) { return to_array(upsample_nearest(to_tensor(x), r)); });
  m.def("linear", [](const Array& x, const Array& w, const Array& b) {
    return to_array(linear(to_tensor(x), to_tensor(w), to_tensor(b)));
  });

  m.def("fft2", [](const Array& plane) {
    ComplexSpectrum s = fft2(to_tensor(plane));
    Tensor<double> re = Tensor<double>::from_data({s.h, s.w}, s.re);
    Tensor<double> im = Tensor<double>::from_data({s.h, s.w}, s.im);
    return py::make_tuple(to_array(re), to_array(im));
  });
  m.def("ifft2", [](const Array& re, const Array& im) {
    ComplexSpectrum s;
    s.h = re.shape(0);
    s.w = re.shape(1);
    s.re.assign(re.data(), re.data() + re.size());
    s.im.assign(im.data(), im.data() + im.size());
    return to_array(ifft2<double>(s));
  });
  m.def("highfreq_extract",
        [](const Array& x) { return to_array(highfreq_extract(to_tensor(x))); });

  m.def(
      "selective_scan",
      [](const Array& x, const Array& delta_w, const Array& delta_bias, const Array& b_w,
         const Array& c_w, const Array& a_log, const Array& d_skip) {
        S6Params<double> p;
        p.delta_w = to_tensor(delta_w);
        p.delta_bias = to_tensor(delta_bias);
        p.b_w = to_tensor(b_w);
        p.c_w = to_tensor(c_w);
        p.a_log = to_tensor(a_log);
        p.d_skip = to_tensor(d_skip);
        return to_array(selective_scan_1d(to_tensor(x), p));
      },
      py::arg("x"), py::arg("delta_w"), py::arg("delta_bias"), py::arg("b_w"), py::arg("c_w"),
      py::arg("a_log"), py::arg("d_skip"));

  m.def("psnr", [](const Array& a, const Array& b, double peak) {
    return psnr(to_tensor(a), to_tensor(b), peak);
  });
  m.def("ssim", [](const Array& a, const Array& b, double peak) {
    return ssim(to_tensor(a), to_tensor(b), peak);
  });
  m.def("bicubic_downsample", [](const Array& img, int64_t scale) {
    return to_array(bicubic_downsample(to_tensor(img), scale));
  });

  m.def(
      "model_forward",
      [](const Array& x, uint64_t seed, int64_t channels, int64_t blocks, int64_t gasm,
         int64_t scale, int64_t state_dim, int64_t expansion, bool use_gau, bool use_pffm,
         int64_t in_channels) {
        ModelConfig cfg = config_from_kwargs(channels, blocks, gasm, scale, state_dim, expansion,
                                             use_gau, use_pffm, in_channels);
        FgMamba<double> model(cfg, seed);
        return to_array(model.forward(to_tensor(x)));
      },
      py::arg("x"), py::arg("seed") = 0, py::arg("channels") = 16, py::arg("blocks") = 2,
      py::arg("gasm") = 2, py::arg("scale") = 2, py::arg("state_dim") = 8,
      py::arg("expansion") = 2, py::arg("use_gau") = true, py::arg("use_pffm") = true,
      py::arg("in_channels") = 1);

  m.def(
      "param_count",
      [](int64_t channels, int64_t blocks, int64_t gasm, int64_t scale, int64_t state_dim,
         int64_t expansion, bool use_gau, bool use_pffm, int64_t in_channels) {
        return param_count(config_from_kwargs(channels, blocks, gasm, scale, state_dim,
                                              expansion, use_gau, use_pffm, in_channels));
      },
      py::arg("channels") = 16, py::arg("blocks") = 2, py::arg("gasm") = 2, py::arg("scale") = 2,
      py::arg("state_dim") = 8, py::arg("expansion") = 2, py::arg("use_gau") = true,
      py::arg("use_pffm") = true, py::arg("in_channels") = 1);

  m.def("preset_param_count", [](const std::string& name) {
    return param_count(ModelConfig::preset(name));
  });

  m.def("infer_checkpoint", [](const std::string& path, const Array& x) {
    Checkpoint ck = load_checkpoint(path);
    FgMamba<float> model = model_from_checkpoint(ck);
    Tensor<float> input = to_tensor(x).cast<float>();
    return to_array(model.forward(input).cast<double>());
  });
}
