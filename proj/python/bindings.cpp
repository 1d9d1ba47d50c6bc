#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "lshift/diffusion.hpp"
#include "lshift/shift.hpp"
#include "lshift/synthvid.hpp"
#include "lshift/text.hpp"
#include "lshift/unet.hpp"

namespace py = pybind11;
using namespace lshift;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Shape shape_of(const py::buffer_info& info) {
  return Shape(info.shape.begin(), info.shape.end());
}

template <class T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  const auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

py::array_t<double> shift(const Array& z, int fold) {
  const auto info = z.request();
  if (info.ndim != 5) throw ShapeError("temporal_shift expects a (B,F,C,H,W) array");
  const auto* p = static_cast<const double*>(info.ptr);
  const auto t = Tensor<double>::from(shape_of(info), std::vector<double>(p, p + info.size));
  return to_numpy(temporal_shift(t, ShiftConfig{fold}));
}

py::dict schedule(int steps, double beta1, double beta_last, const std::string& kind, int kept) {
  NoiseSchedule s = make_schedule(steps, beta1, beta_last, kind);
  if (kept > 0) s = respace(s, kept);
  py::dict d;
  d["kind"] = s.kind;
  d["steps"] = s.steps;
  d["timesteps"] = s.timesteps;
  d["betas"] = s.betas;
  d["alpha_bars"] = s.alpha_bars;
  d["alphas"] = s.alphas;
  d["sigmas"] = s.sigmas;
  d["posterior_variances"] = s.posterior_variances;
  return d;
}

py::tuple render_caption(const std::string& caption, int height, int width, int frames,
                         int object_size, int velocity, std::uint64_t seed) {
  const RenderConfig cfg{height, width, frames, object_size, velocity};
  const VideoSample v = render(parse_caption(caption), cfg, seed);
  py::list track;
  for (const auto& p : v.trajectory) track.append(py::make_tuple(p.x, p.y));
  return py::make_tuple(to_numpy(v.video), track);
}

std::string probe(const py::array_t<float, py::array::c_style | py::array::forcecast>& video) {
  const auto info = video.request();
  if (info.ndim != 4) throw ShapeError("centroid_probe expects a (F,3,H,W) array");
  const auto* p = static_cast<const float*>(info.ptr);
  return std::string(to_string(
      centroid_probe(Tensor<float>::from(shape_of(info), std::vector<float>(p, p + info.size)))));
}

std::int64_t unet_parameters(int in_channels, int base_channels, std::vector<int> multipliers,
                             int num_res_blocks, std::vector<int> attention_levels, int heads,
                             int context_dim, int norm_groups, bool use_shift) {
  UNetConfig c;
  c.in_channels = in_channels;
  c.base_channels = base_channels;
  c.channel_multipliers = std::move(multipliers);
  c.num_res_blocks = num_res_blocks;
  c.attention_levels = std::move(attention_levels);
  c.heads = heads;
  c.context_dim = context_dim;
  c.norm_groups = norm_groups;
  c.use_shift = use_shift;
  ParamStore<float> params;
  Rng rng(0);
  UNet<float>(c).init(params, rng);
  return parameter_count(params);
}

py::tuple cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_lshift, m) {
  m.doc() = "Latent video diffusion with a parameter-free temporal shift";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("temporal_shift", &shift, py::arg("z"), py::arg("fold") = 3,
        "Shift channel partitions of a (B,F,C,H,W) array one frame along time.");
  m.def(
      "shift_partition",
      [](std::int64_t channels, int fold) {
        const auto p = ShiftConfig{fold}.partition(channels);
        return py::make_tuple(p.forward, p.stay, p.backward);
      },
      py::arg("channels"), py::arg("fold") = 3, "(forward, stay, backward) channel counts.");
  m.def("schedule", &schedule, py::arg("steps") = 1000, py::arg("beta1") = 8.5e-4,
        py::arg("beta_last") = 1.2e-2, py::arg("kind") = "quad", py::arg("kept") = 0,
        "Noise schedule arrays, optionally respaced to `kept` steps.");
  m.def("tokenize", [](const std::string& s, int n) { return tokenize(s, n); }, py::arg("caption"),
        py::arg("max_tokens") = kDefaultMaxTokens);
  m.def("captions", [] {
    std::vector<std::string> out;
    for (const auto& s : all_specs()) out.push_back(s.caption());
    return out;
  });
  m.def("render", &render_caption, py::arg("caption"), py::arg("height") = 16,
        py::arg("width") = 16, py::arg("frames") = 8, py::arg("object_size") = 4,
        py::arg("velocity") = 1, py::arg("seed") = 0,
        "Render a captioned clip; returns ((F,3,H,W) float32 array, centre track).");
  m.def("centroid_probe", &probe, py::arg("video"), "Motion direction of a (F,3,H,W) clip.");
  m.def("unet_parameter_count", &unet_parameters, py::arg("in_channels") = 12,
        py::arg("base_channels") = 32, py::arg("channel_multipliers") = std::vector<int>{1, 2},
        py::arg("num_res_blocks") = 2, py::arg("attention_levels") = std::vector<int>{1},
        py::arg("heads") = 4, py::arg("context_dim") = 64, py::arg("norm_groups") = 8,
        py::arg("use_shift") = true);
  m.def("cli", &cli, py::arg("args"),
        "Run the command line in-process; returns (exit_code, stdout, stderr).");
}
