#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "samtta/adapt.hpp"
#include "samtta/checkpoint.hpp"
#include "samtta/error.hpp"
#include "samtta/metrics.hpp"
#include "samtta/pretrain.hpp"
#include "samtta/run_manifest.hpp"
#include "samtta/sbct.hpp"
#include "samtta/synthdata.hpp"

namespace py = pybind11;
using namespace samtta;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> flat(const Array& a) { return {a.data(), a.data() + a.size()}; }

std::pair<std::size_t, std::size_t> mask_shape(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D mask");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
}

Array to_array(std::span<const double> data, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

py::dict summary_dict(const MetricsSummary& s) {
  py::dict d;
  d["rows"] = s.rows;
  d["mean_dice"] = s.mean_dice;
  d["mean_hd95"] = s.mean_hd95;
  d["hd95_excluded"] = s.hd95_excluded;
  d["pearson_r"] = s.pearson ? py::cast(*s.pearson) : py::none();
  d["pearson_excluded"] = s.pearson_excluded;
  return d;
}

py::list rows_list(const std::vector<MetricsRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["index"] = r.index;
    d["dice"] = r.dice;
    d["hd95"] = r.hd95_defined ? py::cast(r.hd95) : py::none();
    d["pred_iou"] = r.pred_iou;
    d["true_iou"] = r.true_iou;
    d["l_icm"] = r.l_icm;
    d["l_dpc"] = r.l_dpc;
    d["l_ifc"] = r.l_ifc;
    d["lambda_dpc"] = r.lambda_dpc;
    out.append(d);
  }
  return out;
}

AdaptConfig adapt_config(const std::string& strategy, std::uint64_t seed, const py::dict& overrides) {
  AdaptConfig c;
  c.strategy = parse_strategy(strategy);
  c.seed = seed;
  for (const auto& [k, v] : overrides) {
    const auto key = py::cast<std::string>(k);
    if (key == "lr_sbct") c.lr_sbct = py::cast<double>(v);
    else if (key == "lr_lora_prompt") c.lr_lora_prompt = py::cast<double>(v);
    else if (key == "weight_decay") c.weight_decay = py::cast<double>(v);
    else if (key == "ema_alpha") c.ema_alpha = py::cast<double>(v);
    else if (key == "steps_per_image") c.steps_per_image = py::cast<std::size_t>(v);
    else if (key == "lambda_ifc") c.lambda_ifc = py::cast<double>(v);
    else if (key == "reset_optimizer") c.reset_optimizer = py::cast<bool>(v);
    else if (key == "update_max_every_step") c.update_max_every_step = py::cast<bool>(v);
    else throw DomainError("unknown adaptation option '" + key + "'");
  }
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Test-time adaptation engine for a miniature promptable segmenter";
  m.attr("__version__") = kVersion;

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("dice", [](const Array& p, const Array& g) { return dice(flat(p), flat(g)); }, py::arg("pred"), py::arg("gt"));
  m.def(
      "hd95",
      [](const Array& p, const Array& g) -> std::optional<double> {
        const auto [h, w] = mask_shape(p);
        if (mask_shape(g) != std::make_pair(h, w)) throw ShapeError("masks differ in shape");
        return hd95(flat(p), flat(g), h, w);
      },
      py::arg("pred"), py::arg("gt"), "Symmetric 95th-percentile boundary distance; None if a mask is empty.");
  m.def(
      "pearson_r", [](const Array& x, const Array& y) { return pearson_r(flat(x), flat(y)); }, py::arg("x"),
      py::arg("y"));

  m.def(
      "bezier",
      [](double t, std::array<double, 4> heights) { return eval_curve(t, heights); }, py::arg("t"),
      py::arg("heights"), "Cubic Bernstein curve through fixed x-coordinates 0, 1/3, 2/3, 1.");

  py::class_<Sbct>(m, "Sbct")
      .def(py::init([](std::vector<double> logits) { return Sbct(std::move(logits)); }), py::arg("logits"))
      .def_static("identity", &Sbct::identity, py::arg("delta") = 1e-3)
      .def_property_readonly("logits",
                             [](const Sbct& s) { return to_array(s.logits().data(), {3, 4}); })
      .def_property_readonly("heights", [](const Sbct& s) { return to_array(s.control_heights().data(), {3, 4}); })
      .def(
          "transform",
          [](const Sbct& s, const Array& image) {
            std::vector<std::size_t> shape(image.shape(), image.shape() + image.ndim());
            NoGradGuard guard;
            const Tensor out = s.transform(Tensor::from(shape, flat(image)));
            std::vector<py::ssize_t> out_shape(out.shape().begin(), out.shape().end());
            return to_array(out.data(), out_shape);
          },
          py::arg("image"), "[H,W] gray or [3,H,W] colour in [0,1] -> [3,H,W].")
      .def("curves_csv", &sbct_curve_csv);

  m.def(
      "generate",
      [](const std::string& profile, std::size_t n, std::uint64_t seed, const std::filesystem::path& out) {
        const auto shift = shift_profile(profile);
        write_dataset(out, profile == "source" ? gen_source(seed, n) : gen_target(seed, n, shift));
        return out / "manifest.csv";
      },
      py::arg("profile"), py::arg("n"), py::arg("seed"), py::arg("out"),
      "Writes a synthetic dataset and returns the manifest path.");

  m.def(
      "pretrain",
      [](const std::filesystem::path& out, const std::map<std::string, std::string>& config) {
        PretrainConfig c;
        for (const auto& [k, v] : config) c.set(k, v);
        const PretrainResult r = [&] {
          py::gil_scoped_release release;
          return pretrain(c);
        }();
        save_checkpoint(r.model, out);
        py::dict d;
        d["best_epoch"] = r.best_epoch;
        d["best_val_dice"] = r.best_val_dice;
        py::list losses;
        for (const auto& e : r.epochs) losses.append(e.train_loss);
        d["train_loss"] = losses;
        return d;
      },
      py::arg("out"), py::arg("config") = std::map<std::string, std::string>{},
      "Trains on synthetic source data and saves the checkpoint. Config values are strings keyed like the CLI.");

  m.def("pretrain_keys", &PretrainConfig::keys);

  m.def(
      "adapt",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
         const std::filesystem::path& out, const std::string& strategy, std::uint64_t seed,
         std::optional<std::filesystem::path> dump_sbct, bool normalize, const py::dict& options) {
        const AdaptConfig c = adapt_config(strategy, seed, options);
        const SegModel model = load_checkpoint(checkpoint);
        StreamResult r;
        {
          py::gil_scoped_release release;
          Adapter adapter(model, c);
          r = adapt_manifest(adapter, manifest, StreamOutputs{out, dump_sbct}, normalize);
        }
        py::dict d;
        d["summary"] = summary_dict(summarize(r.rows));
        d["rows"] = rows_list(r.rows);
        d["warnings"] = r.warnings;
        return d;
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("out"), py::arg("strategy") = "sam-tta",
      py::arg("seed") = 0, py::arg("dump_sbct") = py::none(), py::arg("normalize") = false,
      py::arg("options") = py::dict(), "Adapts over a manifest stream, writing predictions and metrics.csv.");

  m.def(
      "read_metrics",
      [](const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open " + path.string());
        const std::string text{std::istreambuf_iterator<char>(in), {}};
        const auto rows = parse_metrics_csv(text, hd95_sentinel(kCanvas, kCanvas));
        return py::make_tuple(rows_list(rows), summary_dict(summarize(rows)));
      },
      py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
