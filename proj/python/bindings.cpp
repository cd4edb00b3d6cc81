#include <filesystem>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "umm/image_io.hpp"
#include "umm/pipeline.hpp"

namespace py = pybind11;
using namespace umm;

namespace {

py::array_t<float> image_array(const Image& img) {
  py::array_t<float> a({img.height, img.width, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), a.mutable_data());
  return a;
}

Image array_image(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an [H, W, 3] array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
  return img;
}

Tensor<double> array_tensor(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> tensor_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
  return a;
}

RunConfig config_from(const std::string& text) {
  RunConfig cfg = RunConfig::parse(text);
  apply_env_overrides(cfg);
  return cfg;
}

struct PyModel {
  std::shared_ptr<Model<float>> model;
  CheckpointInfo info;
};

}  // namespace

PYBIND11_MODULE(_umm, m) {
  m.doc() = "unified multimodal model with a cascaded flow-matching head";

  m.def("shift_time", &shift_time, py::arg("t"), py::arg("alpha"));
  m.def("time_grid", &time_grid, py::arg("steps"), py::arg("alpha"));
  m.def("analyze_hfi", [](const std::vector<std::vector<double>>& runs) {
    std::vector<HfiTrace> traces(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) traces[i].intensity = runs[i];
    return analyze_hfi(traces);
  });
  m.def("pixel_shuffle", [](py::array_t<double> x, int r) { return tensor_array(pixel_shuffle(array_tensor(x), r)); },
        py::arg("x"), py::arg("r") = 2);
  m.def("pixel_unshuffle",
        [](py::array_t<double> x, int r) { return tensor_array(pixel_unshuffle(array_tensor(x), r)); },
        py::arg("x"), py::arg("r") = 2);

  m.def("default_config", [] { return RunConfig{}.serialize(); });
  m.def("config_digest", [](const std::string& text) { return digest_hex(config_from(text).digest()); });

  m.def("random_scene", [](std::uint64_t seed) {
    Rng rng(seed);
    return describe(random_scene(rng));
  });
  m.def(
      "render_scene",
      [](std::uint64_t seed) {
        Rng rng(seed);
        return image_array(render(random_scene(rng)));
      },
      py::arg("seed"));
  m.def("describe_image", [](py::array_t<float> img) { return describe(detect(array_image(img))); });
  m.def("vocabulary", [] { return Vocab::standard().tokens(); });
  m.def("encode_prompt", [](const std::string& text) { return Vocab::standard().encode(text); });
  m.def("write_ppm", [](const std::string& path, py::array_t<float> img) { write_ppm(path, array_image(img)); });
  m.def("read_ppm", [](const std::string& path) { return image_array(read_ppm(path)); });

  m.def(
      "train",
      [](const std::string& config_text, const std::string& run_dir, const std::string& resume) {
        RunConfig cfg = config_from(config_text);
        py::gil_scoped_release nogil;
        train_pipeline(cfg, run_dir, resume);
        return (std::filesystem::path(run_dir) / stage_checkpoint_name(stage_order(cfg).back())).string();
      },
      py::arg("config_text"), py::arg("run_dir"), py::arg("resume") = "");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& path) {
             PyModel pm;
             pm.model = load_model(path, &pm.info);
             return pm;
           }),
           py::arg("checkpoint"))
      .def_property_readonly("stage", [](const PyModel& pm) { return pm.info.stage; })
      .def_property_readonly("digest", [](const PyModel& pm) { return digest_hex(pm.info.digest); })
      .def_property_readonly("config", [](const PyModel& pm) { return pm.model->cfg.serialize(); })
      .def_property_readonly("parameter_count", [](const PyModel& pm) { return pm.model->store.parameter_count(); })
      .def(
          "sample",
          [](const PyModel& pm, const std::string& prompt, std::uint64_t seed, int steps, double alpha,
             double cfg_scale) {
            const auto& c = pm.model->cfg.sampler;
            SamplerConfig sc{steps > 0 ? steps : c.steps, alpha > 0 ? alpha : c.alpha,
                             cfg_scale >= 0 ? cfg_scale : c.cfg_scale};
            auto ids = pm.model->vocab.encode(prompt);
            SampleResult res;
            {
              py::gil_scoped_release nogil;
              res = sample_images(*pm.model, {ids}, {seed}, sc);
            }
            py::dict out;
            out["image"] = image_array(res.images[0]);
            out["t"] = res.traces[0].t;
            out["intensity"] = res.traces[0].intensity;
            return out;
          },
          py::arg("prompt"), py::arg("seed") = 0, py::arg("steps") = 0, py::arg("alpha") = 0.0,
          py::arg("cfg_scale") = -1.0)
      .def(
          "eval_gen",
          [](const PyModel& pm, int seeds) {
            const auto& c = pm.model->cfg.sampler;
            py::gil_scoped_release nogil;
            auto res = eval_gen(*pm.model, seeds, SamplerConfig{c.steps, c.alpha, c.cfg_scale}, pm.model->cfg.run.seed);
            std::map<std::string, double> out;
            for (auto [cat, acc] : res.accuracy) out[category_name(cat)] = acc;
            out["overall"] = res.overall;
            return out;
          },
          py::arg("seeds") = 50)
      .def(
          "eval_und",
          [](const PyModel& pm, int items) {
            py::gil_scoped_release nogil;
            return eval_und(*pm.model, items, pm.model->cfg.run.seed);
          },
          py::arg("items") = 200)
      .def("answer", [](const PyModel& pm, py::array_t<float> img, const std::string& question) {
        NoGradGuard ng;
        Image im = array_image(img);
        auto q = pm.model->vocab.encode(question);
        auto z = pm.model->encode_latent({&im}, nullptr);
        int max_new = std::min(8, pm.model->cfg.backbone.max_text - static_cast<int>(q.size()) - 1);
        auto ids = pm.model->answer(z, {q}, max_new);
        return pm.model->vocab.decode(ids[0]);
      });
}
