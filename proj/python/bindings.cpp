#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "omnirestore/checkpoint.hpp"
#include "omnirestore/degrade.hpp"
#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"
#include "omnirestore/metrics.hpp"
#include "omnirestore/selftest.hpp"

namespace py = pybind11;
using namespace omnirestore;

namespace {

ImageBuffer to_image(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 3 || a.shape(2) != 3)
        throw ShapeError("expected an array of shape (H, W, 3)");
    ImageBuffer img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(float));
    img.clamp();
    return img;
}

py::array_t<float> from_image(const ImageBuffer& img) {
    py::array_t<float> out({static_cast<py::ssize_t>(img.height),
                            static_cast<py::ssize_t>(img.width), static_cast<py::ssize_t>(3)});
    std::memcpy(out.mutable_data(), img.data.data(), img.data.size() * sizeof(float));
    return out;
}

DegradationRecipe recipe_from_labels(const std::vector<std::string>& labels, std::uint64_t seed) {
    std::vector<Degradation> set;
    for (const auto& name : labels) {
        const auto d = degradation_from_name(name);
        if (!d) throw VocabError("unknown degradation label '" + name + "'");
        set.push_back(*d);
    }
    return sample_recipe(set, seed);
}

}  // namespace

PYBIND11_MODULE(omnirestore, m) {
    m.doc() = "all-in-one composite degradation image restoration";
    m.attr("__version__") = "0.1.0";
    m.attr("DEGRADATIONS") = std::vector<std::string>(kDegradationNames.begin(),
                                                      kDegradationNames.end());

    py::register_exception<Error>(m, "OmnirestoreError");

    m.def(
        "apply_haze",
        [](const py::array& img, float airlight, float transmission) {
            return from_image(apply_haze(to_image(img), airlight, transmission));
        },
        py::arg("image"), py::arg("airlight"), py::arg("transmission"),
        "Atmospheric scattering: J*t + A*(1-t), clamped to [0,1].");

    m.def(
        "apply_low_light",
        [](const py::array& img, float scale, float gamma) {
            return from_image(apply_low_light(to_image(img), scale, gamma));
        },
        py::arg("image"), py::arg("scale"), py::arg("gamma"),
        "Darkening: (scale*J)^gamma per pixel.");

    m.def(
        "apply_rain",
        [](const py::array& img, int count, float length, float angle_deg, float opacity,
           std::uint64_t seed) {
            RainParams rain{count, length, angle_deg, opacity};
            return from_image(apply_particles(to_image(img), ParticleKind::Rain, rain, {}, seed));
        },
        py::arg("image"), py::arg("count") = 60, py::arg("length") = 18.f,
        py::arg("angle_deg") = 15.f, py::arg("opacity") = 0.6f, py::arg("seed") = 0);

    m.def(
        "apply_snow",
        [](const py::array& img, int count, float radius, float opacity, std::uint64_t seed) {
            SnowParams snow{count, radius, opacity};
            return from_image(apply_particles(to_image(img), ParticleKind::Snow, {}, snow, seed));
        },
        py::arg("image"), py::arg("count") = 40, py::arg("radius") = 2.5f,
        py::arg("opacity") = 0.85f, py::arg("seed") = 0);

    m.def(
        "compose",
        [](const py::array& img, const std::vector<std::string>& labels, std::uint64_t seed) {
            return from_image(compose(to_image(img), recipe_from_labels(labels, seed)));
        },
        py::arg("image"), py::arg("labels"), py::arg("seed") = 0,
        "Apply a recipe of degradation labels in canonical order with seeded parameters.");

    m.def(
        "procedural_image",
        [](int size, std::uint64_t seed) { return from_image(procedural_base_image(size, seed)); },
        py::arg("size") = 64, py::arg("seed") = 0);

    m.def(
        "generate_dataset",
        [](const std::string& out_dir, int per_recipe, int size, std::uint64_t seed,
           const std::string& base_dir) {
            GenConfig cfg;
            cfg.out_dir = out_dir;
            cfg.per_recipe = per_recipe;
            cfg.size = size;
            cfg.seed = seed;
            cfg.base_dir = base_dir;
            DatasetManifest manifest = generate_dataset(cfg);
            py::list rows;
            for (const auto& r : manifest.rows) {
                py::dict d;
                d["id"] = r.id;
                d["clean"] = r.clean;
                d["degraded"] = r.degraded;
                d["labels"] = r.labels;
                d["seed"] = r.seed;
                rows.append(d);
            }
            return rows;
        },
        py::arg("out_dir"), py::arg("per_recipe") = 4, py::arg("size") = 64, py::arg("seed") = 0,
        py::arg("base_dir") = "");

    m.def(
        "read_image", [](const std::string& path) { return from_image(read_image(path)); },
        py::arg("path"));
    m.def(
        "write_image",
        [](const py::array& img, const std::string& path) { write_image(to_image(img), path); },
        py::arg("image"), py::arg("path"));

    m.def(
        "psnr", [](const py::array& a, const py::array& b) { return psnr(to_image(a), to_image(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "ssim", [](const py::array& a, const py::array& b) { return ssim(to_image(a), to_image(b)); },
        py::arg("a"), py::arg("b"));

    m.def("selftest", [] {
        py::list out;
        for (const auto& r : run_selftests()) out.append(py::make_tuple(r.suite, r.passed, r.detail));
        return out;
    });

    py::class_<Pipeline<float>>(m, "Restorer")
        .def(py::init([](std::uint64_t seed, int k) {
                 ModelConfig cfg;
                 cfg.k = k;
                 return Pipeline<float>::seeded(cfg, seed);
             }),
             py::arg("seed") = 0, py::arg("k") = 10,
             "Fresh desk-scale weights (untrained: restore is the identity).")
        .def_static(
            "load",
            [](const std::string& path) { return load_pipeline_checkpoint(path); },
            py::arg("path"))
        .def(
            "save",
            [](Pipeline<float>& self, const std::string& path) {
                save_pipeline_checkpoint(path, self, nullptr, 0);
            },
            py::arg("path"))
        .def(
            "restore",
            [](const Pipeline<float>& self, const py::array& img) {
                return from_image(self.restore(to_image(img)));
            },
            py::arg("image"))
        .def(
            "adaptive_weights",
            [](const Pipeline<float>& self, const py::array& img) {
                return self.adaptive_weights_for(to_image(img));
            },
            py::arg("image"),
            "Per-class restoration weights for an image, a softmax over the memory bank.")
        .def_property_readonly("parameter_count",
                               [](Pipeline<float>& self) { return self.parameter_count(); })
        .def_property_readonly("bank_texts",
                               [](const Pipeline<float>& self) { return self.bank.texts; })
        .def_property_readonly("k", [](const Pipeline<float>& self) { return self.cfg.k; })
        .def_readwrite("force_uniform_weights", &Pipeline<float>::force_uniform_weights);
}
