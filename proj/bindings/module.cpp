#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vot/clipfile.hpp"
#include "vot/experiments.hpp"
#include "vot/metrics.hpp"
#include "vot/tracker.hpp"

namespace py = pybind11;
using namespace vot;

namespace {

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
    std::vector<ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<T> out(shape);
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

template <typename T>
Tensor<T> from_numpy(py::array_t<T, py::array::c_style | py::array::forcecast> arr) {
    Shape shape;
    for (ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    Tensor<T> t(shape);
    std::copy(arr.data(), arr.data() + arr.size(), t.data());
    return t;
}

TrajectoryLabel label_from_rows(const std::vector<std::array<int, 3>>& rows) {
    TrajectoryLabel label;
    for (const auto& r : rows) label.push_back({r[0], r[1], r[2]});
    return label;
}

std::vector<std::array<int, 3>> label_to_rows(const TrajectoryLabel& label) {
    std::vector<std::array<int, 3>> rows;
    for (const TrajPoint& p : label) rows.push_back({p.i, p.x, p.y});
    return rows;
}

Rgb rgb_from_tuple(std::array<int, 3> c) {
    return {static_cast<std::uint8_t>(c[0]), static_cast<std::uint8_t>(c[1]),
            static_cast<std::uint8_t>(c[2])};
}

}  // namespace

PYBIND11_MODULE(votbench, m) {
    m.doc() = "planar-pushing video workbench: synthetic dual-view clips, color tracking, "
              "occupancy-grid metrics and trajectory-prediction models";

    m.def("catalog", [] {
        std::vector<std::string> names;
        for (const CatalogEntry& e : subdataset_catalog()) names.push_back(e.name);
        return names;
    });

    m.def(
        "generate_clip",
        [](const std::string& catalog_name, std::uint64_t seed, bool full_scale) {
            SceneConfig scene = make_scene(catalog_entry(catalog_name), PhysicsPreset{},
                                           full_scale ? full_scale_camera() : CameraConfig{});
            ClipRecord clip = generate_clip(scene, seed);
            py::dict out;
            out["top"] = to_numpy(clip.top);
            out["bottom"] = to_numpy(clip.bottom);
            out["truth"] = label_to_rows(clip.truth);
            out["target_color"] =
                std::array<int, 3>{scene.target.color.r, scene.target.color.g, scene.target.color.b};
            out["scene_id"] = clip.scene_id;
            out["seed"] = clip.seed;
            return out;
        },
        py::arg("catalog"), py::arg("seed") = 0, py::arg("full_scale") = false);

    m.def(
        "track_clip",
        [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> video,
           std::array<int, 3> color, int tol) {
            return label_to_rows(track_clip(from_numpy(video), ColorKey{rgb_from_tuple(color), tol}));
        },
        py::arg("video"), py::arg("color"), py::arg("tol") = 40);

    m.def(
        "rasterize",
        [](const std::vector<std::array<int, 3>>& label, int h, int w, float fill) {
            return to_numpy(rasterize(label_from_rows(label), h, w, fill));
        },
        py::arg("label"), py::arg("h"), py::arg("w"), py::arg("fill") = 255.0f);

    m.def(
        "prediction_error",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> truth,
           py::array_t<float, py::array::c_style | py::array::forcecast> pred) {
            return prediction_error(from_numpy(truth), from_numpy(pred));
        },
        py::arg("truth"), py::arg("pred"));

    m.def("generation_gap", &generation_gap, py::arg("pe_new"), py::arg("pe_previous"));

    m.def(
        "read_clip",
        [](const std::string& path) { return to_numpy(read_clip(path)); },
        py::arg("path"));
    m.def(
        "write_clip",
        [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> clip, int role,
           const std::string& path) {
            write_clip(from_numpy(clip), static_cast<std::uint8_t>(role), path);
        },
        py::arg("clip"), py::arg("role"), py::arg("path"));

    m.def("param_count", [](const std::string& variant, const std::string& scale) {
        const SpatialVariant v = variant_from_name(variant);
        return VotModel(scale == "full" ? VOTConfig::full_scale(v) : VOTConfig::desk(v))
            .param_count();
    });

    // random-initialised forward pass; clip is [T,H,W,3] uint8
    m.def(
        "model_forward",
        [](const std::string& variant,
           py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> clip,
           std::uint64_t seed) {
            VotModel model(VOTConfig::desk(variant_from_name(variant)));
            ParameterStore<float> store;
            model.init_params(store, seed);
            Tensor<float> frames = preprocess_clip<float>(
                from_numpy(clip), model.config().input_frames, model.config().input_res);
            Tape<float> tape;
            Binder<float> bind(tape, store, false);
            return to_numpy(model.forward(bind, tape.leaf(frames, false)).val());
        },
        py::arg("variant"), py::arg("clip"), py::arg("seed") = 0);
}
