#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vicon/config_json.hpp"
#include "vicon/dataio.hpp"
#include "vicon/metrics.hpp"
#include "vicon/model.hpp"
#include "vicon/patching.hpp"
#include "vicon/rollout.hpp"
#include "vicon/train.hpp"

namespace py = pybind11;
using namespace vicon;

namespace {

Tensor<float> tensor_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> array) {
    Tensor<float> t;
    t.shape.assign(array.shape(), array.shape() + array.ndim());
    t.data.assign(array.data(), array.data() + array.size());
    return t;
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> array(shape);
    std::copy(t.data.begin(), t.data.end(), array.mutable_data());
    return array;
}

Frame frame_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> values,
                       const std::vector<bool>& mask) {
    if (values.ndim() != 3 || values.shape(2) != kUnionChannels) {
        throw std::invalid_argument("frame values must be [nx, ny, 7]");
    }
    if (mask.size() != kUnionChannels) throw std::invalid_argument("channel mask must have 7 entries");
    Frame f;
    f.values = tensor_from_array(values);
    for (size_t i = 0; i < kUnionChannels; ++i) f.channel_mask[i] = mask[i];
    return f;
}

py::array_t<uint8_t> mask_to_array(const Mask& mask) {
    py::array_t<uint8_t> out({mask.rows, mask.cols});
    std::copy(mask.allowed.begin(), mask.allowed.end(), out.mutable_data());
    return out;
}

py::list plan_steps_to_list(const RolloutPlan& plan) {
    py::list steps;
    for (const PlanStep& step : plan.steps) {
        py::dict d;
        py::list pairs;
        for (const auto& [a, b] : step.example_pairs) pairs.append(py::make_tuple(a, b));
        d["examples"] = pairs;
        d["question_in"] = step.question_in;
        d["question_out"] = step.question_out;
        d["stride"] = step.stride;
        steps.append(d);
    }
    return steps;
}

std::vector<Trajectory> trajectories_from_paths(const std::vector<std::string>& paths) {
    std::vector<Trajectory> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_trajectory(p));
    return out;
}

}  // namespace

PYBIND11_MODULE(pyvicon, m) {
    m.doc() = "In-context operator learning for 2D PDE time evolution";

    // ---- patching ----
    m.def(
        "patchify",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> values, int64_t rx, int64_t ry) {
            auto grid = patchify_values(tensor_from_array(values), rx, ry);
            return py::make_tuple(array_from_tensor(grid.patches),
                                  py::make_tuple(grid.layout.patches_x, grid.layout.patches_y, grid.layout.rx,
                                                 grid.layout.ry, grid.layout.channels));
        },
        py::arg("values"), py::arg("rx"), py::arg("ry"),
        "Split a [nx, ny, c] field into flattened patches; returns (patches, layout).");
    m.def(
        "unpatchify",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> patches, py::tuple layout) {
            PatchGrid grid;
            grid.patches = tensor_from_array(patches);
            grid.layout = PatchLayout{layout[0].cast<int64_t>(), layout[1].cast<int64_t>(),
                                      layout[2].cast<int64_t>(), layout[3].cast<int64_t>(),
                                      layout[4].cast<int64_t>()};
            return array_from_tensor(unpatchify_values(grid));
        },
        py::arg("patches"), py::arg("layout"));

    // ---- masking ----
    m.def(
        "build_block_causal_mask",
        [](int64_t num_pairs, int64_t nc, int64_t nq) {
            return mask_to_array(build_block_causal_mask(num_pairs, nc, nq));
        },
        py::arg("num_pairs"), py::arg("nc"), py::arg("nq"));

    // ---- planners ----
    m.def("gen_single_step", [](int64_t d, int64_t r, int64_t t) {
        return plan_steps_to_list(gen_single_step(d, r, t));
    });
    m.def("gen_flexible_step", [](int64_t d, int64_t r, int64_t m_, int64_t t) {
        return plan_steps_to_list(gen_flexible_step(d, r, m_, t));
    });
    m.def("get_available_pairs", &get_available_pairs, py::arg("num_examples"), py::arg("stride"),
          py::arg("available"));
    m.def("gen_single_step_with_drops", [](int64_t d, int64_t s, int64_t t, std::vector<int64_t> fa) {
        return plan_steps_to_list(gen_single_step_with_drops(d, s, t, std::move(fa)));
    });
    m.def("gen_flexible_with_drops", [](int64_t d, int64_t m_, int64_t t, std::vector<int64_t> fa) {
        return plan_steps_to_list(gen_flexible_with_drops(d, m_, t, std::move(fa)));
    });
    m.def("plan_text", [](int64_t d, int64_t r, int64_t t) { return plan_to_text(gen_single_step(d, r, t)); });

    // ---- generators ----
    auto traj_to_tuple = [](const Trajectory& traj) {
        std::vector<py::ssize_t> shape = {traj.nt(), traj.nx(), traj.ny(), kUnionChannels};
        py::array_t<float> values(shape);
        float* dst = values.mutable_data();
        for (const Frame& f : traj.frames) {
            std::copy(f.values.data.begin(), f.values.data.end(), dst);
            dst += f.values.data.size();
        }
        std::vector<bool> mask(traj.channel_mask.begin(), traj.channel_mask.end());
        return py::make_tuple(values, mask);
    };
    m.def(
        "gen_heat",
        [traj_to_tuple](int64_t nx, int64_t ny, double nu, double dt, int64_t nt, uint64_t seed) {
            return traj_to_tuple(gen_heat(nx, ny, nu, dt, nt, seed));
        },
        py::arg("nx"), py::arg("ny"), py::arg("nu"), py::arg("dt"), py::arg("nt"), py::arg("seed"));
    m.def(
        "gen_advection",
        [traj_to_tuple](int64_t nx, int64_t ny, double vx, double vy, double dt, int64_t nt, uint64_t seed) {
            return traj_to_tuple(gen_advection(nx, ny, vx, vy, dt, nt, seed));
        },
        py::arg("nx"), py::arg("ny"), py::arg("vx"), py::arg("vy"), py::arg("dt"), py::arg("nt"),
        py::arg("seed"));

    // ---- metrics ----
    m.def(
        "rel_l2",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> pred,
           py::array_t<float, py::array::c_style | py::array::forcecast> gt, std::vector<double> sigma,
           std::vector<bool> mask) {
            if (sigma.size() != kUnionChannels) throw std::invalid_argument("sigma must have 7 entries");
            std::array<double, kUnionChannels> s;
            std::copy(sigma.begin(), sigma.end(), s.begin());
            Frame pf = frame_from_array(pred, mask);
            Frame gf = frame_from_array(gt, mask);
            return rel_l2(pf, gf, s, pf.channel_mask);
        },
        py::arg("pred"), py::arg("gt"), py::arg("sigma"), py::arg("mask"));
    m.def(
        "abs_l2",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> pred,
           py::array_t<float, py::array::c_style | py::array::forcecast> gt, std::vector<bool> mask) {
            Frame pf = frame_from_array(pred, mask);
            Frame gf = frame_from_array(gt, mask);
            return abs_l2(pf, gf, pf.channel_mask);
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask"));

    // ---- model ----
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("desk", &ModelConfig::desk)
        .def_static("full_scale", &ModelConfig::full_scale)
        .def_readwrite("d", &ModelConfig::d)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ffn", &ModelConfig::d_ffn)
        .def_readwrite("max_pairs", &ModelConfig::max_pairs)
        .def_readwrite("min_context", &ModelConfig::min_context)
        .def_readwrite("rx", &ModelConfig::rx)
        .def_readwrite("ry", &ModelConfig::ry)
        .def_readwrite("nc", &ModelConfig::nc)
        .def_readwrite("nq", &ModelConfig::nq)
        .def_readwrite("c_union", &ModelConfig::c_union);

    py::class_<ModelParams<float>>(m, "Model")
        .def_static(
            "init", [](const ModelConfig& cfg, uint64_t seed) { return ModelParams<float>::init(cfg, seed); },
            py::arg("config"), py::arg("seed"))
        .def_static("load", [](const std::string& path) { return load_model_checkpoint(path); }, py::arg("path"))
        .def("save", [](const ModelParams<float>& params, const std::string& path) {
            save_model_checkpoint(params, path);
        })
        .def_property_readonly("config", [](const ModelParams<float>& p) { return p.config; })
        .def(
            "predict_next",
            [](const ModelParams<float>& params,
               std::vector<std::pair<py::array_t<float, py::array::c_style | py::array::forcecast>,
                                     py::array_t<float, py::array::c_style | py::array::forcecast>>>
                   context,
               py::array_t<float, py::array::c_style | py::array::forcecast> question,
               std::vector<bool> mask) {
                std::vector<FramePair> pairs;
                for (auto& [c, q] : context) {
                    FramePair pair;
                    pair.cond = frame_from_array(c, mask);
                    pair.qoi = frame_from_array(q, mask);
                    pairs.push_back(std::move(pair));
                }
                PredictResult result = predict_next(pairs, frame_from_array(question, mask), params);
                return py::make_tuple(array_from_tensor(result.frame.values), result.low_context);
            },
            py::arg("context"), py::arg("question"), py::arg("mask"),
            "Predict the next function for a normalized prompt; returns (values, low_context).");

    // ---- training ----
    m.def(
        "train_on_trajectories",
        [](const std::vector<std::string>& trajectory_files, const ModelConfig& mcfg, py::dict overrides) {
            TrainConfig tcfg;
            nlohmann::json merged = train_config_to_json(tcfg);
            for (auto item : overrides) {
                const std::string key = py::str(item.first);
                if (!merged.contains(key)) throw std::invalid_argument("unknown train field '" + key + "'");
                if (merged[key].is_number_float()) {
                    merged[key] = item.second.cast<double>();
                } else if (key == "seed") {
                    merged[key] = item.second.cast<uint64_t>();
                } else {
                    merged[key] = item.second.cast<int64_t>();
                }
            }
            tcfg = train_config_from_json(merged);
            auto data = trajectories_from_paths(trajectory_files);
            double last_loss = 0.0;
            auto result = run_training(data, mcfg, tcfg,
                                       [&](int64_t, const StepStats& stats) { last_loss = stats.loss; });
            return py::make_tuple(result.params, last_loss);
        },
        py::arg("trajectory_files"), py::arg("model_config"), py::arg("train_overrides") = py::dict(),
        "Train from scratch on trajectory container files; returns (model, final_loss).");
}
