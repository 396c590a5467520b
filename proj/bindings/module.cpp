// Python bindings over the core operations: dataset synthesis, task
// sampling, episode rollouts, meta-training and evaluation.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "metaview/experiment.hpp"
#include "metaview/oracle.hpp"

namespace py = pybind11;
using namespace mv;

namespace {

ExperimentConfig config_from_dict(const py::dict& overrides) {
    ExperimentConfig cfg;
    for (auto item : overrides) {
        std::string key = py::str(item.first);
        std::string value = py::str(item.second);
        apply_config_entry(cfg, key, value);
    }
    return cfg;
}

py::dict eval_to_dict(const EvalResult& res) {
    py::dict out;
    out["accuracy_mean"] = res.accuracy_mean;
    out["ci95"] = res.ci95;
    out["num_tasks"] = res.num_tasks;
    out["per_task_accuracy"] = res.per_task_accuracy;
    return out;
}

py::list history_to_list(const std::vector<EpochMetrics>& history) {
    py::list rows;
    for (const auto& row : history) {
        py::dict d;
        d["epoch"] = row.epoch;
        d["meta_train_loss"] = row.meta_train_loss;
        d["meta_train_acc"] = row.meta_train_acc;
        d["val_acc_mean"] = row.val_acc_mean;
        d["val_acc_std"] = row.val_acc_std;
        d["mean_policy_entropy"] = row.mean_policy_entropy;
        d["wall_seconds"] = row.wall_seconds;
        rows.append(d);
    }
    return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Few-shot active view selection on synthetic view grids";

    py::register_exception<Error>(m, "MetaviewError");

    py::class_<GridGeometry>(m, "GridGeometry")
        .def(py::init<>())
        .def_readwrite("elevations", &GridGeometry::elevations)
        .def_readwrite("azimuths", &GridGeometry::azimuths)
        .def_readwrite("feature_dim", &GridGeometry::feature_dim)
        .def("cells", &GridGeometry::cells);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("num_objects",
                               [](const Dataset& ds) { return ds.objects.size(); })
        .def_property_readonly("num_categories",
                               [](const Dataset& ds) { return ds.num_categories(); })
        .def("save", [](const Dataset& ds, const std::string& path, bool header_only) {
                 save_dataset(ds, path, header_only);
             },
             py::arg("path"), py::arg("header_only") = false);

    m.def("load_dataset", &load_dataset, py::arg("path"));

    m.def(
        "generate_dataset",
        [](const py::dict& overrides) {
            ExperimentConfig cfg = config_from_dict(overrides);
            return generate_dataset(generator_config(cfg), grid_geometry(cfg));
        },
        py::arg("config") = py::dict(), "Synthesize a dataset from config overrides");

    py::class_<ParamSet>(m, "ParamSet")
        .def("num_parameters", &ParamSet::total_scalars)
        .def("content_hash", &ParamSet::content_hash)
        .def("save",
             [](const ParamSet& p, const std::string& path) { save_checkpoint(p, path); },
             py::arg("path"));

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def(
        "train",
        [](const std::string& method, const py::dict& overrides) {
            ExperimentConfig cfg = config_from_dict(overrides);
            BenchmarkSetup setup = build_setup(cfg);
            MethodRun run = run_method(method_from_string(method), setup, cfg, nullptr);
            py::dict out;
            out["method"] = method;
            out["test"] = eval_to_dict(run.test);
            out["history"] = history_to_list(run.train.history);
            out["best_epoch"] = run.train.best_epoch;
            out["params"] = run.train.best_params;
            if (method == "pretrain-finetune") out["pretrain_accuracy"] = run.pretrain_accuracy;
            return out;
        },
        py::arg("method") = "metaview", py::arg("config") = py::dict(),
        "Train a method and evaluate it on the MetaTest stream");

    m.def(
        "evaluate",
        [](const ParamSet& params, const py::dict& overrides, std::size_t num_tasks) {
            ExperimentConfig cfg = config_from_dict(overrides);
            BenchmarkSetup setup = build_setup(cfg);
            return eval_to_dict(test_params(Method::metaview, params, setup, cfg,
                                            num_tasks ? num_tasks : cfg.test_tasks));
        },
        py::arg("params"), py::arg("config") = py::dict(), py::arg("num_tasks") = 0,
        "Adapt-and-evaluate a parameter set on MetaTest tasks");

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            GridGeometry geom{3, 4, 4};
            GeneratorConfig gen;
            gen.num_categories = 3;
            gen.instances_per_category = 2;
            gen.informative_cells = 2;
            gen.instance_signal_cells = 1;
            gen.seed = seed;
            Dataset ds = generate_dataset(gen, geom);
            ActionSet actions = ActionSet::make(0, 1);
            AgentDims dims{geom.feature_dim, 8, 4, actions.size(), 2};
            Rng init(derive_seed(seed, 0x77));
            ParamSet params = ParamSet::init(dims, init);
            std::vector<std::size_t> forced{2, 0};
            LossWeights weights;
            auto loss_fn = [&](const ParamSet& p) {
                Tape tape;
                ParamVars vars = insert_params(tape, p);
                Rng rng(0);
                EpisodeConfig ecfg{3, ViewPointer{1, 1}};
                Trajectory traj = rollout(tape, vars, dims, ds.objects[0], 0, ecfg, actions,
                                          PolicyKind::forced, rng, &forced);
                return tape.value(total_loss(tape, traj, weights)).data[0];
            };
            Tape tape;
            ParamVars vars = insert_params(tape, params);
            Rng rng(0);
            EpisodeConfig ecfg{3, ViewPointer{1, 1}};
            Trajectory traj = rollout(tape, vars, dims, ds.objects[0], 0, ecfg, actions,
                                      PolicyKind::forced, rng, &forced);
            GradMap tape_grad = tape.backward(total_loss(tape, traj, weights));
            return max_rel_error(tape_grad, finite_diff_grad(loss_fn, params));
        },
        py::arg("seed") = 0, "Max relative error of the combined-loss gradient vs finite differences");

    m.def("default_config", [] {
        py::dict out;
        for (const auto& [key, value] : config_entries(ExperimentConfig{})) out[py::str(key)] = value;
        return out;
    });
}
