#include "metaview/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "metaview/errors.hpp"

namespace mv {

GridGeometry grid_geometry(const ExperimentConfig& cfg) {
    return GridGeometry{cfg.elevations, cfg.azimuths, cfg.feature_dim};
}

GeneratorConfig generator_config(const ExperimentConfig& cfg) {
    GeneratorConfig g;
    g.num_categories = cfg.num_categories;
    g.instances_per_category = cfg.instances_per_category;
    g.informative_cells = cfg.informative_cells;
    g.signal_scale = cfg.signal_scale;
    g.instance_noise = cfg.instance_noise;
    g.background_noise = cfg.background_noise;
    g.instance_signal_cells = cfg.instance_signal_cells;
    g.informative_zone = cfg.informative_zone;
    g.signal_falloff = cfg.signal_falloff;
    g.smoothing_radius = cfg.smoothing_radius;
    g.seed = cfg.seed;
    return g;
}

MetaConfig meta_config(const ExperimentConfig& cfg) {
    MetaConfig m;
    m.ways = cfg.ways;
    m.shots = cfg.shots;
    m.query_per_class = cfg.query_per_class;
    m.glimpses = cfg.glimpses;
    m.inner_lr = cfg.inner_lr;
    m.outer_lr = cfg.outer_lr;
    m.inner_steps = cfg.inner_steps;
    m.tasks_per_batch = cfg.tasks_per_batch;
    m.iterations_per_epoch = cfg.iterations;
    m.epochs = cfg.epochs;
    m.val_tasks = cfg.val_tasks;
    m.weights = LossWeights{cfg.lambda1, cfg.lambda2};
    m.entropy_form = entropy_form_from_string(cfg.entropy_form);
    m.first_order = cfg.first_order;
    m.reward_baseline = cfg.reward_baseline;
    m.adam_outer = cfg.outer_optimizer == "adam";
    m.measure_time = cfg.timing;
    return m;
}

namespace {

constexpr std::uint64_t kSplitTag = 0x21;

SplitSpec make_splits(const ExperimentConfig& cfg, const Dataset& ds, TaskFamily family) {
    std::vector<std::int64_t> space;
    if (family == TaskFamily::intra_instance) {
        for (const auto* obj : ds.objects_of_category(static_cast<std::int64_t>(cfg.intra_category)))
            space.push_back(obj->object_id);
        if (space.empty())
            throw ConfigError("intra-instance: category " + std::to_string(cfg.intra_category) +
                              " has no instances");
    } else {
        for (std::size_t c = 0; c < ds.num_categories(); ++c)
            space.push_back(static_cast<std::int64_t>(c));
    }
    std::size_t need = cfg.train_labels + cfg.val_labels + cfg.test_labels;
    if (space.size() < need)
        throw ConfigError("label space has " + std::to_string(space.size()) +
                          " entries, splits need " + std::to_string(need));

    Rng rng(derive_seed(cfg.seed, kSplitTag));
    for (std::size_t i = space.size(); i > 1; --i)
        std::swap(space[i - 1], space[rng.uniform_index(i)]);

    SplitSpec splits;
    auto it = space.begin();
    splits.train_labels.assign(it, it + static_cast<std::ptrdiff_t>(cfg.train_labels));
    it += static_cast<std::ptrdiff_t>(cfg.train_labels);
    splits.val_labels.assign(it, it + static_cast<std::ptrdiff_t>(cfg.val_labels));
    it += static_cast<std::ptrdiff_t>(cfg.val_labels);
    splits.test_labels.assign(it, it + static_cast<std::ptrdiff_t>(cfg.test_labels));
    splits.validate();
    return splits;
}

constexpr std::uint64_t kTrainSeedTag = 0x31;
constexpr std::uint64_t kTestSeedTag = 0x32;
constexpr std::uint64_t kPretrainSeedTag = 0x33;

}  // namespace

BenchmarkSetup build_setup(const ExperimentConfig& cfg, const Dataset* preloaded) {
    BenchmarkSetup s;
    s.dataset = preloaded ? *preloaded : generate_dataset(generator_config(cfg), grid_geometry(cfg));
    s.family = family_from_string(cfg.family);
    s.splits = make_splits(cfg, s.dataset, s.family);
    s.actions = ActionSet::make(cfg.radius_e, cfg.radius_a);
    s.dims = AgentDims{s.dataset.geometry.feature_dim, cfg.hidden, cfg.action_embed,
                       s.actions.size(), cfg.ways};
    s.meta = meta_config(cfg);
    s.pretrain = PretrainConfig{cfg.pretrain_iterations, cfg.pretrain_batch, cfg.pretrain_lr,
                                cfg.finetune_steps,      cfg.finetune_lr,
                                cfg.outer_optimizer == "adam"};
    return s;
}

MethodRun run_method(Method method, const BenchmarkSetup& setup, const ExperimentConfig& cfg,
                     std::ostream* log) {
    MethodRun run;
    run.method = method;
    MetaConfig mcfg = method_config(method, setup.meta);

    if (method == Method::pretrain_finetune) {
        if (setup.family != TaskFamily::category)
            throw ConfigError("pretrain-finetune applies to the category family only");
        std::vector<std::int64_t> pre_labels = setup.splits.train_labels;
        pre_labels.insert(pre_labels.end(), setup.splits.val_labels.begin(),
                          setup.splits.val_labels.end());
        std::sort(pre_labels.begin(), pre_labels.end());
        PretrainResult pre = pretrain_classifier(setup.dataset, pre_labels, setup.pretrain, mcfg,
                                                 setup.actions, setup.dims,
                                                 derive_seed(cfg.seed, kPretrainSeedTag), log);
        run.pretrain_accuracy = pre.train_accuracy;
        run.train.final_params = pre.params;
        run.train.best_params = pre.params;
        run.test = pretrain_finetune_evaluate(pre, setup.dataset, setup.splits.test_labels,
                                              setup.pretrain, mcfg, setup.actions,
                                              derive_seed(cfg.seed, kTestSeedTag), cfg.test_tasks);
        return run;
    }

    MethodSpec spec = method_spec(method);
    run.train = run_meta_training(setup.dataset, setup.splits, mcfg, setup.actions, setup.dims,
                                  derive_seed(cfg.seed, kTrainSeedTag), spec, setup.family, log);
    run.test = run_meta_test(run.train.best_params, setup.dataset, setup.splits.test_labels,
                             setup.family, mcfg, setup.actions, spec,
                             derive_seed(cfg.seed, kTestSeedTag), cfg.test_tasks);
    return run;
}

EvalResult test_params(Method method, const ParamSet& params, const BenchmarkSetup& setup,
                       const ExperimentConfig& cfg, std::size_t num_tasks) {
    MetaConfig mcfg = method_config(method, setup.meta);
    return run_meta_test(params, setup.dataset, setup.splits.test_labels, setup.family, mcfg,
                         setup.actions, method_spec(method), derive_seed(cfg.seed, kTestSeedTag),
                         num_tasks);
}

namespace {

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history,
                       const std::string& method) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    if (!method.empty()) os << "method,";
    os << "epoch,meta_train_loss,meta_train_acc,val_acc_mean,val_acc_std,mean_policy_entropy,"
          "wall_seconds\n";
    for (const auto& row : history) {
        if (!method.empty()) os << method << ",";
        os << row.epoch << "," << fmt(row.meta_train_loss) << "," << fmt(row.meta_train_acc) << ","
           << fmt(row.val_acc_mean) << "," << fmt(row.val_acc_std) << ","
           << fmt(row.mean_policy_entropy) << "," << fmt(row.wall_seconds) << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

void write_report(const std::string& txt_path, const std::string& json_path,
                  const EvalResult& result, const ExperimentConfig& cfg,
                  const std::string& method) {
    {
        std::ofstream os(txt_path);
        if (!os) throw IoError("cannot open for writing: " + txt_path);
        os << "method: " << method << "\n";
        os << "accuracy_mean: " << fmt(result.accuracy_mean) << "\n";
        os << "ci95: " << fmt(result.ci95) << "\n";
        os << "num_tasks: " << result.num_tasks << "\n";
        if (!os) throw IoError("write failed: " + txt_path);
    }
    nlohmann::ordered_json j;
    j["method"] = method;
    j["accuracy_mean"] = result.accuracy_mean;
    j["ci95"] = result.ci95;
    j["num_tasks"] = result.num_tasks;
    nlohmann::ordered_json echo;
    for (const auto& [k, v] : config_entries(cfg)) echo[k] = v;
    j["config"] = echo;
    std::ofstream os(json_path);
    if (!os) throw IoError("cannot open for writing: " + json_path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + json_path);
}

void dump_trajectories(std::ostream& os, const ParamSet& params, const BenchmarkSetup& setup,
                       const ExperimentConfig& cfg, std::size_t num_tasks) {
    MetaConfig mcfg = setup.meta;
    MethodSpec spec{PolicyKind::learned, PolicyKind::learned_argmax};
    for (std::size_t i = 0; i < num_tasks; ++i) {
        Task task = sample_test_task(setup.dataset, setup.splits.test_labels, setup.family, mcfg,
                                     derive_seed(cfg.seed, kTestSeedTag), i);
        Rng adapt_rng(derive_seed(cfg.seed, kTestSeedTag, i, 1));
        AdaptResult adapted = inner_adapt(params, task, mcfg, setup.actions, spec.train_policy,
                                          adapt_rng);
        Rng query_rng = test_query_rng(derive_seed(cfg.seed, kTestSeedTag), i);

        os << "task " << i << " (" << cfg.family << ", " << task.ways << "-way)\n";
        Tape tape;
        ParamVars vars = insert_params(tape, adapted.params);
        for (std::size_t q = 0; q < task.query.size(); ++q) {
            const auto& ep = task.query[q];
            EpisodeConfig ecfg{mcfg.glimpses, ep.start};
            Trajectory traj = rollout(tape, vars, params.dims, *ep.object, ep.task_label, ecfg,
                                      setup.actions, spec.eval_policy, query_rng);
            os << "  query " << q << ": object " << ep.object->object_id << " true "
               << traj.true_label << " predicted " << traj.predicted_label << " reward "
               << traj.reward << "\n";
            const GridGeometry& g = setup.dataset.geometry;
            for (std::size_t e = 0; e < g.elevations; ++e) {
                os << "    ";
                for (std::size_t a = 0; a < g.azimuths; ++a) {
                    char mark = '.';
                    for (std::size_t t = 0; t < traj.visited.size(); ++t) {
                        if (traj.visited[t] == ViewPointer{e, a}) {
                            mark = static_cast<char>('1' + (t % 9));
                            break;
                        }
                    }
                    os << mark << ' ';
                }
                os << "\n";
            }
            os << "    actions:";
            for (std::size_t a : traj.actions) {
                const Action& act = setup.actions.actions[a];
                os << " (" << act.d_elev << "," << act.d_azim << ")";
            }
            os << "\n";
        }
    }
}

}  // namespace mv
