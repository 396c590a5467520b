// Command-line front end: dataset generation, meta-training, evaluation,
// baselines, gradient checking, estimator checks and trajectory dumps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "metaview/experiment.hpp"
#include "metaview/oracle.hpp"

namespace fs = std::filesystem;
using namespace mv;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;  // key=value
    std::string outdir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--seed", args.seed, "global seed (overrides config)");
    cmd->add_option("--set", args.overrides, "extra key=value overrides")->type_name("KEY=VALUE");
    cmd->add_option("--out", args.outdir, "output directory (default: METAVIEW_OUT or '.')");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = load_config(args.config_path);
    for (const auto& kv : args.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("--set expects key=value, got '" + kv + "'");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

fs::path resolve_outdir(const CommonArgs& args) {
    std::string dir = args.outdir;
    if (dir.empty()) {
        const char* env = std::getenv("METAVIEW_OUT");
        dir = env ? env : ".";
    }
    fs::create_directories(dir);
    return dir;
}

Dataset load_or_generate(const std::string& data_path, const ExperimentConfig& cfg) {
    if (!data_path.empty()) return load_dataset(data_path);
    return generate_dataset(generator_config(cfg), grid_geometry(cfg));
}

int cmd_gen_data(const CommonArgs& common, const std::string& out_file, bool header_only) {
    ExperimentConfig cfg = resolve_config(common);
    Dataset ds = generate_dataset(generator_config(cfg), grid_geometry(cfg));
    fs::path path = out_file.empty() ? resolve_outdir(common) / "dataset.mvgrid" : fs::path(out_file);
    save_dataset(ds, path.string(), header_only);
    std::cout << "wrote " << path.string() << " (" << ds.objects.size() << " objects, "
              << ds.num_categories() << " categories" << (header_only ? ", header only" : "")
              << ")\n";
    return 0;
}

int cmd_meta_train(const CommonArgs& common, const std::string& data_path) {
    ExperimentConfig cfg = resolve_config(common);
    Dataset ds = load_or_generate(data_path, cfg);
    BenchmarkSetup setup = build_setup(cfg, &ds);
    fs::path out = resolve_outdir(common);

    MethodRun run = run_method(Method::metaview, setup, cfg, &std::cerr);
    write_metrics_csv((out / "metrics.csv").string(), run.train.history);
    save_checkpoint(run.train.best_params, (out / "best.ckpt").string());
    save_checkpoint(run.train.final_params, (out / "final.ckpt").string());
    write_report((out / "report.txt").string(), (out / "report.json").string(), run.test, cfg,
                 "metaview");
    std::cout << "metaview test accuracy " << run.test.accuracy_mean << " +/- " << run.test.ci95
              << " over " << run.test.num_tasks << " tasks (best epoch " << run.train.best_epoch
              << ")\n";
    return 0;
}

int cmd_meta_test(const CommonArgs& common, const std::string& data_path,
                  const std::string& ckpt_path, std::size_t num_tasks) {
    ExperimentConfig cfg = resolve_config(common);
    Dataset ds = load_or_generate(data_path, cfg);
    BenchmarkSetup setup = build_setup(cfg, &ds);
    ParamSet params = load_checkpoint(ckpt_path);
    fs::path out = resolve_outdir(common);

    EvalResult res = test_params(Method::metaview, params, setup, cfg,
                                 num_tasks ? num_tasks : cfg.test_tasks);
    write_report((out / "report.txt").string(), (out / "report.json").string(), res, cfg,
                 "metaview");
    std::cout << "test accuracy " << res.accuracy_mean << " +/- " << res.ci95 << " over "
              << res.num_tasks << " tasks\n";
    return 0;
}

int cmd_baseline(const CommonArgs& common, const std::string& method_name_arg,
                 const std::string& data_path) {
    ExperimentConfig cfg = resolve_config(common);
    Method method = method_from_string(method_name_arg);
    if (method == Method::metaview)
        throw ConfigError("use the meta-train subcommand for metaview");
    Dataset ds = load_or_generate(data_path, cfg);
    BenchmarkSetup setup = build_setup(cfg, &ds);
    fs::path out = resolve_outdir(common);

    MethodRun run = run_method(method, setup, cfg, &std::cerr);
    std::string name = method_name(method);
    if (!run.train.history.empty())
        write_metrics_csv((out / (name + "-metrics.csv")).string(), run.train.history, name);
    write_report((out / (name + "-report.txt")).string(), (out / (name + "-report.json")).string(),
                 run.test, cfg, name);
    if (method == Method::pretrain_finetune)
        std::cout << "pretrain accuracy on seen categories: " << run.pretrain_accuracy << "\n";
    std::cout << name << " test accuracy " << run.test.accuracy_mean << " +/- " << run.test.ci95
              << " over " << run.test.num_tasks << " tasks\n";
    return 0;
}

// Combined-loss gradient vs central finite differences on a small agent with
// scripted actions.
int cmd_gradcheck(const CommonArgs& common) {
    ExperimentConfig cfg = resolve_config(common);

    GridGeometry geom{3, 4, 4};
    GeneratorConfig gen;
    gen.num_categories = 3;
    gen.instances_per_category = 2;
    gen.informative_cells = 2;
    gen.instance_signal_cells = 1;
    gen.seed = cfg.seed;
    Dataset ds = generate_dataset(gen, geom);

    ActionSet actions = ActionSet::make(0, 1);  // 3 actions
    AgentDims dims{geom.feature_dim, 8, 4, actions.size(), 2};
    Rng init(derive_seed(cfg.seed, 0x77));
    ParamSet params = ParamSet::init(dims, init);

    const std::size_t T = 3;
    std::vector<std::size_t> forced{2, 0};
    LossWeights weights{cfg.lambda1, cfg.lambda2};
    EntropyForm form = entropy_form_from_string(cfg.entropy_form);

    auto loss_fn = [&](const ParamSet& p) {
        Tape tape;
        ParamVars vars = insert_params(tape, p);
        Rng rng(0);
        EpisodeConfig ecfg{T, ViewPointer{1, 1}};
        Trajectory traj = rollout(tape, vars, dims, ds.objects[0], 0, ecfg, actions,
                                  PolicyKind::forced, rng, &forced);
        return tape.value(total_loss(tape, traj, weights, form)).data[0];
    };

    Tape tape;
    ParamVars vars = insert_params(tape, params);
    Rng rng(0);
    EpisodeConfig ecfg{T, ViewPointer{1, 1}};
    Trajectory traj = rollout(tape, vars, dims, ds.objects[0], 0, ecfg, actions,
                              PolicyKind::forced, rng, &forced);
    GradMap tape_grad = tape.backward(total_loss(tape, traj, weights, form));
    GradMap fd_grad = finite_diff_grad(loss_fn, params);

    double err = max_rel_error(tape_grad, fd_grad);
    std::cout << "gradcheck max rel-err " << err << " (threshold 1e-4)\n";
    if (!(err <= 1e-4)) throw NumericError("gradient check failed: max rel-err " + std::to_string(err));
    return 0;
}

// Estimator sanity: exhaustive enumeration of E[R] and its gradient vs the
// Monte-Carlo policy-gradient estimate.
int cmd_oracle_eval(const CommonArgs& common, std::size_t samples) {
    ExperimentConfig cfg = resolve_config(common);

    GridGeometry geom{2, 3, 4};
    GeneratorConfig gen;
    gen.num_categories = 2;
    gen.instances_per_category = 3;
    gen.informative_cells = 2;
    gen.instance_signal_cells = 1;
    gen.seed = cfg.seed;
    Dataset ds = generate_dataset(gen, geom);

    ActionSet actions = ActionSet::make(0, 1);
    AgentDims dims{geom.feature_dim, 8, 4, actions.size(), 2};
    Rng init(derive_seed(cfg.seed, 0x79));
    ParamSet params = ParamSet::init(dims, init);

    MetaConfig mcfg;
    mcfg.ways = 2;
    mcfg.glimpses = 2;

    Task task;
    task.family = TaskFamily::category;
    task.ways = 2;
    task.query.push_back(TaskEpisode{&ds.objects[0], 0, ViewPointer{0, 0}});
    task.query.push_back(TaskEpisode{&ds.objects[3], 1, ViewPointer{1, 2}});

    EnumerationResult exact = enumerate_expected_reward(params, task, mcfg, actions);
    std::cout << "exact E[R] " << exact.expected_reward << " over " << exact.sequences
              << " sequences\n";

    // MC estimate of grad E[R] = mean of -grad(policy_loss) over sampled episodes
    GradMap mc_sum, mc_sq;
    for (const auto& [name, t] : params.tensors) {
        mc_sum[name] = Tensor::zeros(t.shape);
        mc_sq[name] = Tensor::zeros(t.shape);
    }
    Rng rng(derive_seed(cfg.seed, 0x80));
    for (std::size_t s = 0; s < samples; ++s) {
        const auto& ep = task.query[s % task.query.size()];
        Tape tape;
        ParamVars vars = insert_params(tape, params);
        EpisodeConfig ecfg{mcfg.glimpses, ep.start};
        Trajectory traj = rollout(tape, vars, dims, *ep.object, ep.task_label, ecfg, actions,
                                  PolicyKind::learned, rng);
        GradMap g = tape.backward(policy_loss(tape, traj));
        for (auto& [name, acc] : mc_sum) {
            const Tensor& gt = g.at(name);
            Tensor& sq = mc_sq.at(name);
            for (std::size_t i = 0; i < acc.size(); ++i) {
                double x = -gt.data[i];
                acc.data[i] += x;
                sq.data[i] += x * x;
            }
        }
    }
    double worst_sigma = 0.0;
    double n = static_cast<double>(samples);
    for (auto& [name, acc] : mc_sum) {
        const Tensor& ex = exact.grad.at(name);
        const Tensor& sq = mc_sq.at(name);
        for (std::size_t i = 0; i < acc.size(); ++i) {
            double mean = acc.data[i] / n;
            double var = std::max(0.0, sq.data[i] / n - mean * mean);
            double se = std::sqrt(var / n) + 1e-12;
            worst_sigma = std::max(worst_sigma, std::fabs(mean - ex.data[i]) / se);
        }
    }
    std::cout << "estimator check: worst |mc - exact| = " << worst_sigma
              << " standard errors over " << samples << " samples (threshold 3)\n";
    if (!(worst_sigma <= 3.0))
        throw NumericError("policy-gradient estimator deviates from the enumeration oracle");
    return 0;
}

int cmd_dump_traj(const CommonArgs& common, const std::string& data_path,
                  const std::string& ckpt_path, std::size_t num_tasks) {
    ExperimentConfig cfg = resolve_config(common);
    Dataset ds = load_or_generate(data_path, cfg);
    BenchmarkSetup setup = build_setup(cfg, &ds);
    ParamSet params;
    if (!ckpt_path.empty()) {
        params = load_checkpoint(ckpt_path);
    } else {
        Rng init(derive_seed(cfg.seed, 0x01));
        params = ParamSet::init(setup.dims, init);
    }
    dump_trajectories(std::cout, params, setup, cfg, num_tasks);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot active view-selection laboratory on synthetic view grids"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, test_args, base_args, grad_args, oracle_args, dump_args;

    auto* gen = app.add_subcommand("gen-data", "generate a dataset and write it to disk");
    add_common(gen, gen_args);
    std::string gen_out_file;
    bool gen_header_only = false;
    gen->add_option("--out-file", gen_out_file, "dataset path (default <out>/dataset.mvgrid)");
    gen->add_flag("--regen-from-seed", gen_header_only,
                  "store only the header; regenerate records on load");

    auto* train = app.add_subcommand("meta-train", "meta-train the view-selection agent");
    add_common(train, train_args);
    std::string train_data;
    train->add_option("--data", train_data, "dataset file (generated from config when omitted)");
    std::optional<std::size_t> train_epochs, train_iters;
    train->add_option("--epochs", train_epochs, "override epochs");
    train->add_option("--iters", train_iters, "override iterations per epoch");

    auto* test = app.add_subcommand("meta-test", "evaluate a checkpoint on MetaTest tasks");
    add_common(test, test_args);
    std::string test_data, test_ckpt;
    std::size_t test_tasks = 0;
    test->add_option("--data", test_data, "dataset file (generated from config when omitted)");
    test->add_option("--ckpt", test_ckpt, "parameter checkpoint")->required();
    test->add_option("--tasks", test_tasks, "number of test tasks (default from config)");

    auto* base = app.add_subcommand("baseline", "train and evaluate a baseline method");
    add_common(base, base_args);
    std::string base_method, base_data;
    base->add_option("--method", base_method,
                     "random-one | random-multi | largest | pretrain-finetune")
        ->required();
    base->add_option("--data", base_data, "dataset file (generated from config when omitted)");

    auto* grad = app.add_subcommand("gradcheck", "combined-loss gradient vs finite differences");
    add_common(grad, grad_args);

    auto* oracle = app.add_subcommand("oracle-eval",
                                      "estimator unbiasedness and enumeration checks");
    add_common(oracle, oracle_args);
    std::size_t oracle_samples = 20000;
    oracle->add_option("--samples", oracle_samples, "Monte-Carlo sample count");

    auto* dump = app.add_subcommand("dump-traj", "print view-selection trajectories as text");
    add_common(dump, dump_args);
    std::string dump_data, dump_ckpt;
    std::size_t dump_tasks = 2;
    dump->add_option("--data", dump_data, "dataset file (generated from config when omitted)");
    dump->add_option("--ckpt", dump_ckpt, "parameter checkpoint (random init when omitted)");
    dump->add_option("--tasks", dump_tasks, "number of tasks to dump");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args, gen_out_file, gen_header_only);
        if (train->parsed()) {
            if (train_epochs) train_args.overrides.push_back("epochs=" + std::to_string(*train_epochs));
            if (train_iters) train_args.overrides.push_back("iterations=" + std::to_string(*train_iters));
            return cmd_meta_train(train_args, train_data);
        }
        if (test->parsed()) return cmd_meta_test(test_args, test_data, test_ckpt, test_tasks);
        if (base->parsed()) return cmd_baseline(base_args, base_method, base_data);
        if (grad->parsed()) return cmd_gradcheck(grad_args);
        if (oracle->parsed()) return cmd_oracle_eval(oracle_args, oracle_samples);
        if (dump->parsed()) return cmd_dump_traj(dump_args, dump_data, dump_ckpt, dump_tasks);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
