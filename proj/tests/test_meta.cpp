#include <doctest.h>

#include <cmath>
#include <memory>
#include <set>

#include "metaview/errors.hpp"
#include "metaview/meta.hpp"
#include "metaview/oracle.hpp"

using namespace mv;

namespace {

Dataset bench_dataset(std::uint64_t seed = 41) {
    GridGeometry g{3, 4, 6};
    GeneratorConfig cfg;
    cfg.num_categories = 8;
    cfg.instances_per_category = 4;
    cfg.informative_cells = 2;
    cfg.instance_signal_cells = 1;
    cfg.informative_zone = 6;
    cfg.seed = seed;
    return generate_dataset(cfg, g);
}

MetaConfig small_meta() {
    MetaConfig m;
    m.ways = 3;
    m.shots = 1;
    m.glimpses = 2;
    m.val_tasks = 4;
    m.iterations_per_epoch = 2;
    m.epochs = 1;
    return m;
}

// quadratic objective 0.5 * || theta - c ||^2 via tape ops
LossBuilder quadratic_objective(const ParamSet& target) {
    return [target](Tape& tape, const ParamVars& vars) {
        Var acc{};
        bool first = true;
        for (const auto& [name, var] : vars) {
            Var diff = tape.sub(var, tape.constant(target.at(name)));
            Var term = tape.sum(tape.mul(diff, diff));
            acc = first ? term : tape.add(acc, term);
            first = false;
        }
        return tape.scale(acc, 0.5);
    };
}

std::vector<std::int64_t> categories(const Dataset& ds) {
    std::vector<std::int64_t> out;
    for (std::size_t c = 0; c < ds.num_categories(); ++c) out.push_back(static_cast<std::int64_t>(c));
    return out;
}

}  // namespace

TEST_CASE("split validation rejects overlap and empties") {
    SplitSpec ok{{0, 1}, {2}, {3, 4}};
    CHECK_NOTHROW(ok.validate());
    SplitSpec overlap{{0, 1}, {1}, {2}};
    CHECK_THROWS_AS(overlap.validate(), ConfigError);
    SplitSpec empty{{0}, {}, {1}};
    CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("category tasks: disjoint support/query, task-local labels") {
    Dataset ds = bench_dataset();
    Rng rng(5);
    Task task = sample_task(ds, categories(ds), TaskFamily::category, 5, 1, 1, rng);
    CHECK(task.support.size() == 5);
    CHECK(task.query.size() == 5);
    std::set<std::int64_t> sup_ids, qry_ids;
    std::set<std::size_t> labels;
    for (const auto& ep : task.support) {
        sup_ids.insert(ep.object->object_id);
        labels.insert(ep.task_label);
    }
    for (const auto& ep : task.query) qry_ids.insert(ep.object->object_id);
    CHECK(labels == std::set<std::size_t>{0, 1, 2, 3, 4});
    for (auto id : qry_ids) CHECK(sup_ids.count(id) == 0);
    // query labels subset of support labels, same category per label
    for (const auto& q : task.query)
        for (const auto& s : task.support)
            if (q.task_label == s.task_label)
                CHECK(q.object->category_id == s.object->category_id);
}

TEST_CASE("intra-instance tasks: same objects, distinct fixed start views per phase") {
    Dataset ds = bench_dataset();
    std::vector<std::int64_t> objects;
    for (const auto* obj : ds.objects_of_category(0)) objects.push_back(obj->object_id);
    Rng rng(6);
    Task task = sample_task(ds, objects, TaskFamily::intra_instance, 3, 1, 1, rng);
    std::set<std::int64_t> sup_ids, qry_ids;
    for (const auto& ep : task.support) sup_ids.insert(ep.object->object_id);
    for (const auto& ep : task.query) qry_ids.insert(ep.object->object_id);
    CHECK(sup_ids == qry_ids);
    REQUIRE(task.support[0].start.has_value());
    REQUIRE(task.query[0].start.has_value());
    CHECK(!(*task.support[0].start == *task.query[0].start));
    for (const auto& ep : task.support) CHECK(*ep.start == *task.support[0].start);
    for (const auto& ep : task.query) CHECK(*ep.start == *task.query[0].start);

    CHECK_THROWS_AS(sample_task(ds, objects, TaskFamily::intra_instance, 3, 2, 1, rng),
                    ContractError);
}

TEST_CASE("inter-instance tasks draw every instance from one category") {
    Dataset ds = bench_dataset();
    Rng rng(7);
    Task task = sample_task(ds, categories(ds), TaskFamily::inter_instance, 3, 1, 1, rng);
    std::int64_t cat = task.support[0].object->category_id;
    for (const auto& ep : task.support) CHECK(ep.object->category_id == cat);
    for (const auto& ep : task.query) CHECK(ep.object->category_id == cat);
}

TEST_CASE("task sampling fails loudly when the split is too small") {
    Dataset ds = bench_dataset();
    std::vector<std::int64_t> two{0, 1};
    Rng rng(8);
    CHECK_THROWS_AS(sample_task(ds, two, TaskFamily::category, 5, 1, 1, rng), ContractError);
    // not enough instances for shots + query
    Rng rng2(9);
    CHECK_THROWS_AS(sample_task(ds, categories(ds), TaskFamily::category, 3, 3, 2, rng2),
                    ContractError);
}

TEST_CASE("inner_adapt with alpha = 0 returns theta bitwise and never mutates it") {
    Dataset ds = bench_dataset();
    ActionSet actions = ActionSet::make(1, 1);
    AgentDims dims{ds.geometry.feature_dim, 8, 4, actions.size(), 3};
    Rng prng(3);
    ParamSet params = ParamSet::init(dims, prng);
    std::uint64_t hash_before = params.content_hash();

    MetaConfig cfg = small_meta();
    cfg.inner_lr = 0.0;
    Rng trng(4);
    Task task = sample_task(ds, categories(ds), TaskFamily::category, 3, 1, 1, trng);
    Rng arng(5);
    AdaptResult res = inner_adapt(params, task, cfg, actions, PolicyKind::learned, arng);
    CHECK(res.params.flatten() == params.flatten());
    CHECK(params.content_hash() == hash_before);
    CHECK(res.trajectories.size() == task.support.size());

    cfg.inner_lr = 0.05;
    Rng arng2(5);
    AdaptResult res2 = inner_adapt(params, task, cfg, actions, PolicyKind::learned, arng2);
    CHECK(res2.params.flatten() != params.flatten());
    CHECK(params.content_hash() == hash_before);
}

TEST_CASE("inner_adapt matches a hand-stepped finite-difference update") {
    Dataset ds = bench_dataset();
    ActionSet actions = ActionSet::make(0, 1);
    AgentDims dims{ds.geometry.feature_dim, 6, 3, actions.size(), 2};
    Rng prng(13);
    ParamSet params = ParamSet::init(dims, prng);

    MetaConfig cfg = small_meta();
    cfg.ways = 2;
    cfg.inner_lr = 0.01;
    cfg.inner_steps = 1;

    Rng trng(14);
    Task task = sample_task(ds, categories(ds), TaskFamily::category, 2, 1, 1, trng);
    // pin the support episodes: fixed starts + forced actions for determinism
    for (auto& ep : task.support) ep.start = ViewPointer{1, 2};

    Rng arng(15);
    AdaptResult adapted = inner_adapt(params, task, cfg, actions, PolicyKind::learned, arng);

    // replay the sampled actions as a deterministic loss of theta
    std::vector<std::vector<std::size_t>> forced;
    for (const auto& traj : adapted.trajectories) forced.push_back(traj.actions);
    auto loss_fn = [&](const ParamSet& p) {
        Tape tape;
        ParamVars vars = insert_params(tape, p);
        Rng rng(0);
        std::vector<Var> losses;
        for (std::size_t i = 0; i < task.support.size(); ++i) {
            EpisodeConfig ecfg{cfg.glimpses, task.support[i].start};
            Trajectory traj = rollout(tape, vars, dims, *task.support[i].object,
                                      task.support[i].task_label, ecfg, actions,
                                      PolicyKind::forced, rng, &forced[i]);
            // rewards are constants on the tape: reuse the sampled episode's reward
            traj.reward = adapted.trajectories[i].reward;
            losses.push_back(total_loss(tape, traj, cfg.weights, cfg.entropy_form));
        }
        return tape.value(mean_of(tape, losses)).data[0];
    };
    GradMap fd = finite_diff_grad(loss_fn, params);
    ParamSet expected = sgd_step(params, fd, cfg.inner_lr);

    auto got = adapted.params.flatten();
    auto want = expected.flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, relative_error(got[i], want[i]));
    CHECK(worst <= 1e-4);
}

TEST_CASE("outer step: beta = 0 keeps theta; inner_steps = 0 equals plain descent") {
    Dataset ds = bench_dataset();
    ActionSet actions = ActionSet::make(1, 1);
    AgentDims dims{ds.geometry.feature_dim, 8, 4, actions.size(), 3};
    Rng prng(23);
    ParamSet params = ParamSet::init(dims, prng);
    MetaConfig cfg = small_meta();

    auto make_objectives = [&](std::uint64_t seed) {
        auto tasks = std::make_shared<std::vector<Task>>();
        auto rngs = std::make_shared<std::vector<Rng>>();
        std::vector<TaskObjective> obj;
        for (std::uint64_t k = 0; k < 2; ++k) {
            Rng trng(derive_seed(seed, k));
            tasks->push_back(sample_task(ds, categories(ds), TaskFamily::category, cfg.ways,
                                         cfg.shots, cfg.query_per_class, trng));
            rngs->push_back(Rng(derive_seed(seed, k, 7)));
        }
        for (std::size_t k = 0; k < 2; ++k) {
            const Task* task = &(*tasks)[k];
            Rng* roll = &(*rngs)[k];
            obj.push_back(TaskObjective{
                [&, task, roll](Tape& tape, const ParamVars& vars) {
                    std::vector<Var> losses;
                    for (const auto& ep : task->support) {
                        EpisodeConfig ecfg{cfg.glimpses, ep.start};
                        Trajectory t = rollout(tape, vars, dims, *ep.object, ep.task_label, ecfg,
                                               actions, PolicyKind::learned, *roll);
                        losses.push_back(total_loss(tape, t, cfg.weights, cfg.entropy_form));
                    }
                    return mean_of(tape, losses);
                },
                [&, task, roll](Tape& tape, const ParamVars& vars) {
                    std::vector<Var> losses;
                    for (const auto& ep : task->query) {
                        EpisodeConfig ecfg{cfg.glimpses, ep.start};
                        Trajectory t = rollout(tape, vars, dims, *ep.object, ep.task_label, ecfg,
                                               actions, PolicyKind::learned, *roll);
                        losses.push_back(total_loss(tape, t, cfg.weights, cfg.entropy_form));
                    }
                    return mean_of(tape, losses);
                }});
        }
        return std::make_tuple(obj, tasks, rngs);
    };

    // beta = 0
    auto [obj1, t1, r1] = make_objectives(100);
    MetaStepResult res = first_order_meta_step(params, obj1, cfg.inner_lr, 0.0, 1, nullptr);
    CHECK(res.params.flatten() == params.flatten());

    // inner_steps = 0: equals plain mini-batch descent on the query losses
    auto [obj2, t2, r2] = make_objectives(200);
    MetaStepResult stepped = first_order_meta_step(params, obj2, cfg.inner_lr, 0.05, 0, nullptr);

    auto [obj3, t3, r3] = make_objectives(200);
    GradMap mean_grad;
    for (std::size_t k = 0; k < obj3.size(); ++k) {
        GradMap g = gradient_of(params, obj3[k].query_loss);
        for (auto& [name, t] : g) {
            auto it = mean_grad.find(name);
            if (it == mean_grad.end()) mean_grad[name] = t;
            else
                for (std::size_t i = 0; i < t.size(); ++i) it->second.data[i] += t.data[i];
        }
    }
    for (auto& [name, t] : mean_grad)
        for (auto& x : t.data) x /= static_cast<double>(obj3.size());
    ParamSet manual = sgd_step(params, mean_grad, 0.05);

    auto got = stepped.params.flatten();
    auto want = manual.flatten();
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got[i] - want[i]) <= 1e-12);
}

TEST_CASE("first-order update matches the closed form on a quadratic objective") {
    AgentDims dims{4, 5, 3, 5, 2};
    Rng prng(31), c1rng(32), c2rng(33);
    ParamSet params = ParamSet::init(dims, prng);
    ParamSet center1 = ParamSet::init(dims, c1rng);
    ParamSet center2 = ParamSet::init(dims, c2rng);

    const double alpha = 0.13, beta = 0.07;
    std::vector<TaskObjective> tasks;
    tasks.push_back(TaskObjective{quadratic_objective(center1), quadratic_objective(center1)});
    tasks.push_back(TaskObjective{quadratic_objective(center2), quadratic_objective(center2)});

    MetaStepResult res = first_order_meta_step(params, tasks, alpha, beta, 1, nullptr);

    // theta_i = theta - alpha (theta - c_i); first-order outer gradient is
    // (theta_i - c_i) = (1 - alpha)(theta - c_i), averaged over tasks.
    auto theta = params.flatten();
    auto c1 = center1.flatten();
    auto c2 = center2.flatten();
    double worst = 0.0;
    auto got = res.params.flatten();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = 0.5 * ((1 - alpha) * (theta[i] - c1[i]) + (1 - alpha) * (theta[i] - c2[i]));
        double want = theta[i] - beta * g;
        worst = std::max(worst, std::fabs(got[i] - want));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("second-order verification gradient matches the quadratic closed form") {
    AgentDims dims{3, 4, 2, 5, 2};
    Rng prng(41), crng(42);
    ParamSet params = ParamSet::init(dims, prng);
    ParamSet center = ParamSet::init(dims, crng);
    const double alpha = 0.2;

    GradMap g = maml_second_order_gradient(params, quadratic_objective(center),
                                           quadratic_objective(center), alpha);
    // full MAML gradient: (1 - alpha) * (theta_i - c) with theta_i - c =
    // (1 - alpha)(theta - c)  ==>  (1 - alpha)^2 (theta - c)
    auto theta = params.flatten();
    auto c = center.flatten();
    std::vector<double> got;
    for (const auto& [name, t] : g) got.insert(got.end(), t.data.begin(), t.data.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double want = (1 - alpha) * (1 - alpha) * (theta[i] - c[i]);
        worst = std::max(worst, std::fabs(got[i] - want));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("first-order outer gradient equals the direct tape gradient at theta_i") {
    AgentDims dims{3, 4, 2, 5, 2};
    Rng prng(51), c1(52), c2(53);
    ParamSet params = ParamSet::init(dims, prng);
    LossBuilder support = quadratic_objective(ParamSet::init(dims, c1));
    LossBuilder query = quadratic_objective(ParamSet::init(dims, c2));

    const double alpha = 0.1;
    ParamSet adapted = adapt(params, support, alpha, 1);
    GradMap direct = gradient_of(adapted, query);

    // reproduce what the meta step uses internally
    std::vector<TaskObjective> tasks{TaskObjective{support, query}};
    const double beta = 1.0;
    MetaStepResult res = first_order_meta_step(params, tasks, alpha, beta, 1, nullptr);
    auto got = res.params.flatten();
    auto theta = params.flatten();
    std::vector<double> dvec;
    for (const auto& [name, t] : direct) dvec.insert(dvec.end(), t.data.begin(), t.data.end());
    for (std::size_t i = 0; i < theta.size(); ++i)
        CHECK(std::fabs((theta[i] - got[i]) - beta * dvec[i]) <= 1e-15);
}

TEST_CASE("meta training accounting: epochs x iterations rows, metrics populated") {
    Dataset ds = bench_dataset();
    ActionSet actions = ActionSet::make(1, 1);
    AgentDims dims{ds.geometry.feature_dim, 6, 3, actions.size(), 3};
    MetaConfig cfg = small_meta();
    cfg.epochs = 2;
    cfg.iterations_per_epoch = 3;

    SplitSpec splits{{0, 1, 2}, {3, 4, 5}, {6, 7}};
    MethodSpec spec;
    TrainResult result = run_meta_training(ds, splits, cfg, actions, dims, 77, spec,
                                           TaskFamily::category);
    REQUIRE(result.history.size() == 2);
    CHECK(result.history[0].epoch == 1);
    CHECK(result.history[1].epoch == 2);
    CHECK(result.best_epoch >= 1);
    for (const auto& row : result.history) {
        CHECK(row.meta_train_loss > 0.0);
        CHECK(row.val_acc_mean >= 0.0);
        CHECK(row.wall_seconds == 0.0);  // timing off by default
    }
}

TEST_CASE("meta test is deterministic and near chance for an untrained net") {
    Dataset ds = bench_dataset();
    ActionSet actions = ActionSet::make(1, 1);
    AgentDims dims{ds.geometry.feature_dim, 8, 4, actions.size(), 3};
    Rng prng(61);
    ParamSet params = ParamSet::init(dims, prng);
    MetaConfig cfg = small_meta();
    cfg.inner_lr = 0.0;  // no adaptation: pure chance

    std::vector<std::int64_t> test_labels{5, 6, 7};
    MethodSpec spec;
    EvalResult a = run_meta_test(params, ds, test_labels, TaskFamily::category, cfg, actions,
                                 spec, 97, 150);
    EvalResult b = run_meta_test(params, ds, test_labels, TaskFamily::category, cfg, actions,
                                 spec, 97, 150);
    CHECK(a.accuracy_mean == b.accuracy_mean);
    CHECK(a.per_task_accuracy == b.per_task_accuracy);
    CHECK(std::fabs(a.accuracy_mean - 1.0 / 3.0) <= 3.0 * a.ci95 / 1.96 + 0.05);
}
