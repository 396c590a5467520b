#include "metaview/baselines.hpp"

#include <algorithm>

#include "metaview/errors.hpp"

namespace mv {

Method method_from_string(const std::string& name) {
    if (name == "metaview") return Method::metaview;
    if (name == "random-one") return Method::random_one_view;
    if (name == "random-multi") return Method::random_multi_view;
    if (name == "largest") return Method::largest_multi_view;
    if (name == "pretrain-finetune") return Method::pretrain_finetune;
    throw ConfigError("unknown method '" + name +
                      "' (expected metaview|random-one|random-multi|largest|pretrain-finetune)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::metaview: return "metaview";
        case Method::random_one_view: return "random-one";
        case Method::random_multi_view: return "random-multi";
        case Method::largest_multi_view: return "largest";
        case Method::pretrain_finetune: return "pretrain-finetune";
    }
    throw ConfigError("unknown method");
}

MethodSpec method_spec(Method m) {
    switch (m) {
        case Method::metaview:
        case Method::random_one_view:
        case Method::pretrain_finetune:
            return MethodSpec{PolicyKind::learned, PolicyKind::learned_argmax};
        case Method::random_multi_view:
            return MethodSpec{PolicyKind::uniform_random, PolicyKind::uniform_random};
        case Method::largest_multi_view:
            return MethodSpec{PolicyKind::largest, PolicyKind::largest};
    }
    throw ConfigError("unknown method");
}

MetaConfig method_config(Method m, const MetaConfig& base) {
    MetaConfig cfg = base;
    switch (m) {
        case Method::random_one_view:
            cfg.glimpses = 1;
            break;
        case Method::random_multi_view:
        case Method::largest_multi_view:
            // No learnable policy: the policy-gradient and entropy terms do
            // not apply.
            cfg.weights.lambda1 = 0.0;
            cfg.weights.lambda2 = 0.0;
            break;
        default:
            break;
    }
    return cfg;
}

namespace {

constexpr std::uint64_t kPretrainInitTag = 0x11;
constexpr std::uint64_t kPretrainIterTag = 0x12;
constexpr std::uint64_t kFinetuneHeadTag = 0x13;
constexpr std::uint64_t kFinetuneRollTag = 0x14;

Tensor head_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (auto& x : w.data) x = rng.uniform(-bound, bound);
    return w;
}

}  // namespace

PretrainResult pretrain_classifier(const Dataset& ds, const std::vector<std::int64_t>& categories,
                                   const PretrainConfig& pcfg, const MetaConfig& cfg,
                                   const ActionSet& actions, const AgentDims& dims,
                                   std::uint64_t seed, std::ostream* log) {
    if (categories.empty()) throw ConfigError("pretrain: empty category list");
    AgentDims pdims = dims;
    pdims.num_classes = categories.size();

    Rng init_rng(derive_seed(seed, kPretrainInitTag));
    ParamSet params = ParamSet::init(pdims, init_rng);

    // All instances of the pretrain categories with their global labels.
    std::vector<std::pair<const ObjectInstance*, std::size_t>> pool;
    for (std::size_t label = 0; label < categories.size(); ++label)
        for (const auto* obj : ds.objects_of_category(categories[label]))
            pool.emplace_back(obj, label);
    if (pool.empty()) throw ConfigError("pretrain: no objects in the given categories");

    AdamState adam;
    double recent_reward = 0.0;
    std::size_t recent_count = 0;
    for (std::size_t iter = 1; iter <= pcfg.iterations; ++iter) {
        Rng rng(derive_seed(seed, kPretrainIterTag, iter));
        Tape tape;
        ParamVars vars = insert_params(tape, params);
        std::vector<Var> losses;
        for (std::size_t b = 0; b < pcfg.batch_size; ++b) {
            const auto& [obj, label] = pool[rng.uniform_index(pool.size())];
            EpisodeConfig ecfg{cfg.glimpses, std::nullopt};
            Trajectory traj = rollout(tape, vars, pdims, *obj, label, ecfg, actions,
                                      PolicyKind::learned, rng);
            losses.push_back(total_loss(tape, traj, cfg.weights, cfg.entropy_form));
            if (iter + 50 >= pcfg.iterations) {  // accuracy over the tail of training
                recent_reward += traj.reward;
                recent_count += 1;
            }
        }
        Var loss = mean_of(tape, losses);
        GradMap grads = tape.backward(loss);
        params = pcfg.adam ? adam_step(params, grads, pcfg.lr, adam) : sgd_step(params, grads, pcfg.lr);
        if (log && iter % 100 == 0)
            (*log) << "pretrain iter " << iter << " loss " << tape.value(loss).data[0] << "\n";
    }

    PretrainResult out;
    out.params = std::move(params);
    out.train_accuracy = recent_count ? recent_reward / static_cast<double>(recent_count) : 0.0;
    out.categories = categories;
    return out;
}

ParamSet swap_classifier_head(const ParamSet& params, std::size_t num_classes, Rng& rng) {
    ParamSet out = params;
    out.dims.num_classes = num_classes;
    out.tensors["cls_w"] = head_init(params.dims.hidden, num_classes, rng);
    out.tensors["cls_b"] = Tensor::zeros({num_classes});
    return out;
}

EvalResult pretrain_finetune_evaluate(const PretrainResult& pre, const Dataset& ds,
                                      const std::vector<std::int64_t>& test_labels,
                                      const PretrainConfig& pcfg, const MetaConfig& cfg,
                                      const ActionSet& actions, std::uint64_t seed,
                                      std::size_t num_tasks) {
    EvalResult out;
    out.num_tasks = num_tasks;
    out.per_task_accuracy.reserve(num_tasks);
    for (std::size_t i = 0; i < num_tasks; ++i) {
        Task task = sample_test_task(ds, test_labels, TaskFamily::category, cfg, seed, i);

        Rng head_rng(derive_seed(seed, kFinetuneHeadTag, i));
        ParamSet params = swap_classifier_head(pre.params, cfg.ways, head_rng);

        Rng roll_rng(derive_seed(seed, kFinetuneRollTag, i));
        for (std::size_t step = 0; step < pcfg.finetune_steps; ++step) {
            Tape tape;
            ParamVars vars = insert_params(tape, params);
            std::vector<Var> losses;
            for (const auto& ep : task.support) {
                EpisodeConfig ecfg{cfg.glimpses, ep.start};
                Trajectory traj = rollout(tape, vars, params.dims, *ep.object, ep.task_label, ecfg,
                                          actions, PolicyKind::learned, roll_rng);
                losses.push_back(total_loss(tape, traj, cfg.weights, cfg.entropy_form));
            }
            Var loss = mean_of(tape, losses);
            params = sgd_step(params, tape.backward(loss), pcfg.finetune_lr);
        }

        Rng query_rng = test_query_rng(seed, i);
        Tape tape;
        ParamVars vars = insert_params(tape, params);
        std::size_t correct = 0;
        for (const auto& ep : task.query) {
            EpisodeConfig ecfg{cfg.glimpses, ep.start};
            Trajectory traj = rollout(tape, vars, params.dims, *ep.object, ep.task_label, ecfg,
                                      actions, PolicyKind::learned_argmax, query_rng);
            if (traj.reward > 0.5) ++correct;
        }
        out.per_task_accuracy.push_back(static_cast<double>(correct) /
                                        static_cast<double>(task.query.size()));
    }
    double sum = 0.0;
    for (double a : out.per_task_accuracy) sum += a;
    out.accuracy_mean = num_tasks ? sum / static_cast<double>(num_tasks) : 0.0;
    double var = 0.0;
    for (double a : out.per_task_accuracy) var += (a - out.accuracy_mean) * (a - out.accuracy_mean);
    double sd = num_tasks > 1 ? std::sqrt(var / static_cast<double>(num_tasks - 1)) : 0.0;
    out.ci95 = num_tasks > 1 ? 1.96 * sd / std::sqrt(static_cast<double>(num_tasks)) : 0.0;
    return out;
}

}  // namespace mv
