#include "metaview/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "metaview/errors.hpp"

namespace mv {

namespace {

// Fixed stream tags; every rng in the meta loop derives from
// (seed, tag, epoch, iteration, task, ...) so schedules are reorderable.
constexpr std::uint64_t kInitTag = 0x01;
constexpr std::uint64_t kTrainTaskTag = 0x02;
constexpr std::uint64_t kTrainRollTag = 0x03;
constexpr std::uint64_t kValTag = 0x04;
constexpr std::uint64_t kTestTag = 0x05;

}  // namespace

void SplitSpec::validate() const {
    if (train_labels.empty() || val_labels.empty() || test_labels.empty())
        throw ConfigError("split: every phase needs at least one label");
    std::set<std::int64_t> seen;
    auto check = [&](const std::vector<std::int64_t>& v, const char* phase) {
        for (auto id : v) {
            if (!seen.insert(id).second)
                throw ConfigError(std::string("split: label ") + std::to_string(id) +
                                  " appears in more than one phase (" + phase + ")");
        }
    };
    check(train_labels, "train");
    check(val_labels, "validation");
    check(test_labels, "test");
}

void MetaConfig::validate() const {
    if (ways < 2) throw ConfigError("ways must be >= 2");
    if (shots < 1) throw ConfigError("shots must be >= 1");
    if (query_per_class < 1) throw ConfigError("query_per_class must be >= 1");
    if (glimpses < 1) throw ConfigError("glimpses must be >= 1");
    if (inner_lr < 0 || outer_lr < 0) throw ConfigError("learning rates must be >= 0");
    if (tasks_per_batch < 1 || iterations_per_epoch < 1 || epochs < 1)
        throw ConfigError("schedule counts must be >= 1");
    if (weights.lambda1 < 0 || weights.lambda2 < 0) throw ConfigError("loss weights must be >= 0");
}

// ---------------------------------------------------------------------------
// Task sampling
// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> choose_labels(const std::vector<std::int64_t>& labels, std::size_t n,
                                        Rng& rng, const char* what) {
    if (labels.size() < n)
        throw ContractError(std::string("sample_task: need ") + std::to_string(n) + " " + what +
                            ", split has " + std::to_string(labels.size()));
    auto idx = rng.sample_without_replacement(labels.size(), n);
    std::vector<std::int64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = labels[idx[i]];
    return out;
}

ViewPointer random_pointer(const GridGeometry& g, Rng& rng) {
    return ViewPointer{rng.uniform_index(g.elevations), rng.uniform_index(g.azimuths)};
}

// Distinct initial pointers for the phases of an instance-level task.
std::vector<ViewPointer> distinct_pointers(const GridGeometry& g, std::size_t n, Rng& rng) {
    if (n > g.cells()) throw ContractError("sample_task: more phases than grid cells");
    std::vector<ViewPointer> out;
    while (out.size() < n) {
        ViewPointer p = random_pointer(g, rng);
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    return out;
}

Task sample_instance_task(const Dataset& ds, const std::vector<std::int64_t>& objects,
                          TaskFamily family, std::size_t ways, std::size_t shots,
                          std::size_t query_per_class, Rng& rng) {
    if (shots != 1)
        throw ContractError("sample_task: instance-level families are 1-shot (each label is one object)");
    Task task;
    task.family = family;
    task.ways = ways;
    auto chosen = choose_labels(objects, ways, rng, "instances");
    // One support pointer plus query_per_class query pointers, all distinct.
    auto pointers = distinct_pointers(ds.geometry, 1 + query_per_class, rng);
    for (std::size_t label = 0; label < ways; ++label) {
        const ObjectInstance* obj = &ds.object_by_id(chosen[label]);
        task.support.push_back(TaskEpisode{obj, label, pointers[0]});
        for (std::size_t q = 0; q < query_per_class; ++q)
            task.query.push_back(TaskEpisode{obj, label, pointers[1 + q]});
    }
    return task;
}

}  // namespace

Task sample_task(const Dataset& ds, const std::vector<std::int64_t>& labels, TaskFamily family,
                 std::size_t ways, std::size_t shots, std::size_t query_per_class, Rng& rng) {
    if (family == TaskFamily::category) {
        Task task;
        task.family = family;
        task.ways = ways;
        auto categories = choose_labels(labels, ways, rng, "categories");
        for (std::size_t label = 0; label < ways; ++label) {
            auto pool = ds.objects_of_category(categories[label]);
            std::size_t need = shots + query_per_class;
            if (pool.size() < need)
                throw ContractError("sample_task: category " + std::to_string(categories[label]) +
                                    " has " + std::to_string(pool.size()) + " instances, need " +
                                    std::to_string(need));
            auto picks = rng.sample_without_replacement(pool.size(), need);
            for (std::size_t s = 0; s < shots; ++s)
                task.support.push_back(TaskEpisode{pool[picks[s]], label, std::nullopt});
            for (std::size_t q = 0; q < query_per_class; ++q)
                task.query.push_back(TaskEpisode{pool[picks[shots + q]], label, std::nullopt});
        }
        return task;
    }
    if (family == TaskFamily::intra_instance)
        return sample_instance_task(ds, labels, family, ways, shots, query_per_class, rng);

    // inter_instance: one category first, then its instances as labels.
    auto category = choose_labels(labels, 1, rng, "categories")[0];
    std::vector<std::int64_t> object_ids;
    for (const auto* obj : ds.objects_of_category(category)) object_ids.push_back(obj->object_id);
    return sample_instance_task(ds, object_ids, family, ways, shots, query_per_class, rng);
}

// ---------------------------------------------------------------------------
// Objective-agnostic mechanics
// ---------------------------------------------------------------------------

GradMap gradient_of(const ParamSet& params, const LossBuilder& loss) {
    Tape tape;
    ParamVars vars = insert_params(tape, params);
    Var l = loss(tape, vars);
    return tape.backward(l);
}

ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr) {
    ParamSet out = params;
    for (auto& [name, t] : out.tensors) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] -= lr * g.data[i];
    }
    return out;
}

ParamSet adapt(const ParamSet& params, const LossBuilder& support_loss, double alpha,
               std::size_t steps) {
    ParamSet current = params;
    for (std::size_t s = 0; s < steps; ++s)
        current = sgd_step(current, gradient_of(current, support_loss), alpha);
    return current;
}

namespace {

void add_into(GradMap& acc, const GradMap& g) {
    for (const auto& [name, t] : g) {
        auto it = acc.find(name);
        if (it == acc.end()) {
            acc[name] = t;
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) it->second.data[i] += t.data[i];
        }
    }
}

void scale_grads(GradMap& g, double s) {
    for (auto& [name, t] : g)
        for (auto& x : t.data) x *= s;
}

}  // namespace

ParamSet adam_step(const ParamSet& params, const GradMap& grads, double lr, AdamState& st) {
    st.t += 1;
    ParamSet out = params;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (auto& [name, t] : out.tensors) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
        Tensor& m = st.m.try_emplace(name, Tensor::zeros(g.shape)).first->second;
        Tensor& v = st.v.try_emplace(name, Tensor::zeros(g.shape)).first->second;
        for (std::size_t i = 0; i < t.size(); ++i) {
            m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g.data[i];
            v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g.data[i] * g.data[i];
            double mh = m.data[i] / bc1;
            double vh = v.data[i] / bc2;
            t.data[i] -= lr * mh / (std::sqrt(vh) + st.eps);
        }
    }
    return out;
}

MetaStepResult first_order_meta_step(const ParamSet& params,
                                     const std::vector<TaskObjective>& tasks, double alpha,
                                     double beta, std::size_t inner_steps, AdamState* adam) {
    if (tasks.empty()) throw ContractError("meta step: empty task batch");
    GradMap mean_grad;
    double mean_loss = 0.0;
    for (const auto& task : tasks) {
        ParamSet adapted = adapt(params, task.support_loss, alpha, inner_steps);
        Tape tape;
        ParamVars vars = insert_params(tape, adapted);
        Var loss = task.query_loss(tape, vars);
        mean_loss += tape.value(loss).data[0];
        add_into(mean_grad, tape.backward(loss));
    }
    double inv = 1.0 / static_cast<double>(tasks.size());
    scale_grads(mean_grad, inv);
    mean_loss *= inv;
    ParamSet updated =
        adam ? adam_step(params, mean_grad, beta, *adam) : sgd_step(params, mean_grad, beta);
    return MetaStepResult{std::move(updated), mean_loss};
}

GradMap maml_second_order_gradient(const ParamSet& params, const LossBuilder& support_loss,
                                   const LossBuilder& query_loss, double alpha, double hvp_eps) {
    ParamSet adapted = adapt(params, support_loss, alpha, 1);
    GradMap gq = gradient_of(adapted, query_loss);

    // H_support(theta) * gq by central differences of the support gradient.
    std::vector<double> flat = params.flatten();
    std::vector<double> dir;
    dir.reserve(flat.size());
    for (const auto& [name, t] : params.tensors) {
        const Tensor& g = gq.at(name);
        dir.insert(dir.end(), g.data.begin(), g.data.end());
    }
    double norm = 0.0;
    for (double x : dir) norm += x * x;
    norm = std::sqrt(norm);
    GradMap result = gq;
    if (norm == 0.0) return result;

    ParamSet plus = params, minus = params;
    std::vector<double> fp = flat, fm = flat;
    double step = hvp_eps / norm;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        fp[i] = flat[i] + step * dir[i];
        fm[i] = flat[i] - step * dir[i];
    }
    plus.unflatten(fp);
    minus.unflatten(fm);
    GradMap gp = gradient_of(plus, support_loss);
    GradMap gm = gradient_of(minus, support_loss);
    for (auto& [name, t] : result) {
        const Tensor& p = gp.at(name);
        const Tensor& m = gm.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            double hv = (p.data[i] - m.data[i]) / (2.0 * step);  // (H * gq)[i] * norm / norm
            t.data[i] -= alpha * hv;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Task-level wrappers
// ---------------------------------------------------------------------------

namespace {

struct EpisodeStats {
    double reward_sum = 0.0;
    double entropy_sum = 0.0;
    std::size_t episodes = 0;
};

// Rolls out every episode of `episodes` on the tape and returns the mean
// combined loss. Trajectories are appended to sink if given.
Var episodes_loss(Tape& tape, const ParamVars& vars, const AgentDims& dims,
                  const std::vector<TaskEpisode>& episodes, const MetaConfig& cfg,
                  const ActionSet& actions, PolicyKind policy, Rng& rng, double baseline,
                  std::vector<Trajectory>* sink, EpisodeStats* stats) {
    std::vector<Var> losses;
    losses.reserve(episodes.size());
    for (const auto& ep : episodes) {
        EpisodeConfig ecfg{cfg.glimpses, ep.start};
        Trajectory traj =
            rollout(tape, vars, dims, *ep.object, ep.task_label, ecfg, actions, policy, rng);
        losses.push_back(total_loss(tape, traj, cfg.weights, cfg.entropy_form, baseline));
        if (stats) {
            stats->reward_sum += traj.reward;
            stats->entropy_sum += traj.mean_policy_entropy();
            stats->episodes += 1;
        }
        if (sink) sink->push_back(std::move(traj));
    }
    return mean_of(tape, losses);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

AdaptResult inner_adapt(const ParamSet& params, const Task& task, const MetaConfig& cfg,
                        const ActionSet& actions, PolicyKind support_policy, Rng& rng,
                        double reward_baseline) {
    if (task.support.empty()) throw ContractError("inner_adapt: empty support set");
    AdaptResult result;
    ParamSet current = params;
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
        Tape tape;
        ParamVars vars = insert_params(tape, current);
        std::vector<Trajectory> trajs;
        Var loss = episodes_loss(tape, vars, params.dims, task.support, cfg, actions,
                                 support_policy, rng, reward_baseline, &trajs, nullptr);
        result.support_loss = tape.value(loss).data[0];
        result.trajectories = std::move(trajs);
        current = sgd_step(current, tape.backward(loss), cfg.inner_lr);
    }
    if (cfg.inner_steps == 0) {
        // Still report the support loss so callers can log it.
        Tape tape;
        ParamVars vars = insert_params(tape, current);
        Var loss = episodes_loss(tape, vars, params.dims, task.support, cfg, actions,
                                 support_policy, rng, reward_baseline, &result.trajectories, nullptr);
        result.support_loss = tape.value(loss).data[0];
    }
    result.params = std::move(current);
    return result;
}

TrainResult run_meta_training(const Dataset& ds, const SplitSpec& splits, const MetaConfig& cfg,
                              const ActionSet& actions, const AgentDims& dims,
                              std::uint64_t seed, const MethodSpec& method,
                              TaskFamily family, std::ostream* log) {
    cfg.validate();
    splits.validate();

    Rng init_rng(derive_seed(seed, kInitTag));
    ParamSet params = ParamSet::init(dims, init_rng);

    AdamState adam;
    AdamState* adam_ptr = cfg.adam_outer ? &adam : nullptr;
    double baseline_ema = 0.0;
    bool baseline_primed = false;

    TrainResult result;
    result.best_val_acc = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double epoch_loss = 0.0;
        EpisodeStats epoch_stats;

        for (std::size_t iter = 1; iter <= cfg.iterations_per_epoch; ++iter) {
            double baseline = cfg.reward_baseline && baseline_primed ? baseline_ema : 0.0;

            EpisodeStats iter_stats;
            std::vector<TaskObjective> objectives;
            std::vector<Rng> rolls;
            objectives.reserve(cfg.tasks_per_batch);
            rolls.reserve(cfg.tasks_per_batch);
            std::vector<Task> tasks(cfg.tasks_per_batch);
            auto* stats = &iter_stats;
            for (std::size_t k = 0; k < cfg.tasks_per_batch; ++k) {
                Rng task_rng(derive_seed(seed, kTrainTaskTag, epoch, iter, k));
                tasks[k] = sample_task(ds, splits.train_labels, family, cfg.ways, cfg.shots,
                                       cfg.query_per_class, task_rng);
                rolls.emplace_back(derive_seed(seed, kTrainRollTag, epoch, iter, k));
                Task* task = &tasks[k];
                Rng* roll = &rolls.back();
                objectives.push_back(TaskObjective{
                    [&, task, roll, baseline](Tape& tape, const ParamVars& vars) {
                        return episodes_loss(tape, vars, dims, task->support, cfg, actions,
                                             method.train_policy, *roll, baseline, nullptr, nullptr);
                    },
                    [&, task, roll, baseline, stats](Tape& tape, const ParamVars& vars) {
                        return episodes_loss(tape, vars, dims, task->query, cfg, actions,
                                             method.train_policy, *roll, baseline, nullptr, stats);
                    }});
            }

            MetaStepResult step = first_order_meta_step(params, objectives, cfg.inner_lr,
                                                        cfg.outer_lr, cfg.inner_steps, adam_ptr);
            params = std::move(step.params);
            epoch_loss += step.mean_query_loss;

            epoch_stats.reward_sum += iter_stats.reward_sum;
            epoch_stats.entropy_sum += iter_stats.entropy_sum;
            epoch_stats.episodes += iter_stats.episodes;

            if (cfg.reward_baseline && iter_stats.episodes > 0) {
                double batch_reward = iter_stats.reward_sum / static_cast<double>(iter_stats.episodes);
                baseline_ema = baseline_primed ? 0.9 * baseline_ema + 0.1 * batch_reward : batch_reward;
                baseline_primed = true;
            }
        }

        // Validation: adapt + argmax-mode (or overridden) query rollouts.
        MetaConfig val_cfg = cfg;
        EvalResult val = run_meta_test(params, ds, splits.val_labels, family, val_cfg, actions,
                                       method, derive_seed(seed, kValTag, epoch), cfg.val_tasks);

        EpochMetrics row;
        row.epoch = epoch;
        row.meta_train_loss = epoch_loss / static_cast<double>(cfg.iterations_per_epoch);
        row.meta_train_acc =
            epoch_stats.episodes ? epoch_stats.reward_sum / static_cast<double>(epoch_stats.episodes) : 0.0;
        row.val_acc_mean = val.accuracy_mean;
        row.val_acc_std = stddev(val.per_task_accuracy, val.accuracy_mean);
        row.mean_policy_entropy =
            epoch_stats.episodes ? epoch_stats.entropy_sum / static_cast<double>(epoch_stats.episodes) : 0.0;
        if (cfg.measure_time) {
            auto t1 = std::chrono::steady_clock::now();
            row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        }
        result.history.push_back(row);

        if (val.accuracy_mean > result.best_val_acc) {
            result.best_val_acc = val.accuracy_mean;
            result.best_epoch = epoch;
            result.best_params = params;
        }
        if (log)
            (*log) << "epoch " << epoch << " train_loss " << row.meta_train_loss << " train_acc "
                   << row.meta_train_acc << " val_acc " << row.val_acc_mean << " entropy "
                   << row.mean_policy_entropy << "\n";
    }

    result.final_params = std::move(params);
    if (result.best_val_acc < 0.0) {
        result.best_params = result.final_params;
        result.best_epoch = cfg.epochs;
    }
    return result;
}

Task sample_test_task(const Dataset& ds, const std::vector<std::int64_t>& labels,
                      TaskFamily family, const MetaConfig& cfg, std::uint64_t seed, std::size_t index) {
    Rng task_rng(derive_seed(seed, kTestTag, index, 0));
    return sample_task(ds, labels, family, cfg.ways, cfg.shots, cfg.query_per_class, task_rng);
}

Rng test_query_rng(std::uint64_t seed, std::size_t index) {
    return Rng(derive_seed(seed, kTestTag, index, 2));
}

EvalResult run_meta_test(const ParamSet& params, const Dataset& ds,
                         const std::vector<std::int64_t>& labels, TaskFamily family,
                         const MetaConfig& cfg, const ActionSet& actions,
                         const MethodSpec& method, std::uint64_t seed, std::size_t num_tasks) {
    EvalResult out;
    out.num_tasks = num_tasks;
    out.per_task_accuracy.reserve(num_tasks);
    for (std::size_t i = 0; i < num_tasks; ++i) {
        Task task = sample_test_task(ds, labels, family, cfg, seed, i);

        Rng adapt_rng(derive_seed(seed, kTestTag, i, 1));
        AdaptResult adapted = inner_adapt(params, task, cfg, actions, method.train_policy, adapt_rng);

        Rng query_rng = test_query_rng(seed, i);
        Tape tape;
        ParamVars vars = insert_params(tape, adapted.params);
        std::size_t correct = 0;
        for (const auto& ep : task.query) {
            EpisodeConfig ecfg{cfg.glimpses, ep.start};
            Trajectory traj = rollout(tape, vars, params.dims, *ep.object, ep.task_label, ecfg,
                                      actions, method.eval_policy, query_rng);
            if (traj.reward > 0.5) ++correct;
        }
        out.per_task_accuracy.push_back(static_cast<double>(correct) /
                                        static_cast<double>(task.query.size()));
    }
    out.accuracy_mean = mean(out.per_task_accuracy);
    double sd = stddev(out.per_task_accuracy, out.accuracy_mean);
    out.ci95 = num_tasks > 1 ? 1.96 * sd / std::sqrt(static_cast<double>(num_tasks)) : 0.0;
    return out;
}

}  // namespace mv
