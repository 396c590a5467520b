#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "metaview/agent.hpp"
#include "metaview/env.hpp"
#include "metaview/losses.hpp"

namespace mv {

enum class TaskFamily { category, intra_instance, inter_instance };

struct TaskEpisode {
    const ObjectInstance* object = nullptr;
    std::size_t task_label = 0;
    std::optional<ViewPointer> start;  // nullopt: random initial view per rollout
};

// One N-way-K-shot episode bundle with task-local labels.
struct Task {
    TaskFamily family = TaskFamily::category;
    std::size_t ways = 5;
    std::vector<TaskEpisode> support;
    std::vector<TaskEpisode> query;
};

// Disjoint label-id sets for the three phases. Category ids for the category
// and inter-instance families, object ids for intra-instance.
struct SplitSpec {
    std::vector<std::int64_t> train_labels;
    std::vector<std::int64_t> val_labels;
    std::vector<std::int64_t> test_labels;

    void validate() const;  // throws ConfigError on overlap or emptiness
};

struct MetaConfig {
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t query_per_class = 1;
    std::size_t glimpses = 3;
    double inner_lr = 1e-3;
    double outer_lr = 1e-3;
    std::size_t inner_steps = 1;
    std::size_t tasks_per_batch = 2;
    std::size_t iterations_per_epoch = 500;
    std::size_t epochs = 100;
    std::size_t val_tasks = 100;
    LossWeights weights;
    EntropyForm entropy_form = EntropyForm::full;
    bool first_order = true;
    bool reward_baseline = false;  // moving-average REINFORCE baseline
    bool adam_outer = false;       // adaptive-moment outer updates
    bool measure_time = false;     // fill wall_seconds in metrics

    void validate() const;
};

// How episodes are driven during training vs evaluation. The recognition
// pathway is meta-trained for every method; only action selection differs.
struct MethodSpec {
    PolicyKind train_policy = PolicyKind::learned;
    PolicyKind eval_policy = PolicyKind::learned_argmax;
};

Task sample_task(const Dataset& ds, const std::vector<std::int64_t>& labels, TaskFamily family,
                 std::size_t ways, std::size_t shots, std::size_t query_per_class, Rng& rng);

// --- objective-agnostic meta mechanics -------------------------------------

// Builds a scalar loss for the current parameter values on a fresh tape.
using LossBuilder = std::function<Var(Tape&, const ParamVars&)>;

GradMap gradient_of(const ParamSet& params, const LossBuilder& loss);

// theta' = theta - lr * grad, refusing non-finite gradients.
ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr);

// Inner adaptation: `steps` descent steps at alpha, re-invoking the builder
// (fresh rollouts) at each step. steps = 0 returns params unchanged.
ParamSet adapt(const ParamSet& params, const LossBuilder& support_loss, double alpha,
               std::size_t steps);

struct AdamState {
    GradMap m, v;
    std::size_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Adaptive-moment update sharing the sgd_step contract.
ParamSet adam_step(const ParamSet& params, const GradMap& grads, double lr, AdamState& state);

struct TaskObjective {
    LossBuilder support_loss;
    LossBuilder query_loss;
};

struct MetaStepResult {
    ParamSet params;
    double mean_query_loss = 0.0;
};

// One outer update: adapt per task, average the query gradients at the
// adapted parameters (first-order: the adaptation Jacobian is treated as
// identity), then descend at beta. adam, when non-null, switches the outer
// update to adaptive moments.
MetaStepResult first_order_meta_step(const ParamSet& params,
                                     const std::vector<TaskObjective>& tasks, double alpha,
                                     double beta, std::size_t inner_steps, AdamState* adam);

// Verification-only full MAML gradient for one task and one inner step:
// g = gq - alpha * H_support(theta) * gq, with the Hessian-vector product by
// central finite differences of the support gradient. Small nets only.
GradMap maml_second_order_gradient(const ParamSet& params, const LossBuilder& support_loss,
                                   const LossBuilder& query_loss, double alpha,
                                   double hvp_eps = 1e-5);

// --- task-level wrappers ----------------------------------------------------

struct AdaptResult {
    ParamSet params;
    double support_loss = 0.0;
    std::vector<Trajectory> trajectories;  // support rollouts of the final step
};

// Eq.-5-style adaptation on a task's support set: fresh sample-mode rollouts
// per step, mean combined loss, `inner_steps` descent steps at inner_lr.
AdaptResult inner_adapt(const ParamSet& params, const Task& task, const MetaConfig& cfg,
                        const ActionSet& actions, PolicyKind support_policy, Rng& rng,
                        double reward_baseline = 0.0);

struct EpochMetrics {
    std::size_t epoch = 0;
    double meta_train_loss = 0.0;
    double meta_train_acc = 0.0;
    double val_acc_mean = 0.0;
    double val_acc_std = 0.0;
    double mean_policy_entropy = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    ParamSet final_params;
    ParamSet best_params;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
    std::vector<EpochMetrics> history;
};

TrainResult run_meta_training(const Dataset& ds, const SplitSpec& splits, const MetaConfig& cfg,
                              const ActionSet& actions, const AgentDims& dims,
                              std::uint64_t seed, const MethodSpec& method,
                              TaskFamily family, std::ostream* log = nullptr);

struct EvalResult {
    double accuracy_mean = 0.0;
    double ci95 = 0.0;
    std::size_t num_tasks = 0;
    std::vector<double> per_task_accuracy;
};

// MetaTest protocol: per sampled task, adapt on support then run argmax-mode
// (or overridden) query rollouts. Deterministic function of (params, seed).
EvalResult run_meta_test(const ParamSet& params, const Dataset& ds,
                         const std::vector<std::int64_t>& labels, TaskFamily family,
                         const MetaConfig& cfg, const ActionSet& actions,
                         const MethodSpec& method, std::uint64_t seed, std::size_t num_tasks = 600);

// The i-th task of the MetaTest stream for `seed`. Methods evaluated with the
// same seed consume identical task streams, enabling paired comparisons.
Task sample_test_task(const Dataset& ds, const std::vector<std::int64_t>& labels,
                      TaskFamily family, const MetaConfig& cfg, std::uint64_t seed, std::size_t index);

// Rng stream for the i-th test task's query rollouts (paired across methods).
Rng test_query_rng(std::uint64_t seed, std::size_t index);

}  // namespace mv
