#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "metaview/meta.hpp"

namespace mv {

// Comparison methods sharing the agent's recognition pipeline. Every method
// meta-trains the encoder/RNN/classifier; they differ only in how actions are
// chosen (and random_one in its glimpse budget).
enum class Method {
    metaview,
    random_one_view,    // initial view only (T forced to 1)
    random_multi_view,  // non-learnable uniform action selection
    largest_multi_view, // deterministic largest allowable action
    pretrain_finetune,  // conventional training + per-task finetuning
};

Method method_from_string(const std::string& name);
std::string method_name(Method m);

MethodSpec method_spec(Method m);

// Per-method config adjustments: random_one forces glimpses=1; the
// non-learnable policies train with lambda1 = lambda2 = 0.
MetaConfig method_config(Method m, const MetaConfig& base);

struct PretrainConfig {
    std::size_t iterations = 400;
    std::size_t batch_size = 10;
    double lr = 1e-3;
    std::size_t finetune_steps = 400;
    double finetune_lr = 1e-3;
    bool adam = false;  // follows the outer_optimizer config key
};

struct PretrainResult {
    ParamSet params;          // classifier head sized to the pretrain label count
    double train_accuracy = 0.0;  // sampled-rollout accuracy on the pretrain classes
    std::vector<std::int64_t> categories;
};

// Conventional (non-meta) training of the full agent on every train+val
// category as one big classification problem.
PretrainResult pretrain_classifier(const Dataset& ds, const std::vector<std::int64_t>& categories,
                                   const PretrainConfig& pcfg, const MetaConfig& cfg,
                                   const ActionSet& actions, const AgentDims& dims,
                                   std::uint64_t seed, std::ostream* log = nullptr);

// Swap the classifier head for a fresh N-way one; everything else is copied
// bitwise.
ParamSet swap_classifier_head(const ParamSet& params, std::size_t num_classes, Rng& rng);

// Few-shot evaluation of the pretrained model: per test task, swap in a fresh
// head, finetune on the support set, evaluate the query set (argmax).
EvalResult pretrain_finetune_evaluate(const PretrainResult& pre, const Dataset& ds,
                                      const std::vector<std::int64_t>& test_labels,
                                      const PretrainConfig& pcfg, const MetaConfig& cfg,
                                      const ActionSet& actions, std::uint64_t seed,
                                      std::size_t num_tasks);

}  // namespace mv
