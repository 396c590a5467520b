#pragma once

#include <functional>

#include "metaview/meta.hpp"

namespace mv {

// Independent brute-force references used by tests. None of these rely on
// Tape::backward for the quantity they check.

// Central finite differences per coordinate; loss_fn must be deterministic
// (drive rollouts in forced mode).
GradMap finite_diff_grad(const std::function<double(const ParamSet&)>& loss_fn,
                         const ParamSet& params, double h = 1e-5);

double max_rel_error(const GradMap& a, const GradMap& b);

struct EnumerationResult {
    double expected_reward = 0.0;
    GradMap grad;  // exact d E[R] / d theta via the score-function identity
    std::size_t sequences = 0;
};

// Exhaustive enumeration of all action sequences for every query episode of
// the task: E[R] = mean_episodes sum_seq prob(seq) * R(seq), and its exact
// policy gradient sum_seq prob * R * grad(log prob). The combinatorial budget
// |A|^(T-1) * episodes is capped at 1e5.
EnumerationResult enumerate_expected_reward(const ParamSet& params, const Task& task,
                                            const MetaConfig& cfg, const ActionSet& actions);

// Full-grid nearest-support classifier over a task's query set; the accuracy
// reference an all-seeing observer achieves.
double nearest_prototype_accuracy(const Task& task);

}  // namespace mv
