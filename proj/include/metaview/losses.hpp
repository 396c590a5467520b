#pragma once

#include <vector>

#include "metaview/agent.hpp"
#include "metaview/tape.hpp"

namespace mv {

struct LossWeights {
    double lambda1 = 10.0;   // policy loss weight
    double lambda2 = 0.003;  // entropy loss weight
};

// Which action probabilities enter the negative-entropy term: the full
// per-step distribution, or only the sampled action's probability.
enum class EntropyForm { full, sampled };

// Cross entropy of the final classifier output against the task-local label.
Var classification_loss(Tape& tape, const Trajectory& traj);

// Score-function surrogate: -(1/(T-1)) sum_t log pi(a_t|s_t) * (R - baseline).
// The return (and baseline) are constants on the tape. Zero when T = 1.
Var policy_loss(Tape& tape, const Trajectory& traj, double baseline = 0.0);

// Mean per-step negative policy entropy; in [-ln|A|, 0]. Zero when T = 1.
Var entropy_loss(Tape& tape, const Trajectory& traj, EntropyForm form = EntropyForm::full);

// Negative entropy of one step given taped log-probabilities.
Var negative_entropy(Tape& tape, Var logprobs);

// cls + lambda1 * policy + lambda2 * entropy.
Var total_loss(Tape& tape, const Trajectory& traj, const LossWeights& w,
               EntropyForm form = EntropyForm::full, double baseline = 0.0);

// Mean of per-episode scalars (support-set / batch losses).
Var mean_of(Tape& tape, const std::vector<Var>& scalars);

}  // namespace mv
