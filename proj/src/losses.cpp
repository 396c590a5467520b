#include "metaview/losses.hpp"

#include "metaview/errors.hpp"

namespace mv {

Var classification_loss(Tape& tape, const Trajectory& traj) {
    if (traj.final_logits_value.empty()) throw ContractError("classification_loss: no final logits");
    Var logprobs = tape.log_softmax(traj.final_logits);
    return tape.scale(tape.pick(logprobs, traj.true_label), -1.0);
}

Var policy_loss(Tape& tape, const Trajectory& traj, double baseline) {
    const std::size_t T = traj.glimpses;
    if (T < 2) return tape.constant(Tensor::scalar(0.0));
    Var acc = tape.pick(traj.step_logprobs[0], traj.actions[0]);
    for (std::size_t t = 1; t < T - 1; ++t)
        acc = tape.add(acc, tape.pick(traj.step_logprobs[t], traj.actions[t]));
    double advantage = traj.reward - baseline;  // constant: no gradient through R
    return tape.scale(acc, -advantage / static_cast<double>(T - 1));
}

Var negative_entropy(Tape& tape, Var logprobs) {
    Var probs = tape.exp(logprobs);
    return tape.sum(tape.mul(probs, logprobs));
}

Var entropy_loss(Tape& tape, const Trajectory& traj, EntropyForm form) {
    const std::size_t T = traj.glimpses;
    if (T < 2) return tape.constant(Tensor::scalar(0.0));
    Var acc{};
    for (std::size_t t = 0; t < T - 1; ++t) {
        Var term;
        if (form == EntropyForm::full) {
            term = negative_entropy(tape, traj.step_logprobs[t]);
        } else {
            Var lp = tape.pick(traj.step_logprobs[t], traj.actions[t]);
            term = tape.mul(tape.exp(lp), lp);
        }
        acc = (t == 0) ? term : tape.add(acc, term);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(T - 1));
}

Var total_loss(Tape& tape, const Trajectory& traj, const LossWeights& w, EntropyForm form,
               double baseline) {
    Var loss = classification_loss(tape, traj);
    if (traj.glimpses >= 2) {
        loss = tape.add(loss, tape.scale(policy_loss(tape, traj, baseline), w.lambda1));
        loss = tape.add(loss, tape.scale(entropy_loss(tape, traj, form), w.lambda2));
    }
    return loss;
}

Var mean_of(Tape& tape, const std::vector<Var>& scalars) {
    if (scalars.empty()) throw ContractError("mean_of: empty list");
    Var acc = scalars[0];
    for (std::size_t i = 1; i < scalars.size(); ++i) acc = tape.add(acc, scalars[i]);
    return scalars.size() == 1 ? acc : tape.scale(acc, 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace mv
