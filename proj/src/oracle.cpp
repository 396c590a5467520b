#include "metaview/oracle.hpp"

#include <cmath>

#include "metaview/errors.hpp"

namespace mv {

GradMap finite_diff_grad(const std::function<double(const ParamSet&)>& loss_fn,
                         const ParamSet& params, double h) {
    GradMap out;
    ParamSet probe = params;
    for (auto& [name, t] : probe.tensors) {
        Tensor g = Tensor::zeros(t.shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            double saved = t.data[i];
            t.data[i] = saved + h;
            double fp = loss_fn(probe);
            t.data[i] = saved - h;
            double fm = loss_fn(probe);
            t.data[i] = saved;
            g.data[i] = (fp - fm) / (2.0 * h);
        }
        out[name] = std::move(g);
    }
    return out;
}

double max_rel_error(const GradMap& a, const GradMap& b) {
    double worst = 0.0;
    for (const auto& [name, ta] : a) {
        const Tensor& tb = b.at(name);
        for (std::size_t i = 0; i < ta.size(); ++i)
            worst = std::max(worst, relative_error(ta.data[i], tb.data[i]));
    }
    return worst;
}

EnumerationResult enumerate_expected_reward(const ParamSet& params, const Task& task,
                                            const MetaConfig& cfg, const ActionSet& actions) {
    if (task.query.empty()) throw ContractError("enumerate_expected_reward: no query episodes");
    const std::size_t T = cfg.glimpses;
    double per_episode = 1.0;
    for (std::size_t t = 1; t < T; ++t) {
        per_episode *= static_cast<double>(actions.size());
        if (per_episode * static_cast<double>(task.query.size()) > 1e5)
            throw SizeError("enumeration budget exceeded: |A|^(T-1) * episodes > 1e5");
    }
    std::size_t seq_count = static_cast<std::size_t>(per_episode);

    EnumerationResult result;
    for (const auto& t : params.tensors) result.grad[t.first] = Tensor::zeros(t.second.shape);

    Rng unused(0);  // forced rollouts draw nothing when the start is fixed
    for (const auto& ep : task.query) {
        if (!ep.start)
            throw ContractError("enumerate_expected_reward: episodes need fixed start views");
        for (std::size_t code = 0; code < seq_count; ++code) {
            std::vector<std::size_t> seq(T - 1);
            std::size_t rem = code;
            for (std::size_t t = 0; t + 1 < T; ++t) {
                seq[t] = rem % actions.size();
                rem /= actions.size();
            }
            Tape tape;
            ParamVars vars = insert_params(tape, params);
            EpisodeConfig ecfg{T, ep.start};
            Trajectory traj = rollout(tape, vars, params.dims, *ep.object, ep.task_label, ecfg,
                                      actions, PolicyKind::forced, unused, &seq);
            double logprob = 0.0;
            for (std::size_t t = 0; t + 1 < T; ++t)
                logprob += tape.value(traj.step_logprobs[t]).data[traj.actions[t]];
            double prob = std::exp(logprob);
            result.expected_reward += prob * traj.reward;
            result.sequences += 1;
            if (traj.reward == 0.0) continue;

            // score-function identity, term by term: prob * R * d log prob
            Var lp_sum{};
            for (std::size_t t = 0; t + 1 < T; ++t) {
                Var lp = tape.pick(traj.step_logprobs[t], traj.actions[t]);
                lp_sum = (t == 0) ? lp : tape.add(lp_sum, lp);
            }
            GradMap g = tape.backward(lp_sum);
            double w = prob * traj.reward;
            for (auto& [name, acc] : result.grad) {
                const Tensor& gt = g.at(name);
                for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += w * gt.data[i];
            }
        }
    }
    double inv = 1.0 / static_cast<double>(task.query.size());
    result.expected_reward *= inv;
    for (auto& [name, acc] : result.grad)
        for (auto& x : acc.data) x *= inv;
    return result;
}

double nearest_prototype_accuracy(const Task& task) {
    if (task.support.empty() || task.query.empty())
        throw ContractError("nearest_prototype_accuracy: empty task");
    std::size_t correct = 0;
    for (const auto& q : task.query) {
        double best = 0.0;
        std::size_t best_label = 0;
        bool first = true;
        for (const auto& s : task.support) {
            const auto& qa = q.object->grid.features;
            const auto& sa = s.object->grid.features;
            double d2 = 0.0;
            for (std::size_t i = 0; i < qa.size(); ++i) {
                double d = qa[i] - sa[i];
                d2 += d * d;
            }
            if (first || d2 < best) {
                best = d2;
                best_label = s.task_label;
                first = false;
            }
        }
        if (best_label == q.task_label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(task.query.size());
}

}  // namespace mv
