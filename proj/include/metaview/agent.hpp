#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metaview/env.hpp"
#include "metaview/tape.hpp"

namespace mv {

struct AgentDims {
    std::size_t feature_dim = 16;
    std::size_t hidden = 32;
    std::size_t action_embed = 8;
    std::size_t num_actions = 9;
    std::size_t num_classes = 5;

    bool operator==(const AgentDims&) const = default;
};

// Every learnable tensor of the recurrent view-selection agent, keyed by a
// stable name. Parameter order is the map's (lexicographic) order everywhere:
// gradients, updates, checkpoints, finite differences.
struct ParamSet {
    AgentDims dims;
    std::map<std::string, Tensor> tensors;

    // encoder: two affine+tanh layers D -> H -> H
    // act_embed: |actions| x action_embed table
    // fusion: affine+tanh (H + action_embed) -> H
    // rnn: h' = tanh(x W_x + h W_h + b)
    // policy head: affine H -> |actions|; classifier head: affine H -> N
    static ParamSet init(const AgentDims& dims, Rng& rng);

    // All-zero weights; useful for degenerate checks (uniform policy).
    static ParamSet zeros(const AgentDims& dims);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::size_t total_scalars() const;
    // Order-stable flattening used by finite differences and byte hashing.
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    std::uint64_t content_hash() const;
};

using ParamVars = std::map<std::string, Var>;

// Register every tensor of the set as a named tape param. Call once per tape;
// episodes on the same tape share these leaves.
ParamVars insert_params(Tape& tape, const ParamSet& params);

enum class PolicyKind {
    learned,         // sample from the policy head
    learned_argmax,  // argmax of the policy head (evaluation)
    uniform_random,  // ignore the head, sample uniformly
    largest,         // deterministic largest allowable action
    forced,          // scripted action list
};

struct EpisodeConfig {
    std::size_t glimpses = 3;  // T
    std::optional<ViewPointer> initial_view;  // nullopt: uniform random
};

struct Trajectory {
    std::size_t glimpses = 0;
    std::vector<std::size_t> actions;                 // T-1 action indices
    std::vector<Var> step_logprobs;                   // taped log pi(.|s_t), per step t < T
    std::vector<std::vector<double>> action_dists;    // pi(.|s_t) values
    std::vector<ViewPointer> visited;                 // T pointers
    Var final_logits{};                               // taped classifier output
    std::vector<double> final_logits_value;
    std::size_t predicted_label = 0;
    std::size_t true_label = 0;
    double reward = 0.0;  // 1 iff predicted == true

    double mean_policy_entropy() const;
};

// Unroll one episode on the tape. Observations enter as constant leaves, so
// losses built from the returned trajectory differentiate w.r.t. params only.
Trajectory rollout(Tape& tape, const ParamVars& params, const AgentDims& dims,
                   const ObjectInstance& obj, std::size_t task_label, const EpisodeConfig& cfg,
                   const ActionSet& actions, PolicyKind policy, Rng& rng,
                   const std::vector<std::size_t>* forced_actions = nullptr);

// Inverse-CDF sampling over the stable action ordering.
std::size_t sample_action(const std::vector<double>& dist, Rng& rng);

// Lowest index wins ties; documented so evaluation is deterministic.
std::size_t argmax_index(const std::vector<double>& values);

// Deterministic baseline action: maximizes |d_elev| + |d_azim|, ties broken
// toward largest d_azim then largest d_elev.
std::size_t largest_action_index(const ActionSet& actions);

// Parameter checkpoint: versioned container of named tensors + dims echo.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace mv
