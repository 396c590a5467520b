#include "metaview/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "metaview/errors.hpp"

namespace mv {

namespace {

// Gain-preserving uniform init for the tanh pathway: +-sqrt(6/(fan_in+fan_out)).
Tensor affine_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (auto& x : w.data) x = rng.uniform(-bound, bound);
    return w;
}

}  // namespace

ParamSet ParamSet::init(const AgentDims& dims, Rng& rng) {
    ParamSet p;
    p.dims = dims;
    const std::size_t D = dims.feature_dim, H = dims.hidden, Ha = dims.action_embed;
    p.tensors["enc1_w"] = affine_init(D, H, rng);
    p.tensors["enc1_b"] = Tensor::zeros({H});
    p.tensors["enc2_w"] = affine_init(H, H, rng);
    p.tensors["enc2_b"] = Tensor::zeros({H});
    Tensor embed = Tensor::zeros({dims.num_actions, Ha});
    for (auto& x : embed.data) x = rng.normal(0.0, 0.01);
    p.tensors["act_embed"] = std::move(embed);
    p.tensors["fusion_w"] = affine_init(H + Ha, H, rng);
    p.tensors["fusion_b"] = Tensor::zeros({H});
    p.tensors["rnn_wx"] = affine_init(H, H, rng);
    p.tensors["rnn_wh"] = affine_init(H, H, rng);
    p.tensors["rnn_b"] = Tensor::zeros({H});
    p.tensors["policy_w"] = affine_init(H, dims.num_actions, rng);
    p.tensors["policy_b"] = Tensor::zeros({dims.num_actions});
    p.tensors["cls_w"] = affine_init(H, dims.num_classes, rng);
    p.tensors["cls_b"] = Tensor::zeros({dims.num_classes});
    return p;
}

ParamSet ParamSet::zeros(const AgentDims& dims) {
    Rng rng(0);
    ParamSet p = init(dims, rng);
    for (auto& [name, t] : p.tensors)
        std::fill(t.data.begin(), t.data.end(), 0.0);
    return p;
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IndexError("no parameter named " + name);
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IndexError("no parameter named " + name);
    return it->second;
}

std::size_t ParamSet::total_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> out;
    out.reserve(total_scalars());
    for (const auto& [name, t] : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

void ParamSet::unflatten(const std::vector<double>& flat) {
    std::size_t off = 0;
    for (auto& [name, t] : tensors) {
        if (off + t.size() > flat.size()) throw ContractError("unflatten: vector too short");
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data.begin());
        off += t.size();
    }
    if (off != flat.size()) throw ContractError("unflatten: vector too long");
}

std::uint64_t ParamSet::content_hash() const {
    std::uint64_t h = 0x811c9dc5ULL;
    for (const auto& [name, t] : tensors) {
        for (char c : name) h = splitmix64(h ^ static_cast<std::uint64_t>(c));
        for (double x : t.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof(bits));
            h = splitmix64(h ^ bits);
        }
    }
    return h;
}

ParamVars insert_params(Tape& tape, const ParamSet& params) {
    ParamVars vars;
    for (const auto& [name, t] : params.tensors) vars[name] = tape.param(name, t);
    return vars;
}

std::size_t sample_action(const std::vector<double>& dist, Rng& rng) {
    double total = 0.0;
    for (double p : dist) total += p;
    if (std::fabs(total - 1.0) > 1e-8)
        throw ContractError("sample_action: distribution sums to " + std::to_string(total));
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        acc += dist[i];
        if (u < acc) return i;
    }
    return dist.size() - 1;
}

std::size_t argmax_index(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

std::size_t largest_action_index(const ActionSet& actions) {
    auto key = [](const Action& a) {
        return std::tuple<int, int, int>(std::abs(a.d_elev) + std::abs(a.d_azim), a.d_azim, a.d_elev);
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < actions.size(); ++i)
        if (key(actions.actions[i]) > key(actions.actions[best])) best = i;
    return best;
}

double Trajectory::mean_policy_entropy() const {
    if (action_dists.empty()) return 0.0;
    double total = 0.0;
    for (const auto& dist : action_dists) {
        double h = 0.0;
        for (double p : dist)
            if (p > 0.0) h -= p * std::log(p);
        total += h;
    }
    return total / static_cast<double>(action_dists.size());
}

Trajectory rollout(Tape& tape, const ParamVars& params, const AgentDims& dims,
                   const ObjectInstance& obj, std::size_t task_label, const EpisodeConfig& cfg,
                   const ActionSet& actions, PolicyKind policy, Rng& rng,
                   const std::vector<std::size_t>* forced_actions) {
    if (cfg.glimpses < 1) throw ContractError("rollout: glimpse budget must be >= 1");
    if (task_label >= dims.num_classes) throw IndexError("rollout: task label out of range");
    if (policy == PolicyKind::forced) {
        if (!forced_actions || forced_actions->size() != cfg.glimpses - 1)
            throw ContractError("rollout: forced mode needs exactly T-1 actions");
        for (std::size_t a : *forced_actions)
            if (a >= actions.size()) throw IndexError("rollout: forced action index out of range");
    }

    const GridGeometry& geom = obj.grid.geometry;
    const std::size_t T = cfg.glimpses;

    Trajectory traj;
    traj.glimpses = T;
    traj.true_label = task_label;

    ViewPointer pos = cfg.initial_view
                          ? *cfg.initial_view
                          : ViewPointer{rng.uniform_index(geom.elevations), rng.uniform_index(geom.azimuths)};
    std::size_t prev_action = actions.stay_index();

    auto P = [&](const char* name) { return params.at(name); };

    Var h = tape.constant(Tensor::zeros({dims.hidden}));
    for (std::size_t t = 1; t <= T; ++t) {
        traj.visited.push_back(pos);
        Observation obs = observe(obj, pos, prev_action);

        Var x = tape.constant(Tensor::vector(std::move(obs.features)));
        Var e1 = tape.tanh(tape.add(tape.matmul(x, P("enc1_w")), P("enc1_b")));
        Var e2 = tape.tanh(tape.add(tape.matmul(e1, P("enc2_w")), P("enc2_b")));
        Var a_emb = tape.gather_row(P("act_embed"), obs.prev_action_index);
        Var fused = tape.tanh(tape.add(tape.matmul(tape.concat(e2, a_emb), P("fusion_w")), P("fusion_b")));
        h = tape.tanh(tape.add(tape.add(tape.matmul(fused, P("rnn_wx")), tape.matmul(h, P("rnn_wh"))), P("rnn_b")));

        if (t < T) {
            Var logits = tape.add(tape.matmul(h, P("policy_w")), P("policy_b"));
            Var logprobs = tape.log_softmax(logits);
            const Tensor& lp = tape.value(logprobs);
            std::vector<double> dist(lp.data.size());
            for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = std::exp(lp.data[i]);

            std::size_t a;
            switch (policy) {
                case PolicyKind::learned: a = sample_action(dist, rng); break;
                case PolicyKind::learned_argmax: a = argmax_index(dist); break;
                case PolicyKind::uniform_random: a = rng.uniform_index(actions.size()); break;
                case PolicyKind::largest: a = largest_action_index(actions); break;
                case PolicyKind::forced: a = (*forced_actions)[t - 1]; break;
                default: throw ContractError("rollout: unknown policy kind");
            }

            traj.step_logprobs.push_back(logprobs);
            traj.action_dists.push_back(std::move(dist));
            traj.actions.push_back(a);
            pos = apply_action(pos, actions.actions[a], geom);
            prev_action = a;
        } else {
            Var logits = tape.add(tape.matmul(h, P("cls_w")), P("cls_b"));
            traj.final_logits = logits;
            traj.final_logits_value = tape.value(logits).data;
            traj.predicted_label = argmax_index(traj.final_logits_value);
            traj.reward = traj.predicted_label == traj.true_label ? 1.0 : 0.0;
        }
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "MVCKPT" magic, u16 version, dims echo, named tensors.
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[6] = {'M', 'V', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kCkptVersion = 1;

template <typename T>
void wr(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("checkpoint truncated");
    return v;
}

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kCkptMagic, sizeof(kCkptMagic));
    wr(os, kCkptVersion);
    wr(os, static_cast<std::uint32_t>(params.dims.feature_dim));
    wr(os, static_cast<std::uint32_t>(params.dims.hidden));
    wr(os, static_cast<std::uint32_t>(params.dims.action_embed));
    wr(os, static_cast<std::uint32_t>(params.dims.num_actions));
    wr(os, static_cast<std::uint32_t>(params.dims.num_classes));
    wr(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) {
        wr(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        wr(os, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape) wr(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[6] = {};
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw VersionError("not a checkpoint file (bad magic): " + path);
    auto version = rd<std::uint16_t>(is);
    if (version != kCkptVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    ParamSet p;
    p.dims.feature_dim = rd<std::uint32_t>(is);
    p.dims.hidden = rd<std::uint32_t>(is);
    p.dims.action_embed = rd<std::uint32_t>(is);
    p.dims.num_actions = rd<std::uint32_t>(is);
    p.dims.num_classes = rd<std::uint32_t>(is);
    auto count = rd<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = rd<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        auto rank = rd<std::uint8_t>(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = rd<std::uint64_t>(is);
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw ParseError("checkpoint truncated in tensor data");
        p.tensors[name] = std::move(t);
    }
    return p;
}

}  // namespace mv
