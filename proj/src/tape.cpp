#include "metaview/tape.hpp"

#include <algorithm>
#include <cmath>

#include "metaview/errors.hpp"

namespace mv {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = requires_grad ? std::move(backward_fn) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& delta) {
    accumulate_scaled(id, delta.data.data(), delta.size(), 1.0);
}

void Tape::accumulate_scaled(std::size_t id, const double* delta, std::size_t n, double s) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (!node.grad_set) {
        node.grad = Tensor::zeros(node.value.shape);
        node.grad_set = true;
    }
    double* g = node.grad.data.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += s * delta[i];
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const std::string& name, Tensor value) {
    Var v = push(std::move(value), true, nullptr);
    params_.emplace_back(name, v.id);
    return v;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (tb.rank() != 2) throw DimensionError("matmul: right operand must be rank-2, got " + tb.shape_str());
    if (ta.rank() != 1 && ta.rank() != 2)
        throw DimensionError("matmul: left operand must be rank-1 or rank-2, got " + ta.shape_str());
    std::size_t m = ta.rank() == 2 ? ta.shape[0] : 1;
    std::size_t k = ta.rank() == 2 ? ta.shape[1] : ta.shape[0];
    if (k != tb.shape[0])
        throw DimensionError("matmul: inner dims disagree " + ta.shape_str() + " vs " + tb.shape_str());
    std::size_t n = tb.shape[1];

    Tensor out = ta.rank() == 2 ? Tensor::zeros({m, n}) : Tensor::zeros({n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = ta.data[i * k + p];
            if (av == 0.0) continue;
            const double* brow = tb.data.data() + p * n;
            double* orow = out.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }

    bool rg = wants_grad(a) || wants_grad(b);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), rg, [a, b, m, k, n, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& ta2 = t.value(a);
        const Tensor& tb2 = t.value(b);
        if (t.wants_grad(a)) {
            // a.grad += g . b^T
            Tensor da = Tensor::zeros(ta2.shape);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g.data.data() + i * n;
                    const double* brow = tb2.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da.data[i * k + p] = acc;
                }
            t.accumulate(a.id, da);
        }
        if (t.wants_grad(b)) {
            // b.grad += a^T . g
            Tensor db = Tensor::zeros(tb2.shape);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    double av = ta2.data[i * k + p];
                    if (av == 0.0) continue;
                    const double* grow = g.data.data() + i * n;
                    double* drow = db.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            t.accumulate(b.id, db);
        }
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
    bool rg = wants_grad(a) || wants_grad(b);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), rg, [a, b, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= tb.data[i];
    bool rg = wants_grad(a) || wants_grad(b);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), rg, [a, b, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        t.accumulate(a.id, g);
        t.accumulate_scaled(b.id, g.data.data(), g.size(), -1.0);
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= tb.data[i];
    bool rg = wants_grad(a) || wants_grad(b);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), rg, [a, b, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& ta2 = t.value(a);
        const Tensor& tb2 = t.value(b);
        if (t.wants_grad(a)) {
            Tensor da = g;
            for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= tb2.data[i];
            t.accumulate(a.id, da);
        }
        if (t.wants_grad(b)) {
            Tensor db = g;
            for (std::size_t i = 0; i < db.size(); ++i) db.data[i] *= ta2.data[i];
            t.accumulate(b.id, db);
        }
    });
}

Var Tape::tanh(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::tanh(x);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(a), [a, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& y = t.nodes_[out_id].value;
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= 1.0 - y.data[i] * y.data[i];
        t.accumulate(a.id, da);
    });
}

Var Tape::relu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(a), [a, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& x = t.value(a);
        Tensor da = g;
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < da.size(); ++i)
            if (x.data[i] <= 0.0) da.data[i] = 0.0;
        t.accumulate(a.id, da);
    });
}

Var Tape::exp(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::exp(x);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(a), [a, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& y = t.nodes_[out_id].value;
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= y.data[i];
        t.accumulate(a.id, da);
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = value(a);
    for (auto& x : out.data) x *= c;
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(a), [a, c, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        t.accumulate_scaled(a.id, g.data.data(), g.size(), c);
    });
}

Var Tape::concat(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != tb.rank() || ta.rank() < 1 || ta.rank() > 2)
        throw DimensionError("concat: ranks must match and be 1 or 2, got " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out;
    if (ta.rank() == 1) {
        out = Tensor::zeros({ta.shape[0] + tb.shape[0]});
        std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
        std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(ta.shape[0]));
    } else {
        if (ta.shape[0] != tb.shape[0])
            throw DimensionError("concat: leading dims disagree " + ta.shape_str() + " vs " + tb.shape_str());
        std::size_t rows = ta.shape[0], p = ta.shape[1], q = tb.shape[1];
        out = Tensor::zeros({rows, p + q});
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(ta.data.begin() + static_cast<std::ptrdiff_t>(i * p), p,
                        out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q)));
            std::copy_n(tb.data.begin() + static_cast<std::ptrdiff_t>(i * q), q,
                        out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p));
        }
    }
    bool rg = wants_grad(a) || wants_grad(b);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), rg, [a, b, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& ta2 = t.value(a);
        const Tensor& tb2 = t.value(b);
        Tensor da = Tensor::zeros(ta2.shape);
        Tensor db = Tensor::zeros(tb2.shape);
        if (ta2.rank() == 1) {
            std::copy_n(g.data.begin(), ta2.shape[0], da.data.begin());
            std::copy_n(g.data.begin() + static_cast<std::ptrdiff_t>(ta2.shape[0]), tb2.shape[0], db.data.begin());
        } else {
            std::size_t rows = ta2.shape[0], p = ta2.shape[1], q = tb2.shape[1];
            for (std::size_t i = 0; i < rows; ++i) {
                std::copy_n(g.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q)), p,
                            da.data.begin() + static_cast<std::ptrdiff_t>(i * p));
                std::copy_n(g.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p), q,
                            db.data.begin() + static_cast<std::ptrdiff_t>(i * q));
            }
        }
        t.accumulate(a.id, da);
        t.accumulate(b.id, db);
    });
}

Var Tape::log_softmax(Var z) {
    const Tensor& tz = value(z);
    if (tz.rank() != 1 || tz.size() < 1)
        throw DimensionError("log_softmax: expects a non-empty rank-1 tensor, got " + tz.shape_str());
    double mx = tz.data[0];
    for (double x : tz.data) mx = std::max(mx, x);
    double lse = 0.0;
    for (double x : tz.data) lse += std::exp(x - mx);
    lse = mx + std::log(lse);
    Tensor out = tz;
    for (auto& x : out.data) x -= lse;
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(z), [z, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& y = t.nodes_[out_id].value;
        double gsum = 0.0;
        for (double x : g.data) gsum += x;
        Tensor dz = g;
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] -= std::exp(y.data[i]) * gsum;
        t.accumulate(z.id, dz);
    });
}

Var Tape::gather_row(Var table, std::size_t index) {
    const Tensor& tt = value(table);
    if (tt.rank() != 2) throw DimensionError("gather_row: table must be rank-2, got " + tt.shape_str());
    if (index >= tt.shape[0])
        throw IndexError("gather_row: row " + std::to_string(index) + " out of range [0, " + std::to_string(tt.shape[0]) + ")");
    std::size_t d = tt.shape[1];
    Tensor out = Tensor::zeros({d});
    std::copy_n(tt.data.begin() + static_cast<std::ptrdiff_t>(index * d), d, out.data.begin());
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(table), [table, index, d, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        Tensor dt = Tensor::zeros(t.value(table).shape);
        std::copy_n(g.data.begin(), d, dt.data.begin() + static_cast<std::ptrdiff_t>(index * d));
        t.accumulate(table.id, dt);
    });
}

Var Tape::pick(Var v, std::size_t index) {
    const Tensor& tv = value(v);
    if (tv.rank() != 1) throw DimensionError("pick: expects rank-1, got " + tv.shape_str());
    if (index >= tv.size())
        throw IndexError("pick: index " + std::to_string(index) + " out of range [0, " + std::to_string(tv.size()) + ")");
    Tensor out = Tensor::scalar(tv.data[index]);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(v), [v, index, out_id](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        Tensor dv = Tensor::zeros(t.value(v).shape);
        dv.data[index] = g.data[0];
        t.accumulate(v.id, dv);
    });
}

Var Tape::sum(Var a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (double x : ta.data) s += x;
    Tensor out = Tensor::scalar(s);
    std::size_t out_id = nodes_.size();
    return push(std::move(out), wants_grad(a), [a, out_id](Tape& t) {
        double g = t.nodes_[out_id].grad.data[0];
        const Tensor& ta2 = t.value(a);
        Tensor da = Tensor::zeros(ta2.shape);
        for (auto& x : da.data) x = g;
        t.accumulate(a.id, da);
    });
}

GradMap Tape::backward(Var loss) {
    if (value(loss).size() != 1)
        throw ContractError("backward: loss must be scalar, got " + value(loss).shape_str());
    for (auto& n : nodes_) {
        n.grad = Tensor();
        n.grad_set = false;
    }
    if (nodes_[loss.id].requires_grad) {
        nodes_[loss.id].grad = Tensor::zeros(value(loss).shape);
        nodes_[loss.id].grad.data[0] = 1.0;
        nodes_[loss.id].grad_set = true;
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad_set && n.backward) n.backward(*this);
        }
    }
    GradMap out;
    for (const auto& [name, id] : params_) out[name] = grad(Var{id});
    return out;
}

}  // namespace mv
