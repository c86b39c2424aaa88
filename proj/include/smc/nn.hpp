#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every op applied during the forward pass together with a
// closure that pushes the output gradient back to its inputs. Parameters live
// in a ParamStore; backward() accumulates into Parameter::grad. Everything is
// templated on the scalar so the gradient checks can run in double while
// training runs in float.

#include "smc/common.hpp"

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace smc::nn {

template <class S>
using Tensor = RowMatrix<S>;

template <class S>
struct Parameter {
    Tensor<S> value;
    Tensor<S> grad;
    Tensor<S> adam_m;
    Tensor<S> adam_v;
};

template <class S>
class ParamStore {
public:
    Parameter<S>& create(const std::string& name, Tensor<S> init) {
        if (params_.contains(name)) throw ConfigError("parameter '" + name + "' already exists");
        Parameter<S> p;
        p.grad = Tensor<S>::Zero(init.rows(), init.cols());
        p.adam_m = p.grad;
        p.adam_v = p.grad;
        p.value = std::move(init);
        return params_.emplace(name, std::move(p)).first->second;
    }

    Parameter<S>& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Parameter<S>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.contains(name); }

    void zero_grad() {
        for (auto& [_, p] : params_) p.grad.setZero();
    }

    std::size_t size() const { return params_.size(); }
    Eigen::Index scalar_count() const {
        Eigen::Index n = 0;
        for (const auto& [_, p] : params_) n += p.value.size();
        return n;
    }

    long step() const { return step_; }
    void set_step(long s) { step_ = s; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Parameter<S>> params_;  // ordered: deterministic iteration
    long step_ = 0;
};

// Glorot-uniform initialisation.
template <class S>
Tensor<S> glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> uni(-limit, limit);
    Tensor<S> t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(uni(rng));
    return t;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long warmup_steps = 0;  // linear ramp lr * s / W for s <= W
};

// Learning rate applied on the given 1-based step.
inline double effective_lr(const AdamConfig& cfg, long step) {
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    return cfg.lr;
}

// One bias-corrected Adam update for every parameter; advances store.step().
template <class S>
void adam_step(ParamStore<S>& store, const AdamConfig& cfg) {
    const long t = store.step() + 1;
    store.set_step(t);
    const double lr = effective_lr(cfg, t);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& [_, p] : store) {
        p.adam_m = static_cast<S>(cfg.beta1) * p.adam_m + static_cast<S>(1.0 - cfg.beta1) * p.grad;
        p.adam_v = static_cast<S>(cfg.beta2) * p.adam_v + static_cast<S>(1.0 - cfg.beta2) * p.grad.cwiseAbs2();
        const auto m_hat = p.adam_m.array() / static_cast<S>(c1);
        const auto v_hat = p.adam_v.array() / static_cast<S>(c2);
        p.value.array() -= static_cast<S>(lr) * m_hat / (v_hat.sqrt() + static_cast<S>(cfg.eps));
    }
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <class S>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor<S>& grad)>;

    // With record=false no backward closures are kept (inference).
    explicit Tape(bool record = true) : record_(record) {}

    Var constant(Tensor<S> value) { return push(std::move(value), false, nullptr); }

    Var param(Parameter<S>& p) {
        Var v = push(p.value, record_, nullptr);
        nodes_[static_cast<std::size_t>(v.id)].param = &p;
        return v;
    }

    const Tensor<S>& value(Var v) const { return node(v).value; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    bool recording() const { return record_; }

    // Gradient of the last backward() w.r.t. v; zero if v did not influence the loss.
    Tensor<S> grad(Var v) const {
        const auto& n = node(v);
        if (n.grad.size() == 0) return Tensor<S>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void accumulate(Var v, const Tensor<S>& g) {
        auto& n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.requires_grad) return;
        if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
            throw ShapeError("gradient shape mismatch in backward");
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    // Reverse sweep from a 1x1 loss; parameter gradients are added to Parameter::grad.
    void backward(Var loss) {
        if (!record_) throw StateError("backward on a tape that did not record the forward pass");
        if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
            throw StateError("backward before forward: loss is not on this tape");
        if (backward_done_) throw StateError("backward already ran on this tape");
        auto& l = nodes_[static_cast<std::size_t>(loss.id)];
        if (l.value.rows() != 1 || l.value.cols() != 1) throw ShapeError("backward: loss must be 1x1");
        backward_done_ = true;
        if (!l.requires_grad) return;
        l.grad = Tensor<S>::Ones(1, 1);
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, n.grad);
            if (n.param) n.param->grad += n.grad;
        }
    }

    // Records an op output. The closure runs only when some parent needs a gradient.
    Var push(Tensor<S> value, bool needs_grad, Backward fn) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = needs_grad && record_;
        if (n.requires_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <class... Vs>
    bool any_requires_grad(Vs... vs) const {
        return (requires_grad(vs) || ...);
    }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool requires_grad = false;
        Parameter<S>* param = nullptr;
        Backward backward;
    };

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw StateError("variable is not on this tape");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    std::vector<Node> nodes_;
    bool record_;
    bool backward_done_ = false;
};

namespace detail {

inline void check(bool ok, const char* op, const std::string& what) {
    if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// ---- elementary ops --------------------------------------------------------

template <class S>
Var matmul(Tape<S>& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    detail::check(A.cols() == B.rows(), "matmul",
                  detail::shape_str(A.rows(), A.cols()) + " * " + detail::shape_str(B.rows(), B.cols()));
    return t.push(A * B, t.any_requires_grad(a, b), [a, b](Tape<S>& tp, const Tensor<S>& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
        if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
    });
}

// a + b with b either the same shape as a or a 1 x cols row broadcast over rows.
template <class S>
Var add(Tape<S>& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    const bool broadcast = B.rows() == 1 && A.rows() != 1;
    detail::check(A.cols() == B.cols() && (broadcast || A.rows() == B.rows()), "add",
                  detail::shape_str(A.rows(), A.cols()) + " + " + detail::shape_str(B.rows(), B.cols()));
    Tensor<S> out = broadcast ? Tensor<S>(A.rowwise() + B.row(0)) : Tensor<S>(A + B);
    return t.push(std::move(out), t.any_requires_grad(a, b), [a, b, broadcast](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(b)) tp.accumulate(b, broadcast ? Tensor<S>(g.colwise().sum()) : g);
    });
}

template <class S>
Var sub(Tape<S>& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    detail::check(A.rows() == B.rows() && A.cols() == B.cols(), "sub", "shape mismatch");
    return t.push(A - B, t.any_requires_grad(a, b), [a, b](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, -g);
    });
}

// Elementwise product; b may be a 1 x cols row broadcast.
template <class S>
Var mul(Tape<S>& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    const bool broadcast = B.rows() == 1 && A.rows() != 1;
    detail::check(A.cols() == B.cols() && (broadcast || A.rows() == B.rows()), "mul", "shape mismatch");
    Tensor<S> out = broadcast ? Tensor<S>(A.array().rowwise() * B.row(0).array()) : Tensor<S>(A.cwiseProduct(B));
    return t.push(std::move(out), t.any_requires_grad(a, b), [a, b, broadcast](Tape<S>& tp, const Tensor<S>& g) {
        const auto& A = tp.value(a);
        const auto& B = tp.value(b);
        if (broadcast) {
            if (tp.requires_grad(a)) tp.accumulate(a, Tensor<S>(g.array().rowwise() * B.row(0).array()));
            if (tp.requires_grad(b)) tp.accumulate(b, Tensor<S>(g.cwiseProduct(A).colwise().sum()));
        } else {
            if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(B));
            if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(A));
        }
    });
}

template <class S>
Var scale(Tape<S>& t, Var a, S factor) {
    return t.push(t.value(a) * factor, t.requires_grad(a),
                  [a, factor](Tape<S>& tp, const Tensor<S>& g) { tp.accumulate(a, g * factor); });
}

template <class S>
Var concat_cols(Tape<S>& t, const std::vector<Var>& parts) {
    detail::check(!parts.empty(), "concat_cols", "no inputs");
    const Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool needs = false;
    for (Var p : parts) {
        detail::check(t.value(p).rows() == rows, "concat_cols", "row counts differ");
        cols += t.value(p).cols();
        needs = needs || t.requires_grad(p);
    }
    Tensor<S> out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    return t.push(std::move(out), needs, [parts](Tape<S>& tp, const Tensor<S>& g) {
        Eigen::Index c = 0;
        for (Var p : parts) {
            const Eigen::Index w = tp.value(p).cols();
            if (tp.requires_grad(p)) tp.accumulate(p, Tensor<S>(g.middleCols(c, w)));
            c += w;
        }
    });
}

template <class S>
Var concat_rows(Tape<S>& t, const std::vector<Var>& parts) {
    detail::check(!parts.empty(), "concat_rows", "no inputs");
    const Eigen::Index cols = t.value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool needs = false;
    for (Var p : parts) {
        detail::check(t.value(p).cols() == cols, "concat_rows", "column counts differ");
        rows += t.value(p).rows();
        needs = needs || t.requires_grad(p);
    }
    Tensor<S> out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        out.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    return t.push(std::move(out), needs, [parts](Tape<S>& tp, const Tensor<S>& g) {
        Eigen::Index r = 0;
        for (Var p : parts) {
            const Eigen::Index h = tp.value(p).rows();
            if (tp.requires_grad(p)) tp.accumulate(p, Tensor<S>(g.middleRows(r, h)));
            r += h;
        }
    });
}

template <class S>
Var slice_rows(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
    const auto& A = t.value(a);
    detail::check(start >= 0 && count >= 0 && start + count <= A.rows(), "slice_rows", "range out of bounds");
    return t.push(A.middleRows(start, count), t.requires_grad(a), [a, start, count](Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> full = Tensor<S>::Zero(tp.value(a).rows(), tp.value(a).cols());
        full.middleRows(start, count) = g;
        tp.accumulate(a, full);
    });
}

template <class S>
Var slice_cols(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
    const auto& A = t.value(a);
    detail::check(start >= 0 && count >= 0 && start + count <= A.cols(), "slice_cols", "range out of bounds");
    return t.push(A.middleCols(start, count), t.requires_grad(a), [a, start, count](Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> full = Tensor<S>::Zero(tp.value(a).rows(), tp.value(a).cols());
        full.middleCols(start, count) = g;
        tp.accumulate(a, full);
    });
}

// Every row repeated `times` times consecutively: (R x C) -> (R*times x C).
template <class S>
Var repeat_rows(Tape<S>& t, Var a, Eigen::Index times) {
    const auto& A = t.value(a);
    detail::check(times >= 1, "repeat_rows", "times must be >= 1");
    Tensor<S> out(A.rows() * times, A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) out.middleRows(r * times, times).rowwise() = A.row(r);
    return t.push(std::move(out), t.requires_grad(a), [a, times](Tape<S>& tp, const Tensor<S>& g) {
        const auto rows = tp.value(a).rows();
        Tensor<S> acc(rows, g.cols());
        for (Eigen::Index r = 0; r < rows; ++r) acc.row(r) = g.middleRows(r * times, times).colwise().sum();
        tp.accumulate(a, acc);
    });
}

template <class S>
Var tanh(Tape<S>& t, Var a) {
    Tensor<S> y = t.value(a).array().tanh().matrix();
    return t.push(y, t.requires_grad(a), [a, y](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(a, Tensor<S>(g.array() * (S(1) - y.array().square())));
    });
}

template <class S>
Var sigmoid(Tape<S>& t, Var a) {
    Tensor<S> y = (S(1) / (S(1) + (-t.value(a).array()).exp())).matrix();
    return t.push(y, t.requires_grad(a), [a, y](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(a, Tensor<S>(g.array() * y.array() * (S(1) - y.array())));
    });
}

template <class S>
Var silu(Tape<S>& t, Var a) {
    const auto& x = t.value(a);
    const Tensor<S> sig = (S(1) / (S(1) + (-x.array()).exp())).matrix();
    Tensor<S> y = x.cwiseProduct(sig);
    return t.push(std::move(y), t.requires_grad(a), [a, sig](Tape<S>& tp, const Tensor<S>& g) {
        const auto& x = tp.value(a);
        tp.accumulate(a, Tensor<S>(g.array() * sig.array() * (S(1) + x.array() * (S(1) - sig.array()))));
    });
}

// Per-row normalisation to zero mean / unit variance (no affine part).
template <class S>
Var layer_norm(Tape<S>& t, Var a, S eps = S(1e-5)) {
    const auto& x = t.value(a);
    const auto n = static_cast<S>(x.cols());
    Tensor<S> y(x.rows(), x.cols());
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).mean();
        const S var = (x.row(r).array() - mean).square().sum() / n;
        inv_std[r] = S(1) / std::sqrt(var + eps);
        y.row(r) = (x.row(r).array() - mean) * inv_std[r];
    }
    return t.push(y, t.requires_grad(a), [a, y, inv_std, n](Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> dx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const S mean_g = g.row(r).mean();
            const S mean_gy = g.row(r).cwiseProduct(y.row(r)).sum() / n;
            dx.row(r) = inv_std[r] * (g.row(r).array() - mean_g - y.row(r).array() * mean_gy);
        }
        tp.accumulate(a, dx);
    });
}

template <class S>
Tensor<S> softmax_rows_value(const Tensor<S>& x) {
    Tensor<S> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mx = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - mx).exp();
        y.row(r) /= y.row(r).sum();
    }
    return y;
}

template <class S>
Var softmax_rows(Tape<S>& t, Var a) {
    Tensor<S> y = softmax_rows_value(t.value(a));
    return t.push(y, t.requires_grad(a), [a, y](Tape<S>& tp, const Tensor<S>& g) {
        const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
        tp.accumulate(a, Tensor<S>(y.array() * (g.colwise() - dot).array()));
    });
}

// mean((a - b)^2) as a 1x1 tensor.
template <class S>
Var mse(Tape<S>& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    detail::check(A.rows() == B.rows() && A.cols() == B.cols(), "mse",
                  detail::shape_str(A.rows(), A.cols()) + " vs " + detail::shape_str(B.rows(), B.cols()));
    const auto n = static_cast<S>(A.size());
    Tensor<S> out(1, 1);
    out(0, 0) = (A - B).squaredNorm() / n;
    return t.push(std::move(out), t.any_requires_grad(a, b), [a, b, n](Tape<S>& tp, const Tensor<S>& g) {
        const Tensor<S> d = (tp.value(a) - tp.value(b)) * (S(2) * g(0, 0) / n);
        tp.accumulate(a, d);
        tp.accumulate(b, -d);
    });
}

// Mean over rows of -log softmax(logits)[label].
template <class S>
Var softmax_cross_entropy(Tape<S>& t, Var logits, std::vector<int> labels) {
    const auto& X = t.value(logits);
    detail::check(static_cast<Eigen::Index>(labels.size()) == X.rows(), "softmax_cross_entropy", "label count != rows");
    Tensor<S> p = softmax_rows_value(X);
    S total = 0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        detail::check(y >= 0 && y < X.cols(), "softmax_cross_entropy", "label out of range");
        total -= std::log(std::max(p(r, y), std::numeric_limits<S>::min()));
    }
    Tensor<S> out(1, 1);
    out(0, 0) = total / static_cast<S>(X.rows());
    return t.push(std::move(out), t.requires_grad(logits),
                  [logits, p, y = std::move(labels)](Tape<S>& tp, const Tensor<S>& g) {
                      Tensor<S> d = p;
                      for (std::size_t r = 0; r < y.size(); ++r) d(static_cast<Eigen::Index>(r), y[r]) -= S(1);
                      tp.accumulate(logits, Tensor<S>(d * (g(0, 0) / static_cast<S>(y.size()))));
                  });
}

// Rows of `table` selected by index; gradients scatter-add back.
template <class S>
Var gather_rows(Tape<S>& t, Var table, std::vector<int> indices) {
    const auto& T = t.value(table);
    Tensor<S> out(static_cast<Eigen::Index>(indices.size()), T.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        detail::check(indices[i] >= 0 && indices[i] < T.rows(), "gather_rows", "index out of range");
        out.row(static_cast<Eigen::Index>(i)) = T.row(indices[i]);
    }
    return t.push(std::move(out), t.requires_grad(table),
                  [table, idx = std::move(indices)](Tape<S>& tp, const Tensor<S>& g) {
                      Tensor<S> acc = Tensor<S>::Zero(tp.value(table).rows(), tp.value(table).cols());
                      for (std::size_t i = 0; i < idx.size(); ++i) acc.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                      tp.accumulate(table, acc);
                  });
}

// Value of `quantized`, gradient passed to `x` unchanged (straight-through).
template <class S>
Var straight_through(Tape<S>& t, Var x, const Tensor<S>& quantized) {
    const auto& X = t.value(x);
    detail::check(X.rows() == quantized.rows() && X.cols() == quantized.cols(), "straight_through", "shape mismatch");
    return t.push(quantized, t.requires_grad(x), [x](Tape<S>& tp, const Tensor<S>& g) { tp.accumulate(x, g); });
}

template <class S>
Var stop_gradient(Tape<S>& t, Var x) {
    return t.constant(t.value(x));
}

// ---- fused sequence ops ------------------------------------------------------

// Multi-head scaled dot-product attention over `batch` independent segments.
// q: (batch*Tq x D), k and v: (batch*Tk x D); D divisible by heads.
template <class S>
Var attention(Tape<S>& t, Var q, Var k, Var v, int heads, int batch) {
    const auto& Q = t.value(q);
    const auto& K = t.value(k);
    const auto& V = t.value(v);
    detail::check(heads >= 1 && batch >= 1, "attention", "heads and batch must be positive");
    detail::check(Q.cols() == K.cols() && K.cols() == V.cols() && K.rows() == V.rows(), "attention",
                  "q/k/v widths or k/v lengths differ");
    detail::check(Q.cols() % heads == 0, "attention", "model dim not divisible by heads");
    detail::check(Q.rows() % batch == 0 && K.rows() % batch == 0, "attention", "rows not divisible by batch");
    const Eigen::Index tq = Q.rows() / batch, tk = K.rows() / batch, dh = Q.cols() / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    Tensor<S> out(Q.rows(), Q.cols());
    std::vector<Tensor<S>> probs(static_cast<std::size_t>(batch * heads));
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h) {
            const auto qb = Q.block(b * tq, h * dh, tq, dh);
            const auto kb = K.block(b * tk, h * dh, tk, dh);
            const auto vb = V.block(b * tk, h * dh, tk, dh);
            Tensor<S> a = softmax_rows_value<S>((qb * kb.transpose()) * inv_sqrt);
            out.block(b * tq, h * dh, tq, dh) = a * vb;
            probs[static_cast<std::size_t>(b * heads + h)] = std::move(a);
        }
    return t.push(std::move(out), t.any_requires_grad(q, k, v),
                  [=, probs = std::move(probs)](Tape<S>& tp, const Tensor<S>& g) {
                      const auto& Q = tp.value(q);
                      const auto& K = tp.value(k);
                      const auto& V = tp.value(v);
                      Tensor<S> dq = Tensor<S>::Zero(Q.rows(), Q.cols());
                      Tensor<S> dk = Tensor<S>::Zero(K.rows(), K.cols());
                      Tensor<S> dv = Tensor<S>::Zero(V.rows(), V.cols());
                      for (int b = 0; b < batch; ++b)
                          for (int h = 0; h < heads; ++h) {
                              const auto& a = probs[static_cast<std::size_t>(b * heads + h)];
                              const auto gb = g.block(b * tq, h * dh, tq, dh);
                              const Tensor<S> da = gb * V.block(b * tk, h * dh, tk, dh).transpose();
                              dv.block(b * tk, h * dh, tk, dh) += a.transpose() * gb;
                              const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = da.cwiseProduct(a).rowwise().sum();
                              const Tensor<S> ds = (a.array() * (da.colwise() - dot).array()).matrix() * inv_sqrt;
                              dq.block(b * tq, h * dh, tq, dh) += ds * K.block(b * tk, h * dh, tk, dh);
                              dk.block(b * tk, h * dh, tk, dh) += ds.transpose() * Q.block(b * tq, h * dh, tq, dh);
                          }
                      tp.accumulate(q, dq);
                      tp.accumulate(k, dk);
                      tp.accumulate(v, dv);
                  });
}

// One LSTM direction over `batch` sequences stored back to back
// (row b*T + t). Gates are packed [input, forget, cell, output] along columns:
// wx (in x 4H), wh (H x 4H), bias (1 x 4H). Output is (batch*T x H).
template <class S>
Var lstm(Tape<S>& t, Var x, Var wx, Var wh, Var bias, int batch, bool reverse) {
    const auto& X = t.value(x);
    const auto& Wx = t.value(wx);
    const auto& Wh = t.value(wh);
    const auto& Bv = t.value(bias);
    detail::check(batch >= 1 && X.rows() % batch == 0, "lstm", "rows not divisible by batch");
    detail::check(Wx.rows() == X.cols() && Wx.cols() % 4 == 0, "lstm", "input weight shape");
    const Eigen::Index hidden = Wx.cols() / 4;
    detail::check(Wh.rows() == hidden && Wh.cols() == 4 * hidden, "lstm", "recurrent weight shape");
    detail::check(Bv.rows() == 1 && Bv.cols() == 4 * hidden, "lstm", "bias shape");
    const Eigen::Index steps = X.rows() / batch;

    struct Cache {
        std::vector<Tensor<S>> gates, c, tanh_c, h_prev, c_prev;  // per step, batch x ...
    };
    auto cache = std::make_shared<Cache>();
    const Tensor<S> xw = (X * Wx).rowwise() + Bv.row(0);
    Tensor<S> out(X.rows(), hidden);
    Tensor<S> h = Tensor<S>::Zero(batch, hidden);
    Tensor<S> c = Tensor<S>::Zero(batch, hidden);
    Tensor<S> pre(batch, 4 * hidden);
    for (Eigen::Index s = 0; s < steps; ++s) {
        const Eigen::Index step = reverse ? steps - 1 - s : s;
        for (int b = 0; b < batch; ++b) pre.row(b) = xw.row(b * steps + step);
        pre.noalias() += h * Wh;
        Tensor<S> gates(batch, 4 * hidden);
        gates.leftCols(2 * hidden) = (S(1) / (S(1) + (-pre.leftCols(2 * hidden).array()).exp())).matrix();
        gates.middleCols(2 * hidden, hidden) = pre.middleCols(2 * hidden, hidden).array().tanh().matrix();
        gates.rightCols(hidden) = (S(1) / (S(1) + (-pre.rightCols(hidden).array()).exp())).matrix();
        cache->h_prev.push_back(h);
        cache->c_prev.push_back(c);
        c = gates.middleCols(hidden, hidden).cwiseProduct(c) +
            gates.leftCols(hidden).cwiseProduct(gates.middleCols(2 * hidden, hidden));
        Tensor<S> tc = c.array().tanh().matrix();
        h = gates.rightCols(hidden).cwiseProduct(tc);
        for (int b = 0; b < batch; ++b) out.row(b * steps + step) = h.row(b);
        cache->gates.push_back(std::move(gates));
        cache->tanh_c.push_back(std::move(tc));
        cache->c.push_back(c);
    }
    return t.push(std::move(out), t.any_requires_grad(x, wx, wh, bias),
                  [=](Tape<S>& tp, const Tensor<S>& g) {
                      const auto& X = tp.value(x);
                      const auto& Wx = tp.value(wx);
                      const auto& Wh = tp.value(wh);
                      Tensor<S> dxw(X.rows(), 4 * hidden);
                      Tensor<S> dwh = Tensor<S>::Zero(hidden, 4 * hidden);
                      Tensor<S> dh_next = Tensor<S>::Zero(batch, hidden);
                      Tensor<S> dc_next = Tensor<S>::Zero(batch, hidden);
                      Tensor<S> da(batch, 4 * hidden);
                      for (Eigen::Index s = steps; s-- > 0;) {
                          const Eigen::Index step = reverse ? steps - 1 - s : s;
                          const auto& gt = cache->gates[static_cast<std::size_t>(s)];
                          const auto& tc = cache->tanh_c[static_cast<std::size_t>(s)];
                          const auto i_g = gt.leftCols(hidden).array();
                          const auto f_g = gt.middleCols(hidden, hidden).array();
                          const auto c_g = gt.middleCols(2 * hidden, hidden).array();
                          const auto o_g = gt.rightCols(hidden).array();
                          Tensor<S> dh = dh_next;
                          for (int b = 0; b < batch; ++b) dh.row(b) += g.row(b * steps + step);
                          const Tensor<S> dc = (dh.array() * o_g * (S(1) - tc.array().square()) + dc_next.array()).matrix();
                          da.leftCols(hidden) = (dc.array() * c_g * i_g * (S(1) - i_g)).matrix();
                          da.middleCols(hidden, hidden) =
                              (dc.array() * cache->c_prev[static_cast<std::size_t>(s)].array() * f_g * (S(1) - f_g)).matrix();
                          da.middleCols(2 * hidden, hidden) = (dc.array() * i_g * (S(1) - c_g.square())).matrix();
                          da.rightCols(hidden) = (dh.array() * tc.array() * o_g * (S(1) - o_g)).matrix();
                          dc_next = (dc.array() * f_g).matrix();
                          dwh.noalias() += cache->h_prev[static_cast<std::size_t>(s)].transpose() * da;
                          dh_next.noalias() = da * Wh.transpose();
                          for (int b = 0; b < batch; ++b) dxw.row(b * steps + step) = da.row(b);
                      }
                      if (tp.requires_grad(x)) tp.accumulate(x, dxw * Wx.transpose());
                      if (tp.requires_grad(wx)) tp.accumulate(wx, X.transpose() * dxw);
                      if (tp.requires_grad(wh)) tp.accumulate(wh, dwh);
                      if (tp.requires_grad(bias)) tp.accumulate(bias, Tensor<S>(dxw.colwise().sum()));
                  });
}

// ---- layers ------------------------------------------------------------------

enum class Activation { none, tanh, sigmoid, silu };

struct DenseSpec {
    int in = 0;
    int out = 0;
    Activation activation = Activation::none;
};
struct BiRecurrentSpec {
    int in = 0;
    int hidden = 0;
};
struct LayerNormSpec {
    int dim = 0;
};
struct CrossAttentionSpec {
    int query_dim = 0;
    int kv_dim = 0;
    int heads = 1;
    int model_dim = 0;  // 0 -> query_dim
};
using LayerSpec = std::variant<DenseSpec, BiRecurrentSpec, LayerNormSpec, CrossAttentionSpec>;

template <class S>
Var activate(Tape<S>& t, Var x, Activation act) {
    switch (act) {
        case Activation::tanh: return nn::tanh(t, x);
        case Activation::sigmoid: return nn::sigmoid(t, x);
        case Activation::silu: return nn::silu(t, x);
        case Activation::none: break;
    }
    return x;
}

template <class S>
class Dense {
public:
    Dense() = default;
    Dense(std::string name, DenseSpec spec) : name_(std::move(name)), spec_(spec) {
        if (spec.in < 1 || spec.out < 1) throw ConfigError("dense '" + name_ + "': dims must be positive");
    }

    void init(ParamStore<S>& store, Rng& rng, bool zero = false) const {
        store.create(name_ + ".w", zero ? Tensor<S>::Zero(spec_.in, spec_.out) : glorot<S>(spec_.in, spec_.out, rng));
        store.create(name_ + ".b", Tensor<S>::Zero(1, spec_.out));
    }

    Var operator()(Tape<S>& t, ParamStore<S>& store, Var x) const {
        const Var y = add(t, matmul(t, x, t.param(store.get(name_ + ".w"))), t.param(store.get(name_ + ".b")));
        return activate(t, y, spec_.activation);
    }

    const DenseSpec& spec() const { return spec_; }

private:
    std::string name_;
    DenseSpec spec_;
};

template <class S>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(std::string name, LayerNormSpec spec) : name_(std::move(name)), spec_(spec) {}

    void init(ParamStore<S>& store) const {
        store.create(name_ + ".gamma", Tensor<S>::Ones(1, spec_.dim));
        store.create(name_ + ".beta", Tensor<S>::Zero(1, spec_.dim));
    }

    Var operator()(Tape<S>& t, ParamStore<S>& store, Var x) const {
        const Var n = layer_norm(t, x);
        return add(t, mul(t, n, t.param(store.get(name_ + ".gamma"))), t.param(store.get(name_ + ".beta")));
    }

private:
    std::string name_;
    LayerNormSpec spec_;
};

// Gated recurrent (LSTM) layer run in both directions; output is
// [forward, backward] hidden states, (batch*T x 2H).
template <class S>
class BiRecurrent {
public:
    BiRecurrent() = default;
    BiRecurrent(std::string name, BiRecurrentSpec spec) : name_(std::move(name)), spec_(spec) {
        if (spec.in < 1 || spec.hidden < 1) throw ConfigError("recurrent '" + name_ + "': dims must be positive");
    }

    void init(ParamStore<S>& store, Rng& rng, bool zero = false) const {
        for (const char* dir : {".fwd", ".bwd"}) {
            const std::string p = name_ + dir;
            store.create(p + ".wx", zero ? Tensor<S>::Zero(spec_.in, 4 * spec_.hidden)
                                         : glorot<S>(spec_.in, 4 * spec_.hidden, rng));
            store.create(p + ".wh", zero ? Tensor<S>::Zero(spec_.hidden, 4 * spec_.hidden)
                                         : glorot<S>(spec_.hidden, 4 * spec_.hidden, rng));
            Tensor<S> b = Tensor<S>::Zero(1, 4 * spec_.hidden);
            store.create(p + ".b", b);
        }
    }

    Var operator()(Tape<S>& t, ParamStore<S>& store, Var x, int batch) const {
        auto run = [&](const char* dir, bool reverse) {
            const std::string p = name_ + dir;
            return lstm(t, x, t.param(store.get(p + ".wx")), t.param(store.get(p + ".wh")),
                        t.param(store.get(p + ".b")), batch, reverse);
        };
        return concat_cols(t, {run(".fwd", false), run(".bwd", true)});
    }

    const BiRecurrentSpec& spec() const { return spec_; }

private:
    std::string name_;
    BiRecurrentSpec spec_;
};

template <class S>
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(std::string name, CrossAttentionSpec spec) : name_(std::move(name)), spec_(spec) {
        if (spec_.model_dim == 0) spec_.model_dim = spec_.query_dim;
        if (spec_.query_dim < 1 || spec_.kv_dim < 1 || spec_.heads < 1 || spec_.model_dim % spec_.heads != 0)
            throw ConfigError("cross-attention '" + name_ + "': invalid dims");
    }

    void init(ParamStore<S>& store, Rng& rng) const {
        store.create(name_ + ".wq", glorot<S>(spec_.query_dim, spec_.model_dim, rng));
        store.create(name_ + ".wk", glorot<S>(spec_.kv_dim, spec_.model_dim, rng));
        store.create(name_ + ".wv", glorot<S>(spec_.kv_dim, spec_.model_dim, rng));
        store.create(name_ + ".wo", glorot<S>(spec_.model_dim, spec_.query_dim, rng));
    }

    // query: (batch*Tq x query_dim), context: (batch*Tk x kv_dim).
    Var operator()(Tape<S>& t, ParamStore<S>& store, Var query, Var context, int batch) const {
        const Var q = matmul(t, query, t.param(store.get(name_ + ".wq")));
        const Var k = matmul(t, context, t.param(store.get(name_ + ".wk")));
        const Var v = matmul(t, context, t.param(store.get(name_ + ".wv")));
        const Var a = attention(t, q, k, v, spec_.heads, batch);
        return matmul(t, a, t.param(store.get(name_ + ".wo")));
    }

private:
    std::string name_;
    CrossAttentionSpec spec_;
};

// Fixed sinusoidal embedding: row p holds sin/cos pairs at geometric frequencies.
template <class S>
Tensor<S> sinusoidal_embedding(Eigen::Index positions, Eigen::Index dim, double offset = 0.0) {
    Tensor<S> pe(positions, dim);
    for (Eigen::Index p = 0; p < positions; ++p)
        for (Eigen::Index i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(dim));
            const double angle = (static_cast<double>(p) + offset) * freq;
            pe(p, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

}  // namespace smc::nn
