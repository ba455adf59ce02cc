#include "wavelab/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wavelab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": shape mismatch " + shape_string(a) +
                                " vs " + shape_string(b));
}

[[noreturn]] void rank_error(OpKind kind, const Shape& a, const char* want) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + want + ", got shape " +
                                shape_string(a));
}

Tape& same_tape(OpKind kind, Var a, Var b) {
    if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
        throw std::invalid_argument(std::string(op_name(kind)) + ": operands are not on the same tape");
    }
    return *a.tape();
}

Tape& tape_of(OpKind kind, Var a) {
    if (!a.valid()) throw std::invalid_argument(std::string(op_name(kind)) + ": invalid operand");
    return *a.tape();
}

bool is_matrix(const Shape& s) { return s.size() == 2; }

// Treats rank <= 1 as a single row.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
    if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
    return {1, t.size()};
}

template <class F, class DF>
Var unary(OpKind kind, Var x, F f, DF df) {
    Tape& t = tape_of(kind, x);
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
    const std::size_t xid = x.id();
    return t.record(kind, std::move(y), {xid}, [xid, df](Tape& tp, std::size_t self) {
        const Tensor& xv = tp.value(xid);
        const Tensor& yv = tp.value(self);
        const Tensor& g = tp.upstream(self);
        Tensor gx(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = g[i] * df(xv[i], yv[i]);
        tp.accumulate(xid, gx);
    });
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Scale: return "scale";
        case OpKind::ScaleBy: return "scale_by";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Variance: return "variance";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Softplus: return "softplus";
        case OpKind::Gelu: return "gelu";
        case OpKind::Sin: return "sin";
        case OpKind::Abs: return "abs";
        case OpKind::Square: return "square";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::SoftmaxRows: return "softmax";
        case OpKind::MaxConst: return "max_const";
        case OpKind::MinConst: return "min_const";
        case OpKind::Matmul: return "matmul";
        case OpKind::Matvec: return "matvec";
        case OpKind::CausalConv: return "causal_conv";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Transpose: return "transpose";
        case OpKind::Reshape: return "reshape";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::AddRowVec: return "add_row_vector";
        case OpKind::MeanRows: return "mean_rows";
    }
    return "unknown";
}

// ---------------------------------------------------------------- Var / store

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Parameter& ParameterStore::add(std::string name, Tensor init, bool trainable) {
    if (contains(name)) throw std::invalid_argument("parameter already registered: " + name);
    index_.emplace(name, params_.size());
    Tensor g(init.shape());
    params_.push_back(Parameter{std::move(name), std::move(init), std::move(g), trainable});
    return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
}

std::size_t ParameterStore::count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

std::vector<double> ParameterStore::flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for (const auto& p : params_) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
    return out;
}

void ParameterStore::unflatten(std::span<const double> values) {
    if (values.size() != count()) {
        throw std::invalid_argument("unflatten: expected " + std::to_string(count()) + " values, got " +
                                    std::to_string(values.size()));
    }
    std::size_t off = 0;
    for (auto& p : params_) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data().begin());
        off += p.value.size();
    }
}

// ---------------------------------------------------------------- Tape

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool rg = false;
    for (auto id : inputs) rg = rg || nodes_[id].requires_grad;
    nodes_.push_back(Node{kind, std::move(value), std::move(inputs), rg, rg ? std::move(fn) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, requires_grad, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{OpKind::Constant, std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var(this, it->second);
    Var v = (p.trainable && grad_enabled_) ? leaf(p.value, true) : constant(p.value);
    bound_.emplace(&p, v.id());
    bound_order_.push_back(&p);
    return v;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& buf = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Tensor& buf = grads_[id];
    if (buf.size() != nodes_[id].value.size()) buf = Tensor(nodes_[id].value.shape());
    return buf;
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root is not on this tape");
    if (root.value().size() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got shape " + shape_string(root.shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward) continue;
        if (grads_[i].size() == 0) continue;
        n.backward(*this, i);
    }
}

Tensor Tape::grad(Var v) const {
    if (v.id() < grads_.size() && grads_[v.id()].size() == nodes_[v.id()].value.size()) {
        return grads_[v.id()];
    }
    return Tensor(nodes_[v.id()].value.shape());
}

void Tape::collect_param_grads() {
    for (Parameter* p : bound_order_) {
        if (!p->trainable) continue;
        Tensor g = grad(Var(this, bound_.at(p)));
        for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    Tape& t = same_tape(OpKind::Add, a, b);
    if (a.shape() != b.shape()) shape_error(OpKind::Add, a.shape(), b.shape());
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(OpKind::Add, std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.upstream(self));
        tp.accumulate(ib, tp.upstream(self));
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(OpKind::Sub, a, b);
    if (a.shape() != b.shape()) shape_error(OpKind::Sub, a.shape(), b.shape());
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(OpKind::Sub, std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.upstream(self));
        if (tp.requires_grad(ib)) {
            Tensor g = tp.upstream(self);
            for (auto& v : g.data()) v = -v;
            tp.accumulate(ib, g);
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(OpKind::Mul, a, b);
    if (a.shape() != b.shape()) shape_error(OpKind::Mul, a.shape(), b.shape());
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(OpKind::Mul, std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        if (tp.requires_grad(ia)) {
            Tensor ga = tp.value(ib);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= g[i];
            tp.accumulate(ia, ga);
        }
        if (tp.requires_grad(ib)) {
            Tensor gb = tp.value(ia);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= g[i];
            tp.accumulate(ib, gb);
        }
    });
}

Var div(Var a, Var b) {
    Tape& t = same_tape(OpKind::Div, a, b);
    if (a.shape() != b.shape()) shape_error(OpKind::Div, a.shape(), b.shape());
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (bv[i] == 0.0) throw std::domain_error("div: division by zero");
        y[i] /= bv[i];
    }
    const auto ia = a.id(), ib = b.id();
    return t.record(OpKind::Div, std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        const Tensor& bv = tp.value(ib);
        const Tensor& yv = tp.value(self);
        if (tp.requires_grad(ia)) {
            Tensor ga(bv.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] / bv[i];
            tp.accumulate(ia, ga);
        }
        if (tp.requires_grad(ib)) {
            Tensor gb(bv.shape());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -g[i] * yv[i] / bv[i];
            tp.accumulate(ib, gb);
        }
    });
}

Var scale(Var x, double c) {
    Tape& t = tape_of(OpKind::Scale, x);
    Tensor y = x.value();
    for (auto& v : y.data()) v *= c;
    const auto ix = x.id();
    return t.record(OpKind::Scale, std::move(y), {ix}, [ix, c](Tape& tp, std::size_t self) {
        Tensor g = tp.upstream(self);
        for (auto& v : g.data()) v *= c;
        tp.accumulate(ix, g);
    });
}

Var scale_by(Var s, Var x) {
    Tape& t = same_tape(OpKind::ScaleBy, s, x);
    if (s.value().size() != 1) rank_error(OpKind::ScaleBy, s.shape(), "a scalar gate");
    const double sv = s.item();
    Tensor y = x.value();
    for (auto& v : y.data()) v *= sv;
    const auto is = s.id(), ix = x.id();
    return t.record(OpKind::ScaleBy, std::move(y), {is, ix}, [is, ix](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        const Tensor& xv = tp.value(ix);
        if (tp.requires_grad(is)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
            Tensor gs(tp.value(is).shape(), acc);
            tp.accumulate(is, gs);
        }
        if (tp.requires_grad(ix)) {
            const double sv = tp.value(is)[0];
            Tensor gx = g;
            for (auto& v : gx.data()) v *= sv;
            tp.accumulate(ix, gx);
        }
    });
}

Var add_scalar(Var x, double c) {
    Tape& t = tape_of(OpKind::AddScalar, x);
    Tensor y = x.value();
    for (auto& v : y.data()) v += c;
    const auto ix = x.id();
    return t.record(OpKind::AddScalar, std::move(y), {ix},
                    [ix](Tape& tp, std::size_t self) { tp.accumulate(ix, tp.upstream(self)); });
}

// ---------------------------------------------------------------- reductions

Var sum(Var x) {
    Tape& t = tape_of(OpKind::Sum, x);
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const auto ix = x.id();
    return t.record(OpKind::Sum, Tensor::scalar(s), {ix}, [ix](Tape& tp, std::size_t self) {
        Tensor g(tp.value(ix).shape(), tp.upstream(self)[0]);
        tp.accumulate(ix, g);
    });
}

Var mean(Var x) {
    Tape& t = tape_of(OpKind::Mean, x);
    const std::size_t n = x.value().size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const auto ix = x.id();
    return t.record(OpKind::Mean, Tensor::scalar(s / static_cast<double>(n)), {ix},
                    [ix, n](Tape& tp, std::size_t self) {
                        Tensor g(tp.value(ix).shape(), tp.upstream(self)[0] / static_cast<double>(n));
                        tp.accumulate(ix, g);
                    });
}

Var variance(Var x) {
    Tape& t = tape_of(OpKind::Variance, x);
    const Tensor& xv = x.value();
    const std::size_t n = xv.size();
    if (n == 0) throw std::invalid_argument("variance: empty tensor");
    double mu = 0.0;
    for (double v : xv.data()) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.data()) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const auto ix = x.id();
    return t.record(OpKind::Variance, Tensor::scalar(var), {ix}, [ix, n, mu](Tape& tp, std::size_t self) {
        const Tensor& xv = tp.value(ix);
        const double g = tp.upstream(self)[0];
        Tensor gx(xv.shape());
        for (std::size_t i = 0; i < n; ++i) gx[i] = g * 2.0 * (xv[i] - mu) / static_cast<double>(n);
        tp.accumulate(ix, gx);
    });
}

// ---------------------------------------------------------------- unary

Var exp(Var x) {
    return unary(
        OpKind::Exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    for (double v : x.value().data()) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
    }
    return unary(
        OpKind::Log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sigmoid(Var x) {
    return unary(
        OpKind::Sigmoid, x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
    return unary(
        OpKind::Tanh, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var x) {
    return unary(
        OpKind::Softplus, x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        });
}

Var gelu(Var x) {
    return unary(
        OpKind::Gelu, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Var sin(Var x) {
    return unary(
        OpKind::Sin, x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var abs(Var x) {
    return unary(
        OpKind::Abs, x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var square(Var x) {
    return unary(
        OpKind::Square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(Var x) {
    for (double v : x.value().data()) {
        if (!(v > 0.0)) throw std::domain_error("sqrt: non-positive input " + std::to_string(v));
    }
    return unary(
        OpKind::Sqrt, x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var max_const(Var x, double c) {
    return unary(
        OpKind::MaxConst, x, [c](double v) { return std::max(v, c); },
        [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

Var min_const(Var x, double c) {
    return unary(
        OpKind::MinConst, x, [c](double v) { return std::min(v, c); },
        [c](double v, double) { return v < c ? 1.0 : 0.0; });
}

Var hinge(Var x) { return max_const(x, 0.0); }

Var softmax_rows(Var x) {
    Tape& t = tape_of(OpKind::SoftmaxRows, x);
    const Tensor& xv = x.value();
    if (xv.rank() > 2) rank_error(OpKind::SoftmaxRows, xv.shape(), "rank <= 2");
    auto [r, c] = as_rows(xv);
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = xv.ptr() + i * c;
        double* out = y.ptr() + i * c;
        const double m = *std::max_element(in, in + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(in[j] - m);
            z += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] /= z;
    }
    const auto ix = x.id();
    return t.record(OpKind::SoftmaxRows, std::move(y), {ix}, [ix, r, c](Tape& tp, std::size_t self) {
        const Tensor& yv = tp.value(self);
        const Tensor& g = tp.upstream(self);
        Tensor gx(yv.shape());
        for (std::size_t i = 0; i < r; ++i) {
            const double* yr = yv.ptr() + i * c;
            const double* gr = g.ptr() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
            for (std::size_t j = 0; j < c; ++j) gx.ptr()[i * c + j] = yr[j] * (gr[j] - dot);
        }
        tp.accumulate(ix, gx);
    });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
    Tape& t = same_tape(OpKind::Matmul, a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!is_matrix(av.shape()) || !is_matrix(bv.shape()) || av.shape()[1] != bv.shape()[0]) {
        shape_error(OpKind::Matmul, av.shape(), bv.shape());
    }
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    Tensor y(Shape{m, n});
    MatMap(y.ptr(), m, n).noalias() = ConstMatMap(av.ptr(), m, k) * ConstMatMap(bv.ptr(), k, n);
    const auto ia = a.id(), ib = b.id();
    return t.record(OpKind::Matmul, std::move(y), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
        ConstMatMap g(tp.upstream(self).ptr(), m, n);
        if (tp.requires_grad(ia)) {
            Tensor& ga = tp.grad_buffer(ia);
            MatMap(ga.ptr(), m, k).noalias() += g * ConstMatMap(tp.value(ib).ptr(), k, n).transpose();
        }
        if (tp.requires_grad(ib)) {
            Tensor& gb = tp.grad_buffer(ib);
            MatMap(gb.ptr(), k, n).noalias() += ConstMatMap(tp.value(ia).ptr(), m, k).transpose() * g;
        }
    });
}

Var matvec(Var a, Var x) {
    Tape& t = same_tape(OpKind::Matvec, a, x);
    const Tensor& av = a.value();
    const Tensor& xv = x.value();
    if (!is_matrix(av.shape()) || xv.rank() != 1 || av.shape()[1] != xv.shape()[0]) {
        shape_error(OpKind::Matvec, av.shape(), xv.shape());
    }
    const std::size_t m = av.shape()[0], k = av.shape()[1];
    Tensor y(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += av.ptr()[i * k + j] * xv[j];
        y[i] = s;
    }
    const auto ia = a.id(), ix = x.id();
    return t.record(OpKind::Matvec, std::move(y), {ia, ix}, [ia, ix, m, k](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        if (tp.requires_grad(ia)) {
            const Tensor& xv = tp.value(ix);
            Tensor& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) ga.ptr()[i * k + j] += g[i] * xv[j];
        }
        if (tp.requires_grad(ix)) {
            const Tensor& av = tp.value(ia);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) gx[j] += av.ptr()[i * k + j] * g[i];
        }
    });
}

Var causal_conv(Var x, Var theta) {
    Tape& t = same_tape(OpKind::CausalConv, x, theta);
    const Tensor& xv = x.value();
    const Tensor& kv = theta.value();
    if (kv.rank() != 1 || kv.size() == 0 || xv.rank() == 0 || xv.rank() > 2) {
        shape_error(OpKind::CausalConv, xv.shape(), kv.shape());
    }
    const std::size_t len = xv.shape()[0];
    const std::size_t ch = xv.rank() == 2 ? xv.shape()[1] : 1;
    const std::size_t taps = kv.size();
    Tensor y(xv.shape());
    for (std::size_t n = 0; n < len; ++n) {
        const std::size_t kmax = std::min(taps, n + 1);
        for (std::size_t k = 0; k < kmax; ++k) {
            const double w = kv[k];
            const double* in = xv.ptr() + (n - k) * ch;
            double* out = y.ptr() + n * ch;
            for (std::size_t c = 0; c < ch; ++c) out[c] += w * in[c];
        }
    }
    const auto ix = x.id(), ik = theta.id();
    return t.record(OpKind::CausalConv, std::move(y), {ix, ik},
                    [ix, ik, len, ch, taps](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.upstream(self);
                        const Tensor& xv = tp.value(ix);
                        const Tensor& kv = tp.value(ik);
                        if (tp.requires_grad(ik)) {
                            Tensor& gk = tp.grad_buffer(ik);
                            for (std::size_t k = 0; k < taps; ++k) {
                                double s = 0.0;
                                for (std::size_t n = k; n < len; ++n)
                                    for (std::size_t c = 0; c < ch; ++c)
                                        s += g.ptr()[n * ch + c] * xv.ptr()[(n - k) * ch + c];
                                gk[k] += s;
                            }
                        }
                        if (tp.requires_grad(ix)) {
                            Tensor& gx = tp.grad_buffer(ix);
                            for (std::size_t m = 0; m < len; ++m) {
                                const std::size_t kmax = std::min(taps, len - m);
                                for (std::size_t k = 0; k < kmax; ++k)
                                    for (std::size_t c = 0; c < ch; ++c)
                                        gx.ptr()[m * ch + c] += kv[k] * g.ptr()[(m + k) * ch + c];
                            }
                        }
                    });
}

// ---------------------------------------------------------------- structural

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape& t = tape_of(OpKind::Concat, parts[0]);
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw std::invalid_argument("concat: operands are not on the same tape");
        ids.push_back(p.id());
    }
    const Shape& s0 = parts[0].shape();
    if (s0.size() <= 1) {
        if (axis != 0) rank_error(OpKind::Concat, s0, "axis 0 for vectors");
        std::vector<double> out;
        std::vector<std::size_t> sizes;
        for (const Var& p : parts) {
            if (p.shape().size() > 1) shape_error(OpKind::Concat, s0, p.shape());
            out.insert(out.end(), p.value().data().begin(), p.value().data().end());
            sizes.push_back(p.value().size());
        }
        return t.record(OpKind::Concat, Tensor::vector(std::move(out)), ids, [ids, sizes](Tape& tp, std::size_t self) {
            const Tensor& g = tp.upstream(self);
            std::size_t off = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (tp.requires_grad(ids[i])) {
                    Tensor gi(tp.value(ids[i]).shape());
                    std::copy_n(g.ptr() + off, sizes[i], gi.ptr());
                    tp.accumulate(ids[i], gi);
                }
                off += sizes[i];
            }
        });
    }
    if (s0.size() != 2 || axis > 1) rank_error(OpKind::Concat, s0, "matrices with axis 0 or 1");
    const std::size_t other = 1 - axis;
    std::size_t total = 0;
    std::vector<std::size_t> extents;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 2 || s[other] != s0[other]) shape_error(OpKind::Concat, s0, s);
        extents.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    Tensor y(out_shape);
    const std::size_t rows = out_shape[0], cols = out_shape[1];
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor& pv = parts[i].value();
        const std::size_t pr = pv.shape()[0], pc = pv.shape()[1];
        for (std::size_t r = 0; r < pr; ++r)
            for (std::size_t c = 0; c < pc; ++c) {
                const std::size_t rr = axis == 0 ? r + off : r;
                const std::size_t cc = axis == 1 ? c + off : c;
                y.ptr()[rr * cols + cc] = pv.ptr()[r * pc + c];
            }
        off += extents[i];
    }
    (void)rows;
    return t.record(OpKind::Concat, std::move(y), ids, [ids, extents, axis, cols](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        std::size_t off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (tp.requires_grad(ids[i])) {
                Tensor gi(tp.value(ids[i]).shape());
                const std::size_t pr = gi.shape()[0], pc = gi.shape()[1];
                for (std::size_t r = 0; r < pr; ++r)
                    for (std::size_t c = 0; c < pc; ++c) {
                        const std::size_t rr = axis == 0 ? r + off : r;
                        const std::size_t cc = axis == 1 ? c + off : c;
                        gi.ptr()[r * pc + c] = g.ptr()[rr * cols + cc];
                    }
                tp.accumulate(ids[i], gi);
            }
            off += extents[i];
        }
    });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
    Tape& t = tape_of(OpKind::Slice, x);
    const Tensor& xv = x.value();
    if (xv.rank() == 0 || xv.rank() > 2 || axis >= xv.rank() || begin > end || end > xv.shape()[axis]) {
        throw std::invalid_argument(std::string("slice: range [") + std::to_string(begin) + "," +
                                    std::to_string(end) + ") on axis " + std::to_string(axis) + " of shape " +
                                    shape_string(xv.shape()));
    }
    const std::size_t rows = xv.rank() == 2 ? xv.shape()[0] : 1;
    const std::size_t cols = xv.rank() == 2 ? xv.shape()[1] : xv.shape()[0];
    // Normalize to a row range and a column range over a (rows, cols) view.
    const bool vec = xv.rank() == 1;
    const std::size_t r0 = (!vec && axis == 0) ? begin : 0, r1 = (!vec && axis == 0) ? end : rows;
    const std::size_t c0 = (vec || axis == 1) ? begin : 0, c1 = (vec || axis == 1) ? end : cols;
    Shape out_shape = xv.shape();
    out_shape[axis] = end - begin;
    Tensor y(out_shape);
    const std::size_t oc = c1 - c0;
    for (std::size_t r = r0; r < r1; ++r)
        std::copy_n(xv.ptr() + r * cols + c0, oc, y.ptr() + (r - r0) * oc);
    const auto ix = x.id();
    return t.record(OpKind::Slice, std::move(y), {ix}, [ix, r0, r1, c0, oc, cols](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = 0; c < oc; ++c) gx.ptr()[r * cols + c0 + c] += g.ptr()[(r - r0) * oc + c];
    });
}

Var transpose(Var x) {
    Tape& t = tape_of(OpKind::Transpose, x);
    const Tensor& xv = x.value();
    if (xv.rank() != 2) rank_error(OpKind::Transpose, xv.shape(), "a matrix");
    const std::size_t r = xv.shape()[0], c = xv.shape()[1];
    Tensor y(Shape{c, r});
    MatMap(y.ptr(), c, r) = ConstMatMap(xv.ptr(), r, c).transpose();
    const auto ix = x.id();
    return t.record(OpKind::Transpose, std::move(y), {ix}, [ix, r, c](Tape& tp, std::size_t self) {
        Tensor& gx = tp.grad_buffer(ix);
        MatMap(gx.ptr(), r, c) += ConstMatMap(tp.upstream(self).ptr(), c, r).transpose();
    });
}

Var reshape(Var x, Shape shape) {
    Tape& t = tape_of(OpKind::Reshape, x);
    if (shape_size(shape) != x.value().size()) shape_error(OpKind::Reshape, x.shape(), shape);
    Tensor y(std::move(shape), x.value().data());
    const auto ix = x.id();
    return t.record(OpKind::Reshape, std::move(y), {ix}, [ix](Tape& tp, std::size_t self) {
        Tensor g(tp.value(ix).shape(), tp.upstream(self).data());
        tp.accumulate(ix, g);
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = same_tape(OpKind::LayerNorm, x, gain);
    same_tape(OpKind::LayerNorm, x, bias);
    const Tensor& xv = x.value();
    if (xv.rank() > 2) rank_error(OpKind::LayerNorm, xv.shape(), "rank <= 2");
    auto [r, c] = as_rows(xv);
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) shape_error(OpKind::LayerNorm, xv.shape(), gain.shape());
    Tensor y(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(r);
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = xv.ptr() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += in[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (in[j] - mu) * inv_std[i];
            xhat.ptr()[i * c + j] = h;
            y.ptr()[i * c + j] = h * gv[j] + bv[j];
        }
    }
    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.record(OpKind::LayerNorm, std::move(y), {ix, ig, ib},
                    [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                                            std::size_t self) {
                        const Tensor& g = tp.upstream(self);
                        const Tensor& gv = tp.value(ig);
                        if (tp.requires_grad(ig)) {
                            Tensor& gg = tp.grad_buffer(ig);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gg[j] += g.ptr()[i * c + j] * xhat.ptr()[i * c + j];
                        }
                        if (tp.requires_grad(ib)) {
                            Tensor& gb = tp.grad_buffer(ib);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb[j] += g.ptr()[i * c + j];
                        }
                        if (tp.requires_grad(ix)) {
                            Tensor& gx = tp.grad_buffer(ix);
                            const double n = static_cast<double>(c);
                            for (std::size_t i = 0; i < r; ++i) {
                                double m1 = 0.0, m2 = 0.0;
                                for (std::size_t j = 0; j < c; ++j) {
                                    const double dh = g.ptr()[i * c + j] * gv[j];
                                    m1 += dh;
                                    m2 += dh * xhat.ptr()[i * c + j];
                                }
                                m1 /= n;
                                m2 /= n;
                                for (std::size_t j = 0; j < c; ++j) {
                                    const double dh = g.ptr()[i * c + j] * gv[j];
                                    gx.ptr()[i * c + j] += inv_std[i] * (dh - m1 - xhat.ptr()[i * c + j] * m2);
                                }
                            }
                        }
                    });
}

Var add_row_vector(Var m, Var v) {
    Tape& t = same_tape(OpKind::AddRowVec, m, v);
    const Tensor& mv = m.value();
    if (mv.rank() != 2 || v.shape() != Shape{mv.shape()[1]}) shape_error(OpKind::AddRowVec, mv.shape(), v.shape());
    const std::size_t r = mv.shape()[0], c = mv.shape()[1];
    Tensor y = mv;
    const Tensor& vv = v.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y.ptr()[i * c + j] += vv[j];
    const auto im = m.id(), iv = v.id();
    return t.record(OpKind::AddRowVec, std::move(y), {im, iv}, [im, iv, r, c](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        tp.accumulate(im, g);
        if (tp.requires_grad(iv)) {
            Tensor& gv = tp.grad_buffer(iv);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += g.ptr()[i * c + j];
        }
    });
}

Var mean_rows(Var m) {
    Tape& t = tape_of(OpKind::MeanRows, m);
    const Tensor& mv = m.value();
    if (mv.rank() != 2 || mv.shape()[0] == 0) rank_error(OpKind::MeanRows, mv.shape(), "a non-empty matrix");
    const std::size_t r = mv.shape()[0], c = mv.shape()[1];
    Tensor y(Shape{c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y[j] += mv.ptr()[i * c + j];
    for (auto& v : y.data()) v /= static_cast<double>(r);
    const auto im = m.id();
    return t.record(OpKind::MeanRows, std::move(y), {im}, [im, r, c](Tape& tp, std::size_t self) {
        const Tensor& g = tp.upstream(self);
        Tensor& gm = tp.grad_buffer(im);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gm.ptr()[i * c + j] += g[j] / static_cast<double>(r);
    });
}

}  // namespace wavelab::ad
