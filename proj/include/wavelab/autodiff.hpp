#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape owns an append-only list of nodes. Every op records its forward
// value, its input node ids and a backward rule. Vars are cheap handles into
// one tape. No broadcasting is performed anywhere: ops that combine tensors of
// different shapes (bias add, scalar gating, row means) are explicit kinds.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavelab/tensor.hpp"

namespace wavelab::ad {

enum class OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    ScaleBy,
    AddScalar,
    Sum,
    Mean,
    Variance,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Softplus,
    Gelu,
    Sin,
    Abs,
    Square,
    Sqrt,
    SoftmaxRows,
    MaxConst,
    MinConst,
    Matmul,
    Matvec,
    CausalConv,
    Concat,
    Slice,
    Transpose,
    Reshape,
    LayerNorm,
    AddRowVec,
    MeanRows,
};

const char* op_name(OpKind kind);

class Tape;

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Named learnable array. Values live here between tapes; a forward pass binds
// each parameter to a leaf node once per tape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

class ParameterStore {
public:
    Parameter& add(std::string name, Tensor init, bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::deque<Parameter>& items() { return params_; }
    const std::deque<Parameter>& items() const { return params_; }

    // Number of scalar entries; trainable_only skips frozen parameters.
    std::size_t count(bool trainable_only = false) const;
    void zero_grad();

    std::vector<double> flatten() const;
    void unflatten(std::span<const double> values);

private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    // A tape with gradients disabled binds every parameter as a constant, so
    // forward passes record no backward rules.
    explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value);
    // Binds a parameter (memoized per tape). Frozen parameters become constants.
    Var param(Parameter& p);

    // Seeds d(root)/d(root) = 1 and propagates in reverse recording order.
    void backward(Var root);

    // Gradient of the last backward root w.r.t. v; zeros if v was unreachable.
    Tensor grad(Var v) const;
    // Copies gradients of every bound parameter into Parameter::grad.
    void collect_param_grads();

    std::size_t size() const { return nodes_.size(); }

    // Op-implementation interface.
    Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    OpKind kind(std::size_t id) const { return nodes_[id].kind; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const Tensor& upstream(std::size_t id) const { return grads_[id]; }
    // Adds g into the gradient buffer of node id, if that node requires grad.
    void accumulate(std::size_t id, const Tensor& g);
    Tensor& grad_buffer(std::size_t id);

private:
    struct Node {
        OpKind kind;
        Tensor value;
        std::vector<std::size_t> inputs;
        bool requires_grad;
        BackwardFn backward;
    };

    bool grad_enabled_ = true;
    std::deque<Node> nodes_;  // deque keeps value() references valid while recording
    std::vector<Tensor> grads_;
    std::unordered_map<const Parameter*, std::size_t> bound_;
    std::vector<Parameter*> bound_order_;
};

// Elementwise binary ops; shapes must match exactly.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var x, double c);
Var scale_by(Var s, Var x);  // scalar Var times tensor
Var add_scalar(Var x, double c);

Var sum(Var x);
Var mean(Var x);
Var variance(Var x);  // population variance over all entries

Var exp(Var x);
Var log(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var gelu(Var x);  // exact erf form
Var sin(Var x);
Var abs(Var x);
Var square(Var x);
Var sqrt(Var x);

Var softmax_rows(Var x);     // softmax over the last axis
Var max_const(Var x, double c);  // gradient passes only where x > c
Var min_const(Var x, double c);  // gradient passes only where x < c
Var hinge(Var x);                // max_const(x, 0)

Var matmul(Var a, Var b);  // (m,k) x (k,n)
Var matvec(Var a, Var x);  // (m,k) x (k)
// y[n] = sum_k theta[k] * x[n-k] with zeros for n-k < 0; x is (T) or (T,d)
// and each column is filtered independently.
Var causal_conv(Var x, Var theta);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var transpose(Var x);
Var reshape(Var x, Shape shape);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // per row
Var add_row_vector(Var m, Var v);  // m (r,c) + v (c) on every row
Var mean_rows(Var m);              // (r,c) -> (c)

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace wavelab::ad
