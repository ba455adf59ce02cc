#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "wavelab/autodiff.hpp"

namespace wavelab::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data()) v = u(rng);
    return t;
}

// Central-difference gradient of a scalar function of one tensor, evaluated
// without the tape's backward machinery.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double eps = 1e-6) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double fp = f(x);
        x[i] = orig - eps;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    }
    return m;
}

// Analytic gradient of unary(x) reduced by a weighted sum, for op-level checks.
inline Tensor analytic_gradient(const std::function<ad::Var(ad::Var)>& op, const Tensor& x, const Tensor& weights) {
    ad::Tape tape;
    ad::Var xv = tape.leaf(x);
    ad::Var w = tape.constant(weights);
    ad::Var y = ad::sum(ad::mul(op(xv), w));
    tape.backward(y);
    return tape.grad(xv);
}

inline double weighted_value(const std::function<ad::Var(ad::Var)>& op, const Tensor& x, const Tensor& weights) {
    ad::Tape tape(false);
    ad::Var xv = tape.constant(x);
    return ad::sum(ad::mul(op(xv), tape.constant(weights))).item();
}

}  // namespace wavelab::testing
