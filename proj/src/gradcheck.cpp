#include "wavelab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace wavelab::ad {

namespace {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t max_count) {
    std::vector<std::size_t> idx;
    if (max_count == 0 || max_count >= n) {
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        return idx;
    }
    for (std::size_t j = 0; j < max_count; ++j) idx.push_back((j * (n - 1)) / std::max<std::size_t>(1, max_count - 1));
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

void update(GradCheckResult& res, double err, const std::string& where) {
    ++res.coordinates;
    if (res.worst.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = where;
    }
}

}  // namespace

GradCheckResult finite_difference_check(const LeafFunction& f, std::vector<Tensor> inputs, double eps) {
    auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(inputs.size());
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
        Var out = f(tape, leaves);
        if (with_grad) {
            tape.backward(out);
            for (const Var& l : leaves) grads->push_back(tape.grad(l));
        }
        return out.item();
    };

    std::vector<Tensor> analytic;
    evaluate(true, &analytic);

    GradCheckResult res;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + eps;
            const double fp = evaluate(false, nullptr);
            inputs[k][i] = orig - eps;
            const double fm = evaluate(false, nullptr);
            inputs[k][i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            update(res, relative_error(analytic[k][i], numeric),
                   "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
        }
    }
    return res;
}

GradCheckResult finite_difference_check(const ParamFunction& f, ParameterStore& store, double eps,
                                        std::size_t max_per_param) {
    store.zero_grad();
    {
        Tape tape;
        Var out = f(tape);
        tape.backward(out);
        tape.collect_param_grads();
    }
    auto evaluate = [&] {
        Tape tape;
        return f(tape).item();
    };

    GradCheckResult res;
    for (auto& p : store.items()) {
        if (!p.trainable) continue;
        for (std::size_t i : sample_indices(p.value.size(), max_per_param)) {
            const double orig = p.value[i];
            p.value[i] = orig + eps;
            const double fp = evaluate();
            p.value[i] = orig - eps;
            const double fm = evaluate();
            p.value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            update(res, relative_error(p.grad[i], numeric), p.name + "[" + std::to_string(i) + "]");
        }
    }
    return res;
}

}  // namespace wavelab::ad
