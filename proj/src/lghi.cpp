#include "wavelab/lghi.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace wavelab::lghi {

using ad::Var;

Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(Shape{rows, cols});
    for (auto& v : t.data()) v = u(rng);
    return t;
}

void register_params(ad::ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_k,
                     std::size_t d_v, std::mt19937_64& rng, double gamma_init) {
    if (d_k == 0 || d_v == 0) throw std::invalid_argument("lghi: d_k and d_v must be positive");
    store.add(prefix + ".w_q", xavier(d_model, d_k, rng));
    store.add(prefix + ".w_k", xavier(d_model, d_k, rng));
    store.add(prefix + ".w_v", xavier(d_model, d_v, rng));
    store.add(prefix + ".w_o", xavier(d_v, d_model, rng));
    store.add(prefix + ".gamma", Tensor::scalar(gamma_init));
}

LghiParams bind(ad::Tape& tape, ad::ParameterStore& store, const std::string& prefix) {
    return {tape.param(store.get(prefix + ".w_q")), tape.param(store.get(prefix + ".w_k")),
            tape.param(store.get(prefix + ".w_v")), tape.param(store.get(prefix + ".w_o")),
            tape.param(store.get(prefix + ".gamma"))};
}

Var attention_map(Var low, Var w_q, Var w_k) {
    const double dk = static_cast<double>(w_q.shape().at(1));
    Var q = ad::matmul(low, w_q);
    Var k = ad::matmul(low, w_k);
    return ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(dk)));
}

Var inject(Var low, Var high, const LghiParams& p) {
    if (low.shape().size() != 2 || low.shape() != high.shape()) {
        throw std::invalid_argument("lghi inject: shape mismatch " + shape_string(low.shape()) + " vs " +
                                    shape_string(high.shape()));
    }
    Var a = attention_map(low, p.w_q, p.w_k);
    return ad::matmul(ad::matmul(a, ad::matmul(high, p.w_v)), p.w_o);
}

Var fuse(Var low, Var high, const LghiParams& p, std::optional<double> frozen_beta) {
    Var z = inject(low, high, p);
    Var beta = frozen_beta ? low.tape()->constant(Tensor::scalar(*frozen_beta)) : ad::sigmoid(p.gamma);
    return ad::add(low, ad::scale_by(beta, z));
}

double gate(double gamma) { return 1.0 / (1.0 + std::exp(-gamma)); }

std::size_t concat_hidden(std::size_t d_model) { return (4 * d_model + 2) / 3; }

void register_concat(ad::ParameterStore& store, const std::string& prefix, std::size_t d_model, std::mt19937_64& rng) {
    const std::size_t h = concat_hidden(d_model);
    store.add(prefix + ".w_1", xavier(2 * d_model, h, rng));
    store.add(prefix + ".w_2", xavier(h, d_model, rng));
}

Var concat_fuse(Var low, Var high, ad::Tape& tape, ad::ParameterStore& store, const std::string& prefix) {
    const std::array<Var, 2> parts{low, high};
    Var cat = ad::concat(parts, 1);
    Var w1 = tape.param(store.get(prefix + ".w_1"));
    Var w2 = tape.param(store.get(prefix + ".w_2"));
    return ad::matmul(ad::matmul(cat, w1), w2);
}

}  // namespace wavelab::lghi
