#pragma once

// Low-guided high-frequency injection: the attention map is computed from the
// low-frequency branch only and carries high-frequency values into a
// sigmoid-gated residual, Y = L + sigmoid(gamma) * A(L) (H W_V) W_O.

#include <cstddef>
#include <optional>
#include <random>
#include <string>

#include "wavelab/autodiff.hpp"

namespace wavelab::lghi {

inline constexpr double kGateInit = -5.0;

struct LghiParams {
    ad::Var w_q;    // (d_model, d_k)
    ad::Var w_k;    // (d_model, d_k)
    ad::Var w_v;    // (d_model, d_v)
    ad::Var w_o;    // (d_v, d_model)
    ad::Var gamma;  // scalar gate logit
};

void register_params(ad::ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_k,
                     std::size_t d_v, std::mt19937_64& rng, double gamma_init = kGateInit);
LghiParams bind(ad::Tape& tape, ad::ParameterStore& store, const std::string& prefix);

// softmax((L W_Q)(L W_K)^T / sqrt(d_k)) row-wise, (T, T).
ad::Var attention_map(ad::Var low, ad::Var w_q, ad::Var w_k);

// A(L) (H W_V) W_O
ad::Var inject(ad::Var low, ad::Var high, const LghiParams& p);

// L + beta * inject(L, H); beta = sigmoid(gamma) unless frozen_beta is set.
ad::Var fuse(ad::Var low, ad::Var high, const LghiParams& p, std::optional<double> frozen_beta = std::nullopt);

double gate(double gamma);

// Concatenation baseline: [L ; H] W_1 W_2 with hidden width chosen so the
// weight count matches the four LGHI projections.
std::size_t concat_hidden(std::size_t d_model);
void register_concat(ad::ParameterStore& store, const std::string& prefix, std::size_t d_model, std::mt19937_64& rng);
ad::Var concat_fuse(ad::Var low, ad::Var high, ad::Tape& tape, ad::ParameterStore& store, const std::string& prefix);

// Xavier-uniform matrix.
Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

}  // namespace wavelab::lghi
