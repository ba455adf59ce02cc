#pragma once

// Training objective: trade loss + ROI hinge + capped Sharpe term + wavelet
// regularizer. Positions inside every return-based term are the unclamped
// w = tanh(p/2).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/autodiff.hpp"
#include "wavelab/wavelet.hpp"

namespace wavelab::objective {

enum class TradeLoss { SoftLabel, SigmoidHard, Tanh, Mse, Mae };

const char* to_string(TradeLoss mode);
TradeLoss trade_loss_from_string(const std::string& s);

struct LossConfig {
    TradeLoss mode = TradeLoss::SoftLabel;
    double k = 45.0;
    double lambda_roi = 0.5;
    double r_ann_max = 1.0;
    double h_year = 1638.0;
    double alpha = 1.0;
    double K = 1638.0;  // 252 trading days x 6.5 hourly bars
    double eps = 1e-8;
    double lambda_spec = 10.0;
    bool penalty_enabled = true;
    bool sharpe_enabled = true;
    bool wavelet_enabled = true;

    void validate() const;
};

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

// y = sigmoid(k * l)
Tensor soft_targets(std::span<const double> log_returns, double k);

// mean(softplus(p) - y p), the cross-entropy against soft targets y.
ad::Var loss_soft_label(ad::Var logits, ad::Var targets);
// mean of |l| * (-log sigmoid(p)) on up bars and |l| * (-log(1 - sigmoid(p))) on down bars.
ad::Var loss_sigmoid_hard(ad::Var logits, std::span<const double> simple_returns, std::span<const double> log_returns);
// -exp(sum tanh(p) l), exponent clamped at 50; *saturated reports the clamp.
ad::Var loss_tanh(ad::Var logits, ad::Var log_returns, bool* saturated = nullptr);
ad::Var loss_regression(ad::Var logits, ad::Var log_returns, TradeLoss mode);

inline constexpr double kTanhExponentCap = 50.0;

double roi_threshold(double horizon, double r_ann_max, double h_year);

// lambda * max(exp(sum w l) - 1 - T_B, 0)^2
ad::Var roi_penalty(ad::Var positions, ad::Var log_returns, double lambda_roi, double threshold);

// exp(-alpha * min(3/sqrt(K), mean/(std + eps))) over per-step strategy returns.
ad::Var sharpe_regularizer(ad::Var strategy_returns, double alpha, double K, double eps);
inline double sharpe_cap(double K) { return 3.0 / std::sqrt(K); }

// Evaluation-only direction score -exp(sum sign(p) l).
double sign_direction_score(std::span<const double> logits, std::span<const double> log_returns);

struct LossBreakdown {
    ad::Var trade, penalty, sharpe, wavelet, total;
    double batch_sharpe = 0.0;
    double batch_roi = 0.0;
    bool tanh_saturated = false;

    nlohmann::json values() const;
};

struct LossInputs {
    ad::Var logits;                      // (B)
    std::span<const double> log_returns;     // next-bar l for each sample
    std::span<const double> simple_returns;  // next-bar r for each sample
    const wavelet::WaveletTerms* wavelet = nullptr;
};

LossBreakdown total_loss(ad::Tape& tape, const LossInputs& in, const LossConfig& cfg);

}  // namespace wavelab::objective
